"""Inference-time uncertainty quantification via object-level color sweeps.

For each anchor detection (from the unperturbed image) the engine samples K
HSV perturbations, applies each to every anchor's box region simultaneously
(one re-detection per perturbation run, K detector calls per image),
associates the re-detections back to their anchors, and scores:

* ``u_class``: population variance of the K matched scores, where a run
  with no match contributes a fixed score (default 0; a disappearing
  detection is maximal instability evidence);
* ``u_bbox``: mean of the population variances of cx, cy, w, h over the
  matched runs only, replaced by a fixed penalty when fewer than
  ``min_matched_for_bbox`` runs matched;
* ``u_combined``: the weighted sum of the two.

A transformation-invariant detector yields exactly zero on all three:
variance across transformations is the uncertainty signal, and its absence
is the invariance ideal.

``decompose_variance`` is the simulation companion: for a detector whose
detection probability is p(theta) over a finite transformation table, it
splits the total variance of the binary detection event into the
within-transformation noise term E[p(1-p)] and the across-transformation
effect term Var(p), analytically (exact rational arithmetic) and by Monte
Carlo. For an invariant detector p is constant and the effect term
vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .bridge import DetectorAdapter
from .core import (
    BBox,
    CombineWeights,
    Detection,
    HsvParams,
    ImageFrame,
    UncertaintyScore,
    bbox_iou,
    population_variance,
)
from .transforms import TransformSampler, perturb_region_inplace, sample_params

__all__ = [
    "DecompositionReport",
    "PerturbationRunSet",
    "UqConfig",
    "associate",
    "associate_all",
    "decompose_variance",
    "run_tta",
    "score_uncertainty",
]

# Variance of a [0,1]-bounded variable never exceeds 1/4; used as the
# normalization denominator when components are rescaled to a common range.
MAX_BOUNDED_VARIANCE = 0.25


@dataclass(frozen=True)
class UqConfig:
    """Knobs of the perturb/re-detect/score loop.

    The default weights (0.25 box, 0.75 score) and threshold 0.146 are the
    published operating point for this kind of sweep; recalibrate per
    dataset with the calibration module. ``normalize_components`` rescales
    both variance components by their 0.25 upper bound before combining
    (off by default: the combination is the literal weighted sum, where raw
    box variances are typically orders of magnitude below score variances).
    """

    k: int = 8
    match_iou: float = 0.5
    weights: CombineWeights = CombineWeights(0.25, 0.75)
    u_threshold: float = 0.146
    missing_score: float = 0.0
    min_matched_for_bbox: int = 2
    bbox_penalty: float = 0.25
    normalize_components: bool = False
    rerun_scope: str = "full"
    crop_pad: float = 0.5

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if not (0.0 < self.match_iou < 1.0):
            raise ValueError(f"match_iou must be in (0, 1): {self.match_iou}")
        if not (0.0 <= self.missing_score <= 1.0):
            raise ValueError("missing_score must be in [0, 1]")
        if self.min_matched_for_bbox < 2:
            raise ValueError("min_matched_for_bbox must be >= 2")
        if self.bbox_penalty < 0.0:
            raise ValueError("bbox_penalty must be non-negative")
        if self.rerun_scope not in ("full", "crop"):
            raise ValueError(f"rerun_scope must be 'full' or 'crop': {self.rerun_scope}")
        if self.crop_pad < 0.0:
            raise ValueError("crop_pad must be non-negative")


@dataclass(frozen=True)
class PerturbationRunSet:
    """The K perturbed re-detections organized around one anchor: per run,
    the parameters applied and the matched detection (None if the object
    vanished in that run)."""

    anchor: Detection
    runs: tuple[tuple[HsvParams, Detection | None], ...]

    def __post_init__(self):
        for _, det in self.runs:
            if det is not None and det.class_id != self.anchor.class_id:
                raise ValueError("matched detection class differs from anchor class")

    @property
    def k(self) -> int:
        return len(self.runs)


def associate(
    anchor: Detection, run_dets: list[Detection], match_iou: float
) -> Detection | None:
    """Same-class detection with maximum IoU to the anchor, if that IoU
    reaches the gate; None otherwise. For multi-anchor runs use
    :func:`associate_all`, which adds the one-to-one claim rule."""
    best = None
    best_iou = 0.0
    for det in run_dets:
        if det.class_id != anchor.class_id:
            continue
        iou = bbox_iou(anchor.bbox, det.bbox)
        if iou >= match_iou and iou > best_iou:
            best, best_iou = det, iou
    return best


def associate_all(
    anchors: list[Detection], run_dets: list[Detection], match_iou: float
) -> list[Detection | None]:
    """Greedy one-to-one association for a whole run: candidate pairs sorted
    by IoU descending (ties broken by anchor then detection index) claim
    anchors and detections until none are left."""
    pairs = []
    for ai, anchor in enumerate(anchors):
        for di, det in enumerate(run_dets):
            if det.class_id != anchor.class_id:
                continue
            iou = bbox_iou(anchor.bbox, det.bbox)
            if iou >= match_iou:
                pairs.append((-iou, ai, di))
    pairs.sort()
    matched: list[Detection | None] = [None] * len(anchors)
    claimed_dets: set[int] = set()
    for neg_iou, ai, di in pairs:
        if matched[ai] is not None or di in claimed_dets:
            continue
        matched[ai] = run_dets[di]
        claimed_dets.add(di)
    return matched


def score_uncertainty(rs: PerturbationRunSet, cfg: UqConfig) -> UncertaintyScore:
    """Turn one run set into an uncertainty score (see module docstring for
    the missing-match and penalty policies)."""
    if rs.k < 2:
        raise ValueError("need at least 2 perturbation runs")

    scores = [det.score if det is not None else cfg.missing_score for _, det in rs.runs]
    u_class = population_variance(scores)

    matched = [det for _, det in rs.runs if det is not None]
    coord_variances = None
    if len(matched) >= cfg.min_matched_for_bbox:
        coord_variances = (
            population_variance([d.bbox.cx for d in matched]),
            population_variance([d.bbox.cy for d in matched]),
            population_variance([d.bbox.w for d in matched]),
            population_variance([d.bbox.h for d in matched]),
        )
        u_bbox = math.fsum(coord_variances) / 4.0
    else:
        u_bbox = cfg.bbox_penalty

    if cfg.normalize_components:
        u_class_c = u_class / MAX_BOUNDED_VARIANCE
        u_bbox_c = u_bbox / MAX_BOUNDED_VARIANCE
    else:
        u_class_c, u_bbox_c = u_class, u_bbox

    return UncertaintyScore(
        u_class=u_class_c,
        u_bbox=u_bbox_c,
        u_combined=cfg.weights.combine(u_bbox_c, u_class_c),
        n_matched_runs=len(matched),
        coord_variances=coord_variances,
    )


def _crop_window(bbox: BBox, pad: float) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = bbox.corners()
    px, py = bbox.w * pad, bbox.h * pad
    return (max(0.0, x0 - px), max(0.0, y0 - py), min(1.0, x1 + px), min(1.0, y1 + py))


def _detect_on_crop(
    frame_pixels: np.ndarray,
    image_id: str,
    window: tuple[float, float, float, float],
    adapter: DetectorAdapter,
    conf_threshold: float,
    run_index: int,
) -> list[Detection]:
    """Crop-scope re-detection: run the detector on the padded object window
    and map boxes back to full-image coordinates."""
    height, width = frame_pixels.shape[:2]
    wx0, wy0, wx1, wy1 = window
    left, top = int(math.floor(wx0 * width)), int(math.floor(wy0 * height))
    right, bottom = int(math.ceil(wx1 * width)), int(math.ceil(wy1 * height))
    right, bottom = min(right, width), min(bottom, height)
    if right <= left or bottom <= top:
        return []
    crop = ImageFrame(
        np.ascontiguousarray(frame_pixels[top:bottom, left:right]),
        image_id=f"{image_id}#crop",
    )
    dets = adapter.detect_frame(crop, conf_threshold, image_id=crop.image_id)
    sx, sy = (right - left) / width, (bottom - top) / height
    ox, oy = left / width, top / height
    mapped = []
    for d in dets:
        bbox = BBox(
            min(1.0, max(0.0, ox + d.bbox.cx * sx)),
            min(1.0, max(0.0, oy + d.bbox.cy * sy)),
            min(1.0, d.bbox.w * sx),
            min(1.0, d.bbox.h * sy),
        )
        clipped = bbox.clipped()
        if clipped is not None:
            mapped.append(
                Detection(bbox=clipped, class_id=d.class_id, score=d.score, source_run=run_index)
            )
    return mapped


def run_tta(
    image: ImageFrame,
    anchors: list[Detection],
    adapter: DetectorAdapter,
    sampler: TransformSampler,
    cfg: UqConfig,
    conf_threshold: float = 0.25,
) -> list[tuple[Detection, UncertaintyScore]]:
    """Score every anchor detection of one image.

    Full scope (default): per run k, every anchor's box region is perturbed
    with its own sampled parameters (stream key = (image_id, anchor index,
    k)) into a single image, re-detected once, and matched one-to-one.
    Overlapping regions are perturbed in anchor order, later anchors over
    earlier ones. Crop scope re-detects on a padded window around each
    anchor instead (K calls per anchor rather than per image).

    Deterministic given (image bytes, anchors, sampler seed, cfg); adapter
    failures propagate as AdapterError.
    """
    if not anchors:
        return []

    params: list[list[HsvParams]] = [
        [sample_params(sampler, (image.image_id, i, k)) for k in range(cfg.k)]
        for i in range(len(anchors))
    ]
    matches: list[list[Detection | None]] = [[None] * cfg.k for _ in anchors]

    if cfg.rerun_scope == "full":
        for k in range(cfg.k):
            pixels = image.pixels.copy()
            for i, anchor in enumerate(anchors):
                perturb_region_inplace(pixels, anchor.bbox, params[i][k])
            run_frame = ImageFrame(pixels, image_id=image.image_id)
            dets = adapter.detect_frame(run_frame, conf_threshold, image_id=image.image_id)
            dets = [
                Detection(bbox=d.bbox, class_id=d.class_id, score=d.score, source_run=k)
                for d in dets
            ]
            for i, det in enumerate(associate_all(anchors, dets, cfg.match_iou)):
                matches[i][k] = det
    else:
        for i, anchor in enumerate(anchors):
            window = _crop_window(anchor.bbox, cfg.crop_pad)
            for k in range(cfg.k):
                pixels = image.pixels.copy()
                perturb_region_inplace(pixels, anchor.bbox, params[i][k])
                dets = _detect_on_crop(
                    pixels, image.image_id, window, adapter, conf_threshold, k
                )
                matches[i][k] = associate(anchor, dets, cfg.match_iou)

    out = []
    for i, anchor in enumerate(anchors):
        rs = PerturbationRunSet(
            anchor=anchor,
            runs=tuple((params[i][k], matches[i][k]) for k in range(cfg.k)),
        )
        out.append((anchor, score_uncertainty(rs, cfg)))
    return out


@dataclass(frozen=True)
class DecompositionReport:
    """Law-of-total-variance split of the detection event, analytic and
    Monte Carlo. Analytic terms are computed in exact rational arithmetic;
    ``analytic_identity_exact`` records that noise + effect == total held
    exactly there. Standard errors come from batch means."""

    analytic_total: float
    analytic_noise: float
    analytic_effect: float
    analytic_identity_exact: bool
    mc_total: float
    mc_noise: float
    mc_effect: float
    se_total: float
    se_noise: float
    se_effect: float
    n_trials: int
    n_batches: int


def decompose_variance(
    p_table,
    n_trials: int,
    seed: int = 0,
    weights=None,
    n_batches: int = 20,
) -> DecompositionReport:
    """Estimate and exactly compute the variance decomposition of a
    detection event whose probability is ``p_table[i]`` under transformation
    i, drawn with the given weights (uniform by default).

    Monte Carlo runs ``n_trials`` simulated (transformation, coin) draws in
    ``n_batches`` batches; the batch spread yields standard errors. All
    three estimators are unbiased (the effect term is estimated as
    total - noise, which the total-variance identity makes unbiased), so
    3-standard-error agreement holds even for near-invariant tables.
    """
    ps = [float(p) for p in p_table]
    if not ps:
        raise ValueError("empty probability table")
    for p in ps:
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"probability out of range: {p}")
    if n_trials < 1000:
        raise ValueError("need at least 1000 trials for meaningful estimates")
    if weights is None:
        w_raw = [1.0] * len(ps)
    else:
        w_raw = [float(w) for w in weights]
        if len(w_raw) != len(ps) or any(w < 0 for w in w_raw) or sum(w_raw) == 0:
            raise ValueError("weights must be non-negative, same length as the table")

    # Analytic terms in exact rationals: float inputs convert exactly, so
    # noise + effect == total is checked as true equality, not a tolerance.
    wf = [Fraction(w) for w in w_raw]
    total_w = sum(wf)
    wf = [w / total_w for w in wf]
    pf = [Fraction(p) for p in ps]
    pbar = sum(w * p for w, p in zip(wf, pf))
    an_total = pbar * (1 - pbar)
    an_noise = sum(w * p * (1 - p) for w, p in zip(wf, pf))
    an_effect = sum(w * (p - pbar) ** 2 for w, p in zip(wf, pf))
    identity_exact = (an_noise + an_effect) == an_total

    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF]))
    p_arr = np.array(ps)
    w_arr = np.array([float(w) for w in wf])
    w_arr = w_arr / w_arr.sum()

    per_batch = n_trials // n_batches
    if per_batch < 10:
        raise ValueError("too few trials per batch")
    totals, noises, effects = [], [], []
    m = len(ps)
    for _ in range(n_batches):
        idx = rng.choice(m, size=per_batch, p=w_arr)
        z = (rng.random(per_batch) < p_arr[idx]).astype(np.float64)
        counts = np.bincount(idx, minlength=m).astype(np.float64)
        sums = np.bincount(idx, weights=z, minlength=m)
        # Unbiased estimators: plain plug-in moments carry an O(1/n) bias
        # that swamps tiny effect terms at 3-sigma resolution. Total uses
        # the n-1 sample variance; per-bucket noise gets the Bernoulli
        # small-sample correction; effect is the exact complement, unbiased
        # by the total-variance identity.
        multi = counts >= 2
        phat = np.zeros(m)
        phat[multi] = sums[multi] / counts[multi]
        zbar = float(z.mean())
        total = zbar * (1.0 - zbar) * per_batch / (per_batch - 1)
        wb = counts / per_batch
        noise = float(
            np.sum(
                wb[multi] * phat[multi] * (1.0 - phat[multi])
                * counts[multi] / (counts[multi] - 1.0)
            )
        )
        totals.append(total)
        noises.append(noise)
        effects.append(total - noise)

    def batch_stats(vals):
        arr = np.array(vals)
        return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(len(arr)))

    mc_total, se_total = batch_stats(totals)
    mc_noise, se_noise = batch_stats(noises)
    mc_effect, se_effect = batch_stats(effects)

    return DecompositionReport(
        analytic_total=float(an_total),
        analytic_noise=float(an_noise),
        analytic_effect=float(an_effect),
        analytic_identity_exact=identity_exact,
        mc_total=mc_total,
        mc_noise=mc_noise,
        mc_effect=mc_effect,
        se_total=se_total,
        se_noise=se_noise,
        se_effect=se_effect,
        n_trials=per_batch * n_batches,
        n_batches=n_batches,
    )
