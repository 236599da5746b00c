"""Synthetic end-to-end scenarios.

Builds small scenes of solid-color rectangles on a gray background plus a
matching fragile-FP mock detector: the planted real objects keep stable
scores under color sweeps while the planted false positives ride a steep
cosine response (and optional box jitter), so their uncertainty separates.
Used by the filtering experiment script and the acceptance suite; everything
is a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationSpec, calibrate
from .colorspace import hsv_to_rgb_array
from .core import BBox, GroundTruthBox, ImageFrame
from .metrics import EvalRecord, build_eval_records, pr_curve
from .mocks import MockAdapter, MockDetectorSpec, PlantedBox
from .transforms import TransformSampler
from .uq import UqConfig, run_tta

__all__ = ["FilteringScenario", "build_filtering_scenario", "run_filtering_experiment"]

IMAGE_SIZE = 96
CELL = 32
BOX_PX = 20


@dataclass
class FilteringScenario:
    frames: dict[str, ImageFrame]
    spec: MockDetectorSpec
    gts: dict[str, list[GroundTruthBox]]


def _solid_rect(pixels: np.ndarray, left: int, top: int, hue: float) -> None:
    rgb = hsv_to_rgb_array(np.array([[hue, 0.9, 0.85]]))[0]
    pixels[top : top + BOX_PX, left : left + BOX_PX] = rgb


def _cell_box(row: int, col: int) -> tuple[int, int, BBox]:
    left = col * CELL + (CELL - BOX_PX) // 2
    top = row * CELL + (CELL - BOX_PX) // 2
    cx = (left + BOX_PX / 2) / IMAGE_SIZE
    cy = (top + BOX_PX / 2) / IMAGE_SIZE
    return left, top, BBox(cx, cy, BOX_PX / IMAGE_SIZE, BOX_PX / IMAGE_SIZE)


def build_filtering_scenario(
    seed: int,
    n_images: int = 40,
    tp_per_image: int = 2,
    fp_per_image: int = 2,
    tp_amplitude: float = 0.02,
    fp_amplitude: float = 0.5,
) -> FilteringScenario:
    """Scenes with ``tp_per_image`` stable real objects and ``fp_per_image``
    fragile spurious boxes each, on a 3x3 placement grid."""
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 0xE2E]))
    frames: dict[str, ImageFrame] = {}
    plants: dict[str, tuple[PlantedBox, ...]] = {}
    fp_plants: dict[str, tuple[PlantedBox, ...]] = {}
    gts: dict[str, list[GroundTruthBox]] = {}

    n_boxes = tp_per_image + fp_per_image
    if n_boxes > 9:
        raise ValueError("at most 9 boxes fit the placement grid")

    for idx in range(n_images):
        image_id = f"scene_{idx:03d}"
        pixels = np.full((IMAGE_SIZE, IMAGE_SIZE, 3), 96, dtype=np.uint8)
        cells = rng.permutation(9)[:n_boxes]
        tp_list, fp_list, gt_list = [], [], []
        for j, cell in enumerate(cells):
            row, col = divmod(int(cell), 3)
            left, top, bbox = _cell_box(row, col)
            hue = float(rng.uniform(0.0, 360.0))
            _solid_rect(pixels, left, top, hue)
            # phase 90 degrees off the object hue: the anchor score sits at
            # the base value and perturbations swing it along a sine.
            phase = (hue - 90.0) % 360.0
            if j < tp_per_image:
                base = float(rng.uniform(0.78, 0.95))
                tp_list.append(
                    PlantedBox(
                        bbox=bbox,
                        class_id=0,
                        score=base,
                        amplitude=tp_amplitude,
                        phase_deg=phase,
                    )
                )
                gt_list.append(GroundTruthBox(bbox=bbox, class_id=0))
            else:
                base = float(rng.uniform(0.42, 0.6))
                fp_list.append(
                    PlantedBox(
                        bbox=bbox,
                        class_id=0,
                        score=base,
                        amplitude=fp_amplitude,
                        phase_deg=phase,
                        box_jitter=0.008,
                    )
                )
        frames[image_id] = ImageFrame(pixels, image_id=image_id)
        plants[image_id] = tuple(tp_list)
        fp_plants[image_id] = tuple(fp_list)
        gts[image_id] = gt_list

    spec = MockDetectorSpec(
        kind="fragile_fp", seed=seed, plants=plants, fp_plants=fp_plants
    )
    return FilteringScenario(frames=frames, spec=spec, gts=gts)


def recombine(records: list[EvalRecord], weights) -> list[EvalRecord]:
    """Records with u_combined recomputed under different weights (the
    component variances are weight-independent)."""
    out = []
    for r in records:
        u = weights.w_bbox * r.u_bbox + weights.w_class * r.u_class
        out.append(
            EvalRecord(
                image_id=r.image_id,
                class_id=r.class_id,
                score=r.score,
                u_class=r.u_class,
                u_bbox=r.u_bbox,
                u_combined=u,
                verdict=r.verdict,
                n_matched_runs=r.n_matched_runs,
                coord_variances=r.coord_variances,
            )
        )
    return out


def run_filtering_experiment(
    seed: int,
    n_images: int = 40,
    conf_threshold: float = 0.25,
    cfg: UqConfig | None = None,
    calibration_spec: CalibrationSpec | None = None,
) -> dict:
    """Full loop: detect, sweep, score, calibrate on the first half of the
    images, evaluate retention/removal and PR area on the second half.

    Returns a flat summary dict (all floats/ints) used by the experiment
    script and the acceptance suite.
    """
    cfg = cfg or UqConfig()
    calibration_spec = calibration_spec or CalibrationSpec()
    scenario = build_filtering_scenario(seed, n_images=n_images)
    adapter = MockAdapter(scenario.spec)
    sampler = TransformSampler.inference(seed=seed)

    per_image = {}
    for image_id in sorted(scenario.frames):
        frame = scenario.frames[image_id]
        anchors = adapter.detect_frame(frame, conf_threshold)
        per_image[image_id] = run_tta(
            frame, anchors, adapter, sampler, cfg, conf_threshold=conf_threshold
        )

    records, n_gt = build_eval_records(per_image, scenario.gts)
    image_ids = sorted(scenario.frames)
    calib_ids = set(image_ids[: len(image_ids) // 2])
    calib_records = [r for r in records if r.image_id in calib_ids]
    eval_records = [r for r in records if r.image_id not in calib_ids]
    n_gt_eval = sum(len(scenario.gts[i]) for i in image_ids if i not in calib_ids)

    result = calibrate(calib_records, calibration_spec)
    tuned = recombine(eval_records, result.weights)

    tp_u = [r.u_combined for r in tuned if r.verdict == "TP"]
    fp_u = [r.u_combined for r in tuned if r.verdict == "FP"]
    kept_tp = sum(1 for u in tp_u if u <= result.u_threshold)
    removed_fp = sum(1 for u in fp_u if u > result.u_threshold)

    grid = np.linspace(0.0, 1.0, 101)
    auc_unfiltered = pr_curve(tuned, n_gt_eval, grid).auc
    auc_filtered = pr_curve(tuned, n_gt_eval, grid, u_thr=result.u_threshold).auc

    tp_var = [r.u_class for r in records if r.verdict == "TP"]
    fp_var = [r.u_class for r in records if r.verdict == "FP"]
    mean_tp_var = float(np.mean(tp_var)) if tp_var else 0.0
    mean_fp_var = float(np.mean(fp_var)) if fp_var else 0.0

    return {
        "seed": seed,
        "n_images": n_images,
        "n_gt_eval": n_gt_eval,
        "w_bbox": result.weights.w_bbox,
        "w_class": result.weights.w_class,
        "u_threshold": result.u_threshold,
        "calib_tp_retention": result.tp_retention,
        "calib_fp_removal": result.fp_removal,
        "eval_tp_retention": kept_tp / len(tp_u) if tp_u else 1.0,
        "eval_fp_removal": removed_fp / len(fp_u) if fp_u else 0.0,
        "auc_unfiltered": auc_unfiltered,
        "auc_filtered": auc_filtered,
        "mean_tp_score_variance": mean_tp_var,
        "mean_fp_score_variance": mean_fp_var,
        "score_variance_separation": (mean_fp_var / mean_tp_var) if mean_tp_var > 0 else float("inf"),
    }
