"""Ground-truth matching, uncertainty-filtered counting, TP/FP separation
statistics, score/uncertainty histograms and precision-recall curves.

Matching is the standard greedy rule: detections in descending score order
each claim the unclaimed same-class ground-truth box with highest IoU at or
above the gate. Verdicts are assigned once per record set; the filtering
and PR sweeps then count surviving records, which is what makes tightening
a threshold monotone in both TP and FP counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Detection, GroundTruthBox, UncertaintyScore, bbox_iou
from .util import fmt_float

__all__ = [
    "EvalRecord",
    "FilterCounts",
    "MatchResult",
    "PrCurve",
    "SeparationRow",
    "SeparationTable",
    "build_eval_records",
    "filtered_counts",
    "histogram",
    "match_to_gt",
    "pr_curve",
    "separation_stats",
]


@dataclass(frozen=True)
class MatchResult:
    """Verdict per detection (input order) plus which ground truth each TP
    claimed and which ground truths were found at all (False = FN)."""

    verdicts: tuple[str, ...]
    matched_gt: tuple[int | None, ...]
    gt_detected: tuple[bool, ...]

    @property
    def n_tp(self) -> int:
        return sum(1 for v in self.verdicts if v == "TP")

    @property
    def n_fp(self) -> int:
        return sum(1 for v in self.verdicts if v == "FP")

    @property
    def n_fn(self) -> int:
        return sum(1 for d in self.gt_detected if not d)


def match_to_gt(
    dets: list[Detection], gts: list[GroundTruthBox], iou_thr: float = 0.5
) -> MatchResult:
    """Greedy score-descending matching; ties in score keep input order,
    ties in IoU claim the lower ground-truth index."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    verdicts: list[str] = ["FP"] * len(dets)
    matched: list[int | None] = [None] * len(dets)
    claimed = [False] * len(gts)
    for di in order:
        det = dets[di]
        best_gi, best_iou = None, 0.0
        for gi, gt in enumerate(gts):
            if claimed[gi] or gt.class_id != det.class_id:
                continue
            iou = bbox_iou(det.bbox, gt.bbox)
            if iou >= iou_thr and iou > best_iou:
                best_gi, best_iou = gi, iou
        if best_gi is not None:
            claimed[best_gi] = True
            verdicts[di] = "TP"
            matched[di] = best_gi
    return MatchResult(
        verdicts=tuple(verdicts),
        matched_gt=tuple(matched),
        gt_detected=tuple(claimed),
    )


@dataclass(frozen=True)
class EvalRecord:
    """One detection joined with its uncertainty score and verdict."""

    image_id: str
    class_id: int
    score: float
    u_class: float
    u_bbox: float
    u_combined: float
    verdict: str
    n_matched_runs: int = 0
    coord_variances: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.verdict not in ("TP", "FP"):
            raise ValueError(f"verdict must be TP or FP: {self.verdict!r}")


def build_eval_records(
    per_image: dict[str, list[tuple[Detection, UncertaintyScore]]],
    gts_per_image: dict[str, list[GroundTruthBox]],
    iou_thr: float = 0.5,
) -> tuple[list[EvalRecord], int]:
    """Join scored detections with ground truth; returns (records, total
    ground-truth count), the denominator every recall needs."""
    records: list[EvalRecord] = []
    n_gt = 0
    for image_id in sorted(set(per_image) | set(gts_per_image)):
        scored = per_image.get(image_id, [])
        gts = gts_per_image.get(image_id, [])
        n_gt += len(gts)
        result = match_to_gt([d for d, _ in scored], gts, iou_thr)
        for (det, unc), verdict in zip(scored, result.verdicts):
            records.append(
                EvalRecord(
                    image_id=image_id,
                    class_id=det.class_id,
                    score=det.score,
                    u_class=unc.u_class,
                    u_bbox=unc.u_bbox,
                    u_combined=unc.u_combined,
                    verdict=verdict,
                    n_matched_runs=unc.n_matched_runs,
                    coord_variances=unc.coord_variances,
                )
            )
    return records, n_gt


@dataclass(frozen=True)
class FilterCounts:
    tp: int
    fp: int

    @property
    def ratio(self) -> float:
        """TP/FP; infinity marker when no false positives survive."""
        return math.inf if self.fp == 0 else self.tp / self.fp


def _keep(r: EvalRecord, conf_thr: float, u_thr: float | None) -> bool:
    return r.score >= conf_thr and (u_thr is None or r.u_combined <= u_thr)


def filtered_counts(
    records: list[EvalRecord], conf_thr: float, u_thr: float | None = None
) -> FilterCounts:
    """TP/FP counts after confidence gating and optional uncertainty
    filtering (keep when u_combined <= u_thr)."""
    tp = sum(1 for r in records if r.verdict == "TP" and _keep(r, conf_thr, u_thr))
    fp = sum(1 for r in records if r.verdict == "FP" and _keep(r, conf_thr, u_thr))
    return FilterCounts(tp=tp, fp=fp)


@dataclass(frozen=True)
class SeparationRow:
    metric: str
    tp_mean: float | None
    fp_mean: float | None

    @property
    def separation(self) -> float | None:
        """FP mean / TP mean; None when either side is missing, infinity
        when TPs are exactly stable."""
        if self.tp_mean is None or self.fp_mean is None:
            return None
        if self.tp_mean == 0.0:
            return math.inf
        return self.fp_mean / self.tp_mean


@dataclass(frozen=True)
class SeparationTable:
    rows: tuple[SeparationRow, ...]
    notes: tuple[str, ...]


_COORD_METRICS = ("x", "y", "w", "h")


def separation_stats(records: list[EvalRecord]) -> SeparationTable:
    """Mean per-coordinate and score variances split by verdict, with the
    FP/TP separation per metric.

    Coordinate rows use only records that carry per-coordinate variances
    (i.e. enough matched runs); a verdict class with no records simply has
    its column omitted, with a note.
    """
    notes: list[str] = []
    by_verdict = {
        "TP": [r for r in records if r.verdict == "TP"],
        "FP": [r for r in records if r.verdict == "FP"],
    }
    for verdict, group in by_verdict.items():
        if not group:
            notes.append(f"no {verdict} records; {verdict} column omitted")

    def mean_or_none(values: list[float]) -> float | None:
        return float(np.mean(values)) if values else None

    rows: list[SeparationRow] = []
    for ci, metric in enumerate(_COORD_METRICS):
        cols = {}
        for verdict, group in by_verdict.items():
            vals = [r.coord_variances[ci] for r in group if r.coord_variances is not None]
            cols[verdict] = mean_or_none(vals)
        rows.append(SeparationRow(metric=metric, tp_mean=cols["TP"], fp_mean=cols["FP"]))
    rows.append(
        SeparationRow(
            metric="conf",
            tp_mean=mean_or_none([r.u_class for r in by_verdict["TP"]]),
            fp_mean=mean_or_none([r.u_class for r in by_verdict["FP"]]),
        )
    )
    return SeparationTable(rows=tuple(rows), notes=tuple(notes))


@dataclass(frozen=True)
class PrCurve:
    """(threshold, precision, recall) triples over an ascending confidence
    grid, plus trapezoidal area under precision over recall. With no kept
    detections at a threshold, precision is defined as 1."""

    points: tuple[tuple[float, float, float], ...]
    auc: float


def pr_curve(
    records: list[EvalRecord],
    n_gt: int,
    thresholds,
    u_thr: float | None = None,
) -> PrCurve:
    grid = [float(t) for t in thresholds]
    if not grid:
        raise ValueError("threshold grid must be non-empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("threshold grid must be sorted ascending")
    if n_gt == 0:
        raise ValueError("recall undefined: no ground truths")

    kept = [r for r in records if u_thr is None or r.u_combined <= u_thr]
    points = []
    for thr in grid:
        tp = sum(1 for r in kept if r.verdict == "TP" and r.score >= thr)
        fp = sum(1 for r in kept if r.verdict == "FP" and r.score >= thr)
        precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
        recall = tp / n_gt
        points.append((thr, precision, recall))

    # Trapezoid over recall, anchored at recall 0 by flat extension of the
    # lowest-recall point (grids that never empty the detections would
    # otherwise under-report).
    by_recall = sorted(((r, p) for _, p, r in points))
    if by_recall and by_recall[0][0] > 0.0:
        by_recall.insert(0, (0.0, by_recall[0][1]))
    auc = 0.0
    for (r0, p0), (r1, p1) in zip(by_recall, by_recall[1:]):
        auc += (r1 - r0) * (p0 + p1) / 2.0
    return PrCurve(points=tuple(points), auc=auc)


def histogram(records: list[EvalRecord], bins: int = 40):
    """Uncertainty histogram split by verdict: (lo, hi, tp_count, fp_count)
    rows over [0, max(u_combined)]."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    us = [r.u_combined for r in records]
    hi = max(us) if us else 0.0
    if hi <= 0.0:
        hi = 1e-12
    edges = np.linspace(0.0, hi, bins + 1)
    tp = np.histogram([r.u_combined for r in records if r.verdict == "TP"], bins=edges)[0]
    fp = np.histogram([r.u_combined for r in records if r.verdict == "FP"], bins=edges)[0]
    return [
        (float(edges[i]), float(edges[i + 1]), int(tp[i]), int(fp[i]))
        for i in range(bins)
    ]


def write_pr_csv(path, curves: dict[str, PrCurve]) -> None:
    """One CSV for all sweeps; the label column distinguishes them."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label,threshold,precision,recall\n")
        for label in sorted(curves):
            for thr, precision, recall in curves[label].points:
                fh.write(
                    f"{label},{fmt_float(thr)},{fmt_float(precision)},{fmt_float(recall)}\n"
                )


def write_separation_csv(path, table: SeparationTable) -> None:
    def cell(v) -> str:
        if v is None:
            return ""
        return "inf" if math.isinf(v) else fmt_float(v)

    with open(path, "w", encoding="utf-8") as fh:
        fh.write("metric,tp_mean,fp_mean,separation\n")
        for row in table.rows:
            fh.write(
                f"{row.metric},{cell(row.tp_mean)},{cell(row.fp_mean)},{cell(row.separation)}\n"
            )
        for note in table.notes:
            fh.write(f"# {note}\n")


def write_histogram_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_lo,bin_hi,tp_count,fp_count\n")
        for lo, hi, tp, fp in rows:
            fh.write(f"{fmt_float(lo)},{fmt_float(hi)},{tp},{fp}\n")


def write_histogram_svg(path, rows, width: int = 640, height: int = 240) -> None:
    """Minimal dependency-free grouped-bar rendering of the verdict-split
    uncertainty histogram (green TP, red FP)."""
    peak = max((max(tp, fp) for _, _, tp, fp in rows), default=0) or 1
    margin = 24
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    bar_w = plot_w / max(len(rows), 1) / 2.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for i, (_, _, tp, fp) in enumerate(rows):
        x0 = margin + i * 2 * bar_w
        for j, (count, color) in enumerate(((tp, "#2a9d2a"), (fp, "#d23a3a"))):
            bh = plot_h * count / peak
            parts.append(
                f'<rect x="{x0 + j * bar_w:.2f}" y="{margin + plot_h - bh:.2f}" '
                f'width="{bar_w:.2f}" height="{bh:.2f}" fill="{color}"/>'
            )
    parts.append(
        f'<line x1="{margin}" y1="{margin + plot_h}" x2="{margin + plot_w}" '
        f'y2="{margin + plot_h}" stroke="black"/>'
    )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
