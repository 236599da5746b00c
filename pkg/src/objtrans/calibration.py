"""Grid-search calibration of the combination weights and the uncertainty
threshold on a held-out split.

The search is exhaustive over a weight grid x a quantile-derived threshold
grid (quantiles of the observed combined uncertainties under each weight,
which makes the search invariant to the overall scale of the uncertainty
values). The default objective maximizes false-positive removal subject to
a true-positive retention floor; ties break toward higher retention, then
lower threshold, then lower box weight, so the result is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CombineWeights
from .metrics import EvalRecord
from .util import canonical_dumps

__all__ = [
    "CalibrationError",
    "CalibrationResult",
    "CalibrationSpec",
    "calibrate",
    "load_profile",
    "save_profile",
]

OBJECTIVES = ("max_fp_removed_st_tp_retention", "max_tp_fp_ratio")


class CalibrationError(Exception):
    """No grid point satisfied the constraint; carries the best infeasible
    point for diagnostics."""

    def __init__(self, message: str, best_infeasible=None):
        super().__init__(message)
        self.best_infeasible = best_infeasible


@dataclass(frozen=True)
class CalibrationSpec:
    """``u_grid`` fixes the threshold candidates explicitly; when None they
    are derived as ``u_quantiles`` quantiles of the observed combined
    uncertainties under each weight (the quantile grid always contains the
    maximum, so it is always feasible; explicit grids may not be)."""

    weight_grid: tuple[float, ...] = tuple(round(i * 0.05, 2) for i in range(21))
    u_quantiles: int = 50
    u_grid: tuple[float, ...] | None = None
    objective: str = "max_fp_removed_st_tp_retention"
    tp_retention_floor: float = 0.95

    def __post_init__(self):
        if not self.weight_grid:
            raise ValueError("weight_grid must be non-empty")
        for w in self.weight_grid:
            if not (0.0 <= w <= 1.0):
                raise ValueError(f"weight {w} outside [0, 1]")
        if self.u_quantiles < 2:
            raise ValueError("u_quantiles must be >= 2")
        if self.u_grid is not None:
            if not self.u_grid:
                raise ValueError("u_grid must be non-empty when given")
            object.__setattr__(self, "u_grid", tuple(float(u) for u in self.u_grid))
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if not (0.0 < self.tp_retention_floor <= 1.0):
            raise ValueError("tp_retention_floor must be in (0, 1]")


@dataclass(frozen=True)
class CalibrationResult:
    weights: CombineWeights
    u_threshold: float
    tp_retention: float
    fp_removal: float
    objective: str


def _evaluate(tp_u: np.ndarray, fp_u: np.ndarray, u_thr: float) -> tuple[float, float]:
    retention = float((tp_u <= u_thr).mean())
    removal = float((fp_u > u_thr).mean())
    return retention, removal


def calibrate(records: list[EvalRecord], spec: CalibrationSpec) -> CalibrationResult:
    """Exhaustive grid search; see module docstring for objective and
    tie-breaking. Raises CalibrationError when no point meets the floor."""
    tp = [r for r in records if r.verdict == "TP"]
    fp = [r for r in records if r.verdict == "FP"]
    if not tp or not fp:
        raise CalibrationError("calibration needs both TP and FP records")

    tp_c = np.array([[r.u_bbox, r.u_class] for r in tp])
    fp_c = np.array([[r.u_bbox, r.u_class] for r in fp])
    qs = np.linspace(0.0, 1.0, spec.u_quantiles)

    best_key = None
    best: CalibrationResult | None = None
    best_infeasible_key = None
    best_infeasible: CalibrationResult | None = None

    for w_bbox in spec.weight_grid:
        w = CombineWeights(w_bbox, round(1.0 - w_bbox, 12))
        tp_u = tp_c[:, 0] * w.w_bbox + tp_c[:, 1] * w.w_class
        fp_u = fp_c[:, 0] * w.w_bbox + fp_c[:, 1] * w.w_class
        if spec.u_grid is not None:
            candidates = np.unique(np.asarray(spec.u_grid))
        else:
            candidates = np.unique(np.quantile(np.concatenate([tp_u, fp_u]), qs))
        for u_thr in candidates:
            retention, removal = _evaluate(tp_u, fp_u, float(u_thr))
            point = CalibrationResult(
                weights=w,
                u_threshold=float(u_thr),
                tp_retention=retention,
                fp_removal=removal,
                objective=spec.objective,
            )
            if spec.objective == "max_fp_removed_st_tp_retention":
                feasible = retention >= spec.tp_retention_floor
                key = (removal, retention, -float(u_thr), -w_bbox)
            else:
                kept_fp = float((fp_u <= u_thr).sum())
                kept_tp = float((tp_u <= u_thr).sum())
                ratio = math.inf if kept_fp == 0 else kept_tp / kept_fp
                feasible = True
                key = (ratio, retention, -float(u_thr), -w_bbox)
            if feasible:
                if best_key is None or key > best_key:
                    best_key, best = key, point
            else:
                ikey = (retention, removal, -float(u_thr), -w_bbox)
                if best_infeasible_key is None or ikey > best_infeasible_key:
                    best_infeasible_key, best_infeasible = ikey, point

    if best is None:
        bi = best_infeasible
        raise CalibrationError(
            "no grid point satisfies the retention floor "
            f"{spec.tp_retention_floor}; best infeasible point: "
            f"w_bbox={bi.weights.w_bbox}, u_threshold={bi.u_threshold}, "
            f"retention={bi.tp_retention}, removal={bi.fp_removal}",
            best_infeasible=bi,
        )
    return best


def save_profile(result: CalibrationResult, path, metadata: dict | None = None) -> None:
    obj = {
        "w_bbox": result.weights.w_bbox,
        "w_class": result.weights.w_class,
        "u_threshold": result.u_threshold,
        "metadata": dict(metadata or {})
        | {
            "tp_retention": result.tp_retention,
            "fp_removal": result.fp_removal,
            "objective": result.objective,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_dumps(obj) + "\n")


def load_profile(path) -> tuple[CombineWeights, float, dict]:
    import json

    obj = json.loads(open(path, encoding="utf-8").read())
    return (
        CombineWeights(float(obj["w_bbox"]), float(obj["w_class"])),
        float(obj["u_threshold"]),
        obj.get("metadata", {}),
    )
