"""Batch command-line front end.

Subcommands: augment (training-set generation), uq (perturb/re-detect/score
sweep), eval (counts, PR curves, separation tables, histograms), calibrate
(weight/threshold grid search), decompose (variance decomposition demo),
bench (pipeline overhead timing). Non-interactive by design; the users are
pipelines and batch evaluations, so there is no UI.

All randomness flows from --seed through keyed streams; re-running a
command overwrites its outputs byte-identically regardless of --jobs.
Wall-clock timestamps only ever go to the run.log sidecar (and bench's
measurements, which are measurements). Exit codes: 0 success, 2
config/validation error, 3 adapter/protocol error, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics as m
from .bridge import AdapterError, AdapterPool, ProtocolError, SubprocessAdapter
from .calibration import (
    CalibrationError,
    CalibrationSpec,
    calibrate,
    save_profile,
)
from .config import ConfigError, RunConfig
from .core import BBox, CombineWeights, Detection, ImageFrame, UncertaintyScore
from .dataset import DatasetError, DatasetHandle, load_dataset, load_image
from .mocks import MockAdapter, MockDetectorSpec, PlantedBox
from .transforms import AugmentationPlan, TransformSampler, generate_augmented_dataset
from .uq import UqConfig, decompose_variance, run_tta
from .util import canonical_dumps, fmt_float

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ADAPTER = 3
EXIT_DATA = 4


def _echo_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.txt").write_text(cfg.effective_lines(), encoding="utf-8")


def _log(out: Path, message: str) -> None:
    with open(out / "run.log", "a", encoding="utf-8") as fh:
        fh.write(f"[{time.strftime('%Y-%m-%dT%H:%M:%S')}] {message}\n")


def _sampler_from(cfg: RunConfig, default_profile: str) -> TransformSampler:
    profile = cfg.get_str("sampler.profile", default_profile)
    seed = cfg.get_int("seed", 0)
    makers = {
        "training": TransformSampler.training,
        "inference": TransformSampler.inference,
        "identity": TransformSampler.identity,
    }
    if profile not in makers:
        raise ConfigError(f"sampler.profile must be one of {sorted(makers)}: {profile!r}")
    base = makers[profile](seed=seed)
    try:
        return TransformSampler(
            hue_range=cfg.get_float("sampler.hue_range", base.hue_range),
            sat_range=(
                cfg.get_float("sampler.sat_min", base.sat_range[0]),
                cfg.get_float("sampler.sat_max", base.sat_range[1]),
            ),
            val_range=(
                cfg.get_float("sampler.val_min", base.val_range[0]),
                cfg.get_float("sampler.val_max", base.val_range[1]),
            ),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(f"sampler: {exc}") from exc


def _uq_config_from(cfg: RunConfig) -> UqConfig:
    weights = cfg.get_weights()
    try:
        cw = CombineWeights(*weights) if weights else CombineWeights()
        return UqConfig(
            k=cfg.get_int("uq.k", 8),
            match_iou=cfg.get_float("uq.match_iou", 0.5),
            weights=cw,
            u_threshold=cfg.get_float("u_threshold", 0.146),
            missing_score=cfg.get_float("uq.missing_score", 0.0),
            min_matched_for_bbox=cfg.get_int("uq.min_matched_for_bbox", 2),
            bbox_penalty=cfg.get_float("uq.bbox_penalty", 0.25),
            normalize_components=cfg.get_bool("uq.normalize_components", False),
            rerun_scope=cfg.get_str("uq.rerun_scope", "full"),
            crop_pad=cfg.get_float("uq.crop_pad", 0.5),
        )
    except ValueError as exc:
        raise ConfigError(f"uq: {exc}") from exc


def _open_adapters(cfg: RunConfig, jobs: int):
    """Adapter pool per config: an external command line, or an in-process
    mock spec (pure, so a single shared instance suffices)."""
    cmd = cfg.get_str("adapter.cmd")
    mock_spec = cfg.get_str("adapter.mock_spec")
    if (cmd is None) == (mock_spec is None):
        raise ConfigError("exactly one of adapter.cmd / adapter.mock_spec is required")
    if mock_spec is not None:
        try:
            adapter = MockAdapter(MockDetectorSpec.load(mock_spec))
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"adapter.mock_spec: {exc}") from exc
        # stateless and thread-safe: hand out one lease per worker
        return AdapterPool(lambda: adapter, max(1, jobs))
    timeout = cfg.get_float("adapter.timeout", 30.0)
    image_mode = cfg.get_str("adapter.image_mode", "path")
    if image_mode not in ("path", "b64"):
        raise ConfigError(f"adapter.image_mode must be path or b64: {image_mode!r}")
    return AdapterPool(
        lambda: SubprocessAdapter(cmd, timeout=timeout, image_mode=image_mode), jobs
    )


def _splits_arg(cfg: RunConfig, handle: DatasetHandle, default: str) -> list[str]:
    split = cfg.get_str("split", default)
    if split == "all":
        return sorted(handle.splits.keys())
    if split not in handle.splits:
        raise ConfigError(f"split {split!r} not in dataset (has {sorted(handle.splits)})")
    return [split]


def cmd_augment(cfg: RunConfig) -> int:
    dataset_root = cfg.require_path("dataset")
    out = cfg.require_path("out")
    handle = load_dataset(dataset_root)
    plan = AugmentationPlan(
        transforms_per_image=cfg.get_int("augment.transforms_per_image", 14),
        classes_hsv=cfg.get_int_set("augment.classes_hsv"),
        skip_classes=cfg.get_int_set("augment.skip_classes") or frozenset(),
    )
    splits = _splits_arg(cfg, handle, "all")
    masks_dir = dataset_root / "masks"
    if plan.classes_hsv != frozenset() and not masks_dir.is_dir():
        raise ConfigError(
            f"augmentation needs instance masks but {masks_dir} does not exist"
        )
    sampler = _sampler_from(cfg, "training")
    jobs = cfg.get_int("jobs", 1)

    _echo_config(cfg, out)
    _log(out, f"augment start: dataset={dataset_root} splits={splits}")
    report = generate_augmented_dataset(handle, plan, sampler, out, splits=splits, jobs=jobs)
    (out / "report.json").write_text(
        canonical_dumps(
            {
                "images_written": report.images_written,
                "instances_perturbed": report.instances_perturbed,
                "instances_skipped": report.instances_skipped,
                "warnings": report.warnings,
            }
        )
        + "\n",
        encoding="utf-8",
    )
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(
        f"augment: wrote {report.images_written} images, perturbed "
        f"{report.instances_perturbed} instances, skipped {report.instances_skipped}"
    )
    _log(out, "augment done")
    return EXIT_OK


def _uq_record_obj(image_id: str, scored) -> dict:
    dets = []
    for det, unc in scored:
        dets.append(
            {
                "bbox": {
                    "cx": det.bbox.cx,
                    "cy": det.bbox.cy,
                    "w": det.bbox.w,
                    "h": det.bbox.h,
                },
                "class_id": det.class_id,
                "score": det.score,
                "u_class": unc.u_class,
                "u_bbox": unc.u_bbox,
                "u_combined": unc.u_combined,
                "n_matched_runs": unc.n_matched_runs,
                "u_xywh": list(unc.coord_variances) if unc.coord_variances else None,
            }
        )
    return {"image_id": image_id, "detections": dets}


def cmd_uq(cfg: RunConfig) -> int:
    dataset_root = cfg.require_path("dataset")
    out = cfg.require_path("out")
    handle = load_dataset(dataset_root)
    splits = _splits_arg(cfg, handle, "val")
    uq_cfg = _uq_config_from(cfg)
    sampler = _sampler_from(cfg, "inference")
    conf = cfg.get_float("conf", 0.25)
    jobs = max(1, cfg.get_int("jobs", 1))

    _echo_config(cfg, out)
    _log(out, f"uq start: splits={splits} k={uq_cfg.k} conf={conf}")

    stems = [(split, stem) for split in splits for stem in sorted(handle.splits[split])]

    with _open_adapters(cfg, jobs) as pool:

        def process(item):
            split, stem = item
            frame = load_image(handle, split, stem)
            with pool.lease() as adapter:
                anchors = adapter.detect_frame(frame, conf)
                scored = run_tta(frame, anchors, adapter, sampler, uq_cfg, conf_threshold=conf)
            return _uq_record_obj(stem, scored)

        if jobs > 1 and len(stems) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as tpe:
                results = list(tpe.map(process, stems))
        else:
            results = [process(s) for s in stems]

    records_path = out / "uq_records.jsonl"
    with open(records_path, "w", encoding="utf-8") as fh:
        for obj in results:
            fh.write(canonical_dumps(obj) + "\n")
    n_dets = sum(len(o["detections"]) for o in results)
    print(f"uq: scored {n_dets} detections over {len(results)} images -> {records_path}")
    _log(out, "uq done")
    return EXIT_OK


def _load_uq_records(path: Path):
    """Read uq_records.jsonl back into (Detection, UncertaintyScore) pairs."""
    per_image = {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read UQ records {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            image_id = obj["image_id"]
            scored = []
            for d in obj["detections"]:
                bb = d["bbox"]
                det = Detection(
                    bbox=BBox(bb["cx"], bb["cy"], bb["w"], bb["h"]),
                    class_id=int(d["class_id"]),
                    score=float(d["score"]),
                )
                unc = UncertaintyScore(
                    u_class=float(d["u_class"]),
                    u_bbox=float(d["u_bbox"]),
                    u_combined=float(d["u_combined"]),
                    n_matched_runs=int(d["n_matched_runs"]),
                    coord_variances=tuple(d["u_xywh"]) if d.get("u_xywh") else None,
                )
                scored.append((det, unc))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: bad UQ record ({exc})") from exc
        per_image[image_id] = scored
    return per_image


def _gts_for(handle: DatasetHandle, image_ids) -> dict:
    gts = {}
    for image_id in image_ids:
        split = handle.split_of(image_id)
        gts[image_id] = handle.labels(split, image_id)
    return gts


def _counts_obj(counts: m.FilterCounts) -> dict:
    ratio = None if counts.fp == 0 else counts.tp / counts.fp
    return {"tp": counts.tp, "fp": counts.fp, "tp_fp_ratio": ratio}


def cmd_eval(cfg: RunConfig) -> int:
    out = cfg.require_path("out")
    handle = load_dataset(cfg.require_path("dataset"))
    records_path = cfg.get_path("eval.records", out / "uq_records.jsonl")
    per_image = _load_uq_records(records_path)
    gts = _gts_for(handle, sorted(per_image))
    iou = cfg.get_float("eval.iou", 0.5)
    conf = cfg.get_float("conf", 0.25)
    u_thr = cfg.get_float("u_threshold")

    records, n_gt = m.build_eval_records(per_image, gts, iou_thr=iou)
    _echo_config(cfg, out)
    _log(out, f"eval start: records={records_path} n_gt={n_gt}")

    unfiltered = m.filtered_counts(records, conf)
    counts = {
        "n_gt": n_gt,
        "conf_threshold": conf,
        "u_threshold": u_thr,
        "unfiltered": _counts_obj(unfiltered),
        "filtered": _counts_obj(m.filtered_counts(records, conf, u_thr))
        if u_thr is not None
        else None,
    }

    grid = np.linspace(0.0, 1.0, cfg.get_int("eval.pr_points", 101))
    curves = {}
    if n_gt > 0:
        curves["unfiltered"] = m.pr_curve(records, n_gt, grid)
        counts["pr_auc_unfiltered"] = curves["unfiltered"].auc
        if u_thr is not None:
            curves["filtered"] = m.pr_curve(records, n_gt, grid, u_thr=u_thr)
            counts["pr_auc_filtered"] = curves["filtered"].auc
    (out / "counts.json").write_text(canonical_dumps(counts) + "\n", encoding="utf-8")
    if curves:
        m.write_pr_csv(out / "pr_curve.csv", curves)
    m.write_separation_csv(out / "separation.csv", m.separation_stats(records))
    rows = m.histogram(records, bins=cfg.get_int("eval.bins", 40))
    m.write_histogram_csv(out / "histogram.csv", rows)
    if cfg.get_bool("eval.svg", False):
        m.write_histogram_svg(out / "histogram.svg", rows)

    summary = counts["unfiltered"]
    print(
        f"eval: n_gt={n_gt} tp={summary['tp']} fp={summary['fp']} "
        f"ratio={summary['tp_fp_ratio']}"
    )
    _log(out, "eval done")
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    out = cfg.require_path("out")
    handle = load_dataset(cfg.require_path("dataset"))
    records_path = cfg.get_path("calibrate.records", out / "uq_records.jsonl")
    per_image = _load_uq_records(records_path)
    gts = _gts_for(handle, sorted(per_image))
    iou = cfg.get_float("eval.iou", 0.5)
    records, _ = m.build_eval_records(per_image, gts, iou_thr=iou)

    step = cfg.get_float("calibrate.weight_step", 0.05)
    if not (0.0 < step <= 1.0):
        raise ConfigError(f"calibrate.weight_step must be in (0, 1]: {step}")
    n_steps = int(round(1.0 / step))
    try:
        spec = CalibrationSpec(
            weight_grid=tuple(round(i * step, 10) for i in range(n_steps + 1)),
            u_quantiles=cfg.get_int("calibrate.u_quantiles", 50),
            objective=cfg.get_str("calibrate.objective", "max_fp_removed_st_tp_retention"),
            tp_retention_floor=cfg.get_float("calibrate.floor", 0.95),
        )
    except ValueError as exc:
        raise ConfigError(f"calibrate: {exc}") from exc

    _echo_config(cfg, out)
    _log(out, f"calibrate start: records={records_path}")
    result = calibrate(records, spec)
    save_profile(
        result,
        out / "profile.json",
        metadata={"records": str(records_path), "seed": cfg.get_int("seed", 0)},
    )
    print(
        f"calibrate: w_bbox={result.weights.w_bbox} w_class={result.weights.w_class} "
        f"u_threshold={fmt_float(result.u_threshold)} "
        f"retention={result.tp_retention:.4f} removal={result.fp_removal:.4f}"
    )
    _log(out, "calibrate done")
    return EXIT_OK


def cmd_decompose(cfg: RunConfig) -> int:
    out = cfg.require_path("out")
    table_path = cfg.require_path("decompose.table")
    try:
        table = json.loads(table_path.read_text(encoding="utf-8"))
        ps = table["p"] if isinstance(table, dict) else table
        if isinstance(ps, dict):
            keys = sorted(ps)
            weights = None
            ps = [ps[k] for k in keys]
        else:
            weights = table.get("weights") if isinstance(table, dict) else None
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"decompose.table: {exc}") from exc
    trials = cfg.get_int("decompose.trials", 100_000)

    _echo_config(cfg, out)
    _log(out, f"decompose start: table={table_path} trials={trials}")
    try:
        report = decompose_variance(ps, trials, seed=cfg.get_int("seed", 0), weights=weights)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    obj = {
        "analytic": {
            "total": report.analytic_total,
            "noise": report.analytic_noise,
            "effect": report.analytic_effect,
            "identity_exact": report.analytic_identity_exact,
        },
        "monte_carlo": {
            "total": report.mc_total,
            "noise": report.mc_noise,
            "effect": report.mc_effect,
            "se_total": report.se_total,
            "se_noise": report.se_noise,
            "se_effect": report.se_effect,
            "n_trials": report.n_trials,
        },
    }
    (out / "decomposition.json").write_text(canonical_dumps(obj) + "\n", encoding="utf-8")
    print("term       analytic        monte-carlo     std-err")
    for term in ("total", "noise", "effect"):
        print(
            f"{term:<10} {obj['analytic'][term]:<15.9f} "
            f"{obj['monte_carlo'][term]:<15.9f} {obj['monte_carlo']['se_' + term]:.2e}"
        )
    _log(out, "decompose done")
    return EXIT_OK


def _bench_scene(size: int, n_boxes: int):
    """Deterministic frame with n_boxes colored rectangles and an oracle
    spec that detects exactly those."""
    from .colorspace import hsv_to_rgb_array

    pixels = np.full((size, size, 3), 80, dtype=np.uint8)
    cols = int(math.ceil(math.sqrt(n_boxes)))
    cell = size // cols
    side = max(4, int(cell * 0.6))
    plants = []
    for i in range(n_boxes):
        r, c = divmod(i, cols)
        left = c * cell + (cell - side) // 2
        top = (r * cell + (cell - side) // 2) % max(size - side, 1)
        hue = (i * 360.0 / n_boxes) % 360.0
        rgb = hsv_to_rgb_array(np.array([[hue, 0.9, 0.9]]))[0]
        pixels[top : top + side, left : left + side] = rgb
        plants.append(
            PlantedBox(
                bbox=BBox(
                    (left + side / 2) / size,
                    (top + side / 2) / size,
                    side / size,
                    side / size,
                ),
                class_id=0,
                score=0.9,
            )
        )
    frame = ImageFrame(pixels, image_id="bench")
    spec = MockDetectorSpec(kind="oracle_stable", plants={"bench": tuple(plants)})
    return frame, spec


class _TimingAdapter(MockAdapter):
    """Mock adapter that accumulates time spent inside the detector, so the
    bench can report pipeline overhead with detector time excluded."""

    def __init__(self, spec):
        super().__init__(spec)
        self.detector_seconds = 0.0

    def detect_frame(self, frame, conf_threshold, image_id=None):
        t0 = time.perf_counter()
        out = super().detect_frame(frame, conf_threshold, image_id=image_id)
        self.detector_seconds += time.perf_counter() - t0
        return out


def cmd_bench(cfg: RunConfig) -> int:
    out = cfg.require_path("out")
    frames_n = cfg.get_int("bench.frames", 20)
    if frames_n < 1:
        raise ConfigError("bench.frames must be >= 1")
    size = cfg.get_int("bench.size", 640)
    n_boxes = cfg.get_int("bench.detections", 10)
    uq_cfg = _uq_config_from(cfg)
    sampler = _sampler_from(cfg, "inference")
    conf = cfg.get_float("conf", 0.25)

    _echo_config(cfg, out)
    _log(out, f"bench start: frames={frames_n} size={size} k={uq_cfg.k}")
    frame, spec = _bench_scene(size, n_boxes)
    adapter = _TimingAdapter(spec)

    anchor_s = 0.0
    tta_s = 0.0
    n_scored = 0
    for _ in range(frames_n):
        t0 = time.perf_counter()
        anchors = adapter.detect_frame(frame, conf)
        t1 = time.perf_counter()
        scored = run_tta(frame, anchors, adapter, sampler, uq_cfg, conf_threshold=conf)
        t2 = time.perf_counter()
        anchor_s += t1 - t0
        tta_s += t2 - t1
        n_scored += len(scored)

    total_s = anchor_s + tta_s
    detector_s = adapter.detector_seconds
    overhead_s = total_s - detector_s
    report = {
        "frames": frames_n,
        "image_size": size,
        "k": uq_cfg.k,
        "detections_per_frame": n_scored / frames_n,
        "per_frame_ms": {
            "total": 1000.0 * total_s / frames_n,
            "anchor_detect": 1000.0 * anchor_s / frames_n,
            "tta": 1000.0 * tta_s / frames_n,
            "detector": 1000.0 * detector_s / frames_n,
            "pipeline_overhead": 1000.0 * overhead_s / frames_n,
        },
        "fps_including_detector": frames_n / total_s if total_s > 0 else float("inf"),
        "fps_overhead_only": frames_n / overhead_s if overhead_s > 0 else float("inf"),
    }
    (out / "bench.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(
        f"bench: {report['per_frame_ms']['total']:.2f} ms/frame total, "
        f"{report['per_frame_ms']['pipeline_overhead']:.2f} ms/frame overhead, "
        f"{report['fps_including_detector']:.1f} fps incl. mock detector"
    )
    _log(out, "bench done")
    return EXIT_OK


COMMANDS = {
    "augment": cmd_augment,
    "uq": cmd_uq,
    "eval": cmd_eval,
    "calibrate": cmd_calibrate,
    "decompose": cmd_decompose,
    "bench": cmd_bench,
}

_OVERRIDE_FLAGS = {
    "seed": "seed",
    "jobs": "jobs",
    "split": "split",
    "out": "out",
    "dataset": "dataset",
    "conf": "conf",
    "u_th": "u_threshold",
    "weights": "weights",
    "adapter_cmd": "adapter.cmd",
    "k": "uq.k",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="objtrans", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--split")
        p.add_argument("--out")
        p.add_argument("--dataset")
        p.add_argument("--conf", type=float)
        p.add_argument("--u-th", dest="u_th", type=float)
        p.add_argument("--weights", help="w_bbox,w_class")
        p.add_argument("--adapter-cmd", dest="adapter_cmd")
        p.add_argument("--k", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        key: getattr(args, attr) for attr, key in _OVERRIDE_FLAGS.items()
    }
    try:
        cfg = RunConfig.from_sources(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_ADAPTER
    except AdapterError as exc:
        print(f"adapter error: {exc}", file=sys.stderr)
        return EXIT_ADAPTER
    except (DatasetError, CalibrationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
