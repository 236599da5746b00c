"""Masked object perturbation and augmented-dataset generation.

An object transform converts the pixels inside one object region (an
instance mask at training time, the detection box rectangle at inference
time, where no masks exist) through RGB -> HSV -> perturb -> RGB and writes
them back at their original position. Pixels outside the region are
untouched, bit for bit.

Parameter sampling is uniform per component and runs on keyed RNG streams:
the draw for (image, instance, copy-index) depends only on the sampler seed
and that key, never on scheduling, so parallel generation is reproducible.
"""

from __future__ import annotations

import hashlib
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .colorspace import apply_hsv_params_array, hsv_to_rgb_array, rgb_to_hsv_array
from .core import BBox, HsvParams, ImageFrame, InstanceMask

__all__ = [
    "AugmentationPlan",
    "AugmentationReport",
    "TransformSampler",
    "generate_augmented_dataset",
    "perturb_object",
    "sample_params",
]


@dataclass(frozen=True)
class TransformSampler:
    """Uniform, component-independent sampling distribution over HSV
    perturbations.

    ``hue_range`` is a symmetric half-width in degrees (draws land in
    [-hue_range, hue_range)); saturation and value scales draw from their
    closed-below intervals. Collapsed ranges (e.g. hue 0, sat [1, 1]) are
    allowed and make the sampler return identity parameters.
    """

    hue_range: float = 30.0
    sat_range: tuple[float, float] = (0.7, 1.3)
    val_range: tuple[float, float] = (0.7, 1.3)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.hue_range <= 180.0):
            raise ValueError(f"hue_range must be in [0, 180]: {self.hue_range}")
        for name, (lo, hi) in (("sat_range", self.sat_range), ("val_range", self.val_range)):
            if lo <= 0.0 or hi < lo:
                raise ValueError(f"{name} must be a positive interval, got ({lo}, {hi})")

    @classmethod
    def inference(cls, seed: int = 0) -> "TransformSampler":
        """Narrow sweep used for uncertainty probing."""
        return cls(30.0, (0.7, 1.3), (0.7, 1.3), seed)

    @classmethod
    def training(cls, seed: int = 0) -> "TransformSampler":
        """Wide sweep used for training-set generation."""
        return cls(180.0, (0.5, 1.5), (0.5, 1.5), seed)

    @classmethod
    def identity(cls, seed: int = 0) -> "TransformSampler":
        return cls(0.0, (1.0, 1.0), (1.0, 1.0), seed)


@dataclass(frozen=True)
class AugmentationPlan:
    """How many perturbed copies per source image and which classes get the
    color treatment. ``classes_hsv=None`` means every class is eligible;
    ``skip_classes`` always wins (e.g. pedestrians reserved for other
    augmentation paths)."""

    transforms_per_image: int = 14
    classes_hsv: frozenset[int] | None = None
    skip_classes: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.transforms_per_image < 1:
            raise ValueError("transforms_per_image must be >= 1")
        if self.classes_hsv is not None:
            object.__setattr__(self, "classes_hsv", frozenset(self.classes_hsv))
        object.__setattr__(self, "skip_classes", frozenset(self.skip_classes))

    def eligible(self, class_id: int) -> bool:
        if class_id in self.skip_classes:
            return False
        return self.classes_hsv is None or class_id in self.classes_hsv


@dataclass
class AugmentationReport:
    images_written: int = 0
    instances_perturbed: int = 0
    instances_skipped: int = 0
    warnings: list[str] = field(default_factory=list)
    manifest_path: Path | None = None


def _stream_rng(seed: int, image_id: str, instance_id: int, k: int) -> np.random.Generator:
    # Stable 64-bit digest of the image id keeps streams independent of
    # iteration order and of the platform hash seed.
    id_word = int.from_bytes(
        hashlib.blake2b(image_id.encode("utf-8"), digest_size=8).digest(), "big"
    )
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, id_word, instance_id, k])
    return np.random.default_rng(ss)


def sample_params(sampler: TransformSampler, stream_key: tuple[str, int, int]) -> HsvParams:
    """Draw perturbation parameters for one (image_id, instance_id, k) key.

    Deterministic given (sampler.seed, stream_key); the three components are
    drawn independently, in hue/sat/val order.
    """
    image_id, instance_id, k = stream_key
    rng = _stream_rng(sampler.seed, image_id, int(instance_id), int(k))
    hue = float(rng.uniform(-sampler.hue_range, sampler.hue_range))
    sat = float(rng.uniform(*sampler.sat_range))
    val = float(rng.uniform(*sampler.val_range))
    return HsvParams(hue, sat, val)


def _perturb_pixels(pixels: np.ndarray, params: HsvParams) -> np.ndarray:
    return hsv_to_rgb_array(apply_hsv_params_array(rgb_to_hsv_array(pixels), params))


def perturb_object(
    img: ImageFrame, region: InstanceMask | BBox, t: HsvParams
) -> ImageFrame:
    """Apply one HSV perturbation to the pixels of ``region`` and reinsert
    them at their original position.

    Pixels outside the region are copied bit-identically; identity
    parameters reproduce the whole input bit-identically (the conversion
    round trip is exact).
    """
    out = img.pixels.copy()
    if isinstance(region, InstanceMask):
        if region.bitmap.shape != img.pixels.shape[:2]:
            raise ValueError(
                f"mask shape {region.bitmap.shape} does not match image "
                f"{img.pixels.shape[:2]}"
            )
        if img.image_id and region.image_id and region.image_id != img.image_id:
            raise ValueError(
                f"mask belongs to {region.image_id!r}, image is {img.image_id!r}"
            )
        out[region.bitmap] = _perturb_pixels(img.pixels[region.bitmap], t)
    elif isinstance(region, BBox):
        left, top, right, bottom = region.pixel_rect(img.width, img.height)
        if right <= left or bottom <= top:
            raise ValueError("empty mask")
        out[top:bottom, left:right] = _perturb_pixels(out[top:bottom, left:right], t)
    else:
        raise TypeError(f"region must be InstanceMask or BBox, got {type(region)!r}")
    return ImageFrame(out, image_id=img.image_id)


def perturb_region_inplace(pixels: np.ndarray, region: BBox, t: HsvParams) -> None:
    """In-place rectangle perturbation for callers that batch several regions
    into one output buffer (the inference-time sweep). Regions that clip to
    nothing are silently skipped."""
    height, width = pixels.shape[:2]
    left, top, right, bottom = region.pixel_rect(width, height)
    if right <= left or bottom <= top:
        return
    pixels[top:bottom, left:right] = _perturb_pixels(pixels[top:bottom, left:right], t)


def _augment_one_source(dataset, split, stem, plan, sampler, out_root):
    """Produce the perturbed copies for one source image. Returns
    (manifest_records, n_perturbed, n_skipped, warnings)."""
    from .dataset import load_image, load_instance_masks_split  # local: avoid cycle

    frame = load_image(dataset, split, stem)
    masks: list[InstanceMask] = []
    if dataset.has_masks(split, stem):
        masks = load_instance_masks_split(dataset, split, stem)
    eligible = [m for m in masks if plan.eligible(m.class_id)]

    warnings: list[str] = []
    n_missing = 0
    labels = dataset.labels(split, stem)
    label_counts: dict[int, int] = {}
    for gt in labels:
        if plan.eligible(gt.class_id):
            label_counts[gt.class_id] = label_counts.get(gt.class_id, 0) + 1
    mask_counts: dict[int, int] = {}
    for m in eligible:
        mask_counts[m.class_id] = mask_counts.get(m.class_id, 0) + 1
    for class_id, want in sorted(label_counts.items()):
        missing = want - mask_counts.get(class_id, 0)
        if missing > 0:
            n_missing += missing
    if n_missing:
        warnings.append(
            f"{split}/{stem}: {n_missing} labeled instance(s) have no mask; skipped"
        )

    records = []
    n_perturbed = 0
    src_label = dataset.label_path(split, stem)
    for k in range(plan.transforms_per_image):
        pixels = frame.pixels.copy()
        instance_entries = []
        for m in sorted(eligible, key=lambda m: m.instance_id):
            params = sample_params(sampler, (stem, m.instance_id, k))
            pixels[m.bitmap] = _perturb_pixels(pixels[m.bitmap], params)
            instance_entries.append(
                {
                    "instance_id": m.instance_id,
                    "class_id": m.class_id,
                    "hue_shift": params.hue_shift,
                    "sat_scale": params.sat_scale,
                    "val_scale": params.val_scale,
                }
            )
            n_perturbed += 1
        out_stem = f"{stem}__aug{k:03d}"
        out_image = out_root / "images" / split / f"{out_stem}.png"
        _save_png(pixels, out_image)
        if src_label.exists():
            out_label = out_root / "labels" / split / f"{out_stem}.txt"
            out_label.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src_label, out_label)
        records.append(
            {
                "out_image": f"images/{split}/{out_stem}.png",
                "src_image": f"images/{split}/{stem}.png",
                "instances": instance_entries,
            }
        )
    return records, n_perturbed, n_missing * plan.transforms_per_image, warnings


def _save_png(pixels: np.ndarray, path: Path) -> None:
    from PIL import Image

    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def generate_augmented_dataset(
    dataset,
    plan: AugmentationPlan,
    sampler: TransformSampler,
    out: Path | str,
    splits: list[str] | None = None,
    jobs: int = 1,
) -> AugmentationReport:
    """Write ``transforms_per_image`` perturbed copies of every source image
    into a new dataset tree under ``out``.

    Geometry is never touched, so label files are copied unchanged. A
    JSON-lines manifest records the per-instance parameters of every output
    image. The output tree is a pure function of (dataset bytes, plan,
    sampler seed): worker count and scheduling cannot change it.
    """
    from .util import canonical_dumps

    out_root = Path(out)
    out_root.mkdir(parents=True, exist_ok=True)
    wanted = splits if splits is not None else sorted(dataset.splits.keys())
    for split in wanted:
        if split not in dataset.splits:
            raise ValueError(f"unknown split {split!r}")

    tasks = [(split, stem) for split in wanted for stem in sorted(dataset.splits[split])]
    report = AugmentationReport()

    def run(task):
        split, stem = task
        return _augment_one_source(dataset, split, stem, plan, sampler, out_root)

    if jobs > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    manifest_path = out_root / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for records, n_perturbed, n_skipped, warnings in results:
            for rec in records:
                fh.write(canonical_dumps(rec) + "\n")
            report.images_written += len(records)
            report.instances_perturbed += n_perturbed
            report.instances_skipped += n_skipped
            report.warnings.extend(warnings)
    report.manifest_path = manifest_path

    classes_src = Path(dataset.root) / "classes.txt"
    if classes_src.exists():
        shutil.copyfile(classes_src, out_root / "classes.txt")
    out_splits = {
        split: [
            f"{stem}__aug{k:03d}"
            for stem in sorted(dataset.splits[split])
            for k in range(plan.transforms_per_image)
        ]
        for split in wanted
    }
    (out_root / "splits.json").write_text(canonical_dumps(out_splits) + "\n", encoding="utf-8")
    return report
