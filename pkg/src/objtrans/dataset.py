"""Loading and writing the on-disk dataset layout.

Layout under a dataset root::

    images/{split}/{stem}.png      8-bit RGB
    labels/{split}/{stem}.txt      one "class_id cx cy w h" line per object,
                                   normalized center-size, 6 decimals
    masks/{split}/{stem}.png       16-bit single-channel PNG, 0 = background,
                                   pixel value n = instance n   (optional)
    masks/{split}/{stem}.json      sidecar {"<instance_id>": class_id}
    classes.txt                    one class name per line
    splits.json                    {"train": [stems], "val": [...], "test": [...]}

The layout is deliberately generic (YOLO-style labels, id-raster masks) so
the toolkit stays dataset-agnostic; converters from vendor formats are out
of scope.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import BBox, GroundTruthBox, ImageFrame, InstanceMask

__all__ = [
    "DatasetError",
    "DatasetHandle",
    "load_dataset",
    "load_image",
    "load_instance_masks",
    "load_labels",
    "write_labels",
    "write_instance_masks",
    "save_image",
]

SPLIT_NAMES = ("train", "val", "test")


class DatasetError(Exception):
    """Malformed or inconsistent dataset content."""


@dataclass
class DatasetHandle:
    """Validated view of a dataset tree: root path, per-split image stems,
    ordered class names."""

    root: Path
    splits: dict[str, list[str]]
    class_names: list[str]

    def image_path(self, split: str, stem: str) -> Path:
        return self.root / "images" / split / f"{stem}.png"

    def label_path(self, split: str, stem: str) -> Path:
        return self.root / "labels" / split / f"{stem}.txt"

    def mask_paths(self, split: str, stem: str) -> tuple[Path, Path]:
        base = self.root / "masks" / split
        return base / f"{stem}.png", base / f"{stem}.json"

    def has_masks(self, split: str, stem: str) -> bool:
        raster, sidecar = self.mask_paths(split, stem)
        return raster.exists() and sidecar.exists()

    def split_of(self, stem: str) -> str:
        for split, stems in self.splits.items():
            if stem in stems:
                return split
        raise DatasetError(f"unknown image id {stem!r}")

    def labels(self, split: str, stem: str) -> list[GroundTruthBox]:
        path = self.label_path(split, stem)
        if not path.exists():
            return []
        return load_labels(path, len(self.class_names))

    @property
    def n_images(self) -> int:
        return sum(len(v) for v in self.splits.values())


def load_labels(path: Path, n_classes: int) -> list[GroundTruthBox]:
    """Parse one label file; every violation names the file and line."""
    boxes = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise DatasetError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            class_id = int(parts[0])
            cx, cy, w, h = (float(p) for p in parts[1:])
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        if class_id < 0 or class_id >= n_classes:
            raise DatasetError(
                f"{path}:{lineno}: class_id {class_id} outside 0..{n_classes - 1}"
            )
        if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
            raise DatasetError(f"{path}:{lineno}: center ({cx}, {cy}) outside [0, 1]")
        if not (0.0 < w <= 1.0 and 0.0 < h <= 1.0):
            raise DatasetError(f"{path}:{lineno}: size ({w}, {h}) outside (0, 1]")
        boxes.append(GroundTruthBox(BBox(cx, cy, w, h), class_id))
    return boxes


def write_labels(path: Path, boxes: list[GroundTruthBox]) -> None:
    """Fixed 6-decimal formatting so write/load/write round-trips are
    byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"{b.class_id} {b.bbox.cx:.6f} {b.bbox.cy:.6f} {b.bbox.w:.6f} {b.bbox.h:.6f}\n"
        for b in boxes
    ]
    path.write_text("".join(lines), encoding="utf-8")


def save_image(frame: ImageFrame, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(frame.pixels, mode="RGB").save(path, format="PNG")


def load_image(handle: DatasetHandle, split: str, stem: str) -> ImageFrame:
    path = handle.image_path(split, stem)
    if not path.exists():
        raise DatasetError(f"missing image file {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return ImageFrame(arr, image_id=stem)


def write_instance_masks(
    raster_path: Path, sidecar_path: Path, id_raster: np.ndarray, class_by_id: dict[int, int]
) -> None:
    raster_path = Path(raster_path)
    raster_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(id_raster.astype(np.uint16)).save(raster_path, format="PNG")
    Path(sidecar_path).write_text(
        json.dumps({str(k): v for k, v in sorted(class_by_id.items())}, sort_keys=True),
        encoding="utf-8",
    )


def load_instance_masks_split(
    handle: DatasetHandle, split: str, stem: str
) -> list[InstanceMask]:
    raster_path, sidecar_path = handle.mask_paths(split, stem)
    if not raster_path.exists() or not sidecar_path.exists():
        raise DatasetError(f"missing mask artifact for {split}/{stem}")
    with Image.open(raster_path) as img:
        raster = np.asarray(img)
    if raster.ndim != 2:
        raise DatasetError(f"{raster_path}: mask raster must be single-channel")
    try:
        sidecar_raw = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))
        class_by_id = {int(k): int(v) for k, v in sidecar_raw.items()}
    except (json.JSONDecodeError, ValueError) as exc:
        raise DatasetError(f"{sidecar_path}: {exc}") from exc

    raster_ids = {int(v) for v in np.unique(raster) if v != 0}
    for rid in sorted(raster_ids):
        if rid not in class_by_id:
            raise DatasetError(f"{raster_path}: raster instance {rid} missing from sidecar")
    for sid in sorted(class_by_id):
        if sid not in raster_ids:
            raise DatasetError(f"{sidecar_path}: sidecar instance {sid} absent from raster")

    return [
        InstanceMask(
            image_id=stem,
            instance_id=rid,
            class_id=class_by_id[rid],
            bitmap=raster == rid,
        )
        for rid in sorted(raster_ids)
    ]


def load_instance_masks(handle: DatasetHandle, image_id: str) -> list[InstanceMask]:
    """Decode the instance masks of one image, located via its split."""
    return load_instance_masks_split(handle, handle.split_of(image_id), image_id)


def load_dataset(root: Path | str) -> DatasetHandle:
    """Open and validate a dataset tree.

    Checks: splits file and classes file exist, split lists are disjoint,
    every split stem has an image file, every label file (including labels
    of stems outside the splits file) parses with in-range coordinates, and
    every labeled stem has an image.
    """
    root = Path(root)
    splits_path = root / "splits.json"
    classes_path = root / "classes.txt"
    if not splits_path.exists():
        raise DatasetError(f"missing splits file {splits_path}")
    if not classes_path.exists():
        raise DatasetError(f"missing classes file {classes_path}")

    class_names = [
        line.strip() for line in classes_path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if not class_names:
        raise DatasetError(f"{classes_path}: no class names")

    try:
        raw_splits = json.loads(splits_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{splits_path}: {exc}") from exc
    if not isinstance(raw_splits, dict):
        raise DatasetError(f"{splits_path}: expected an object of split lists")
    splits: dict[str, list[str]] = {}
    seen: dict[str, str] = {}
    for split, stems in sorted(raw_splits.items()):
        if not isinstance(stems, list):
            raise DatasetError(f"{splits_path}: split {split!r} is not a list")
        splits[split] = [str(s) for s in stems]
        for stem in splits[split]:
            if stem in seen:
                raise DatasetError(
                    f"{splits_path}: stem {stem!r} appears in both "
                    f"{seen[stem]!r} and {split!r}"
                )
            seen[stem] = split

    handle = DatasetHandle(root=root, splits=splits, class_names=class_names)

    for split, stems in splits.items():
        for stem in stems:
            if not handle.image_path(split, stem).exists():
                raise DatasetError(f"missing image file for {split}/{stem}")

    labels_root = root / "labels"
    if labels_root.exists():
        for label_file in sorted(labels_root.rglob("*.txt")):
            load_labels(label_file, len(class_names))
            split = label_file.parent.name
            stem = label_file.stem
            if not (root / "images" / split / f"{stem}.png").exists():
                raise DatasetError(f"label {label_file} has no matching image")

    return handle
