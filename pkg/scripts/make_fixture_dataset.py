#!/usr/bin/env python3
"""Regenerate the tiny committed fixture dataset used by the test suite.

Six 64x64 scenes of colored rectangles across train/val/test, with YOLO
labels and instance-id masks. One train image intentionally ships without a
mask artifact to exercise the skip-with-warning path. Deterministic, so
reruns reproduce the committed tree.

Usage: python scripts/make_fixture_dataset.py [--out tests/data/miniset]
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from objtrans.colorspace import hsv_to_rgb_array
from objtrans.core import BBox, GroundTruthBox
from objtrans.dataset import write_instance_masks, write_labels

CLASSES = ["pedestrian", "vehicle", "barrier", "cone"]
SIZE = 64

# (stem, split, has_masks, [(class_id, left, top, width, height, hue)])
SCENES = [
    ("scene_000", "train", True, [(1, 8, 10, 20, 14, 0.0), (3, 40, 36, 12, 16, 120.0)]),
    ("scene_001", "train", False, [(2, 20, 20, 24, 18, 210.0)]),
    ("scene_100", "val", True, [(1, 6, 30, 22, 16, 30.0), (2, 36, 8, 18, 20, 275.0)]),
    ("scene_101", "val", True, [(3, 24, 24, 14, 14, 60.0)]),
    ("scene_200", "test", True, [(1, 10, 6, 26, 18, 330.0), (3, 44, 40, 10, 12, 90.0)]),
    ("scene_201", "test", True, [(2, 14, 34, 28, 20, 180.0), (0, 46, 8, 10, 22, 20.0)]),
]


def render(rects) -> tuple[np.ndarray, np.ndarray]:
    gradient = np.linspace(60, 110, SIZE, dtype=np.uint8)
    pixels = np.repeat(gradient[None, :, None], SIZE, axis=0).repeat(3, axis=2).copy()
    id_raster = np.zeros((SIZE, SIZE), dtype=np.uint16)
    for idx, (_, left, top, w, h, hue) in enumerate(rects, start=1):
        rgb = hsv_to_rgb_array(np.array([[hue, 0.85, 0.8]]))[0]
        pixels[top : top + h, left : left + w] = rgb
        id_raster[top : top + h, left : left + w] = idx
    return pixels, id_raster


def boxes_of(rects) -> list[GroundTruthBox]:
    out = []
    for class_id, left, top, w, h, _ in rects:
        out.append(
            GroundTruthBox(
                BBox((left + w / 2) / SIZE, (top + h / 2) / SIZE, w / SIZE, h / SIZE),
                class_id,
            )
        )
    return out


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="tests/data/miniset")
    args = parser.parse_args()
    root = Path(args.out)

    from PIL import Image

    splits: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    for stem, split, has_masks, rects in SCENES:
        splits[split].append(stem)
        pixels, id_raster = render(rects)
        img_path = root / "images" / split / f"{stem}.png"
        img_path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels, mode="RGB").save(img_path, format="PNG")
        write_labels(root / "labels" / split / f"{stem}.txt", boxes_of(rects))
        if has_masks:
            write_instance_masks(
                root / "masks" / split / f"{stem}.png",
                root / "masks" / split / f"{stem}.json",
                id_raster,
                {i: rect[0] for i, rect in enumerate(rects, start=1)},
            )

    (root / "classes.txt").write_text("".join(f"{c}\n" for c in CLASSES), encoding="utf-8")
    (root / "splits.json").write_text(
        json.dumps(splits, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"fixture dataset written to {root}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
