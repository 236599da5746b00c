"""Shared value types: image rasters, instance masks, boxes, detections,
transformation parameters and uncertainty scores.

Everything here is an immutable value object (numpy buffers are made
read-only on construction), so instances can be shared freely across
threads. Scores and coordinates are double precision; pixel data is 8-bit
only at the raster boundary. Boxes use the normalized center-size
convention (cx, cy, w, h as fractions of the image) throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ANCHOR_RUN = -1  # source_run value for detections from the unperturbed image

__all__ = [
    "ANCHOR_RUN",
    "BBox",
    "CombineWeights",
    "Detection",
    "GroundTruthBox",
    "HsvParams",
    "ImageFrame",
    "InstanceMask",
    "UncertaintyScore",
    "bbox_iou",
    "population_variance",
]


@dataclass(frozen=True, eq=False)
class ImageFrame:
    """8-bit RGB raster plus an opaque identifier.

    ``pixels`` is a read-only ``(height, width, 3)`` uint8 array in row-major
    order.
    """

    pixels: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {px.dtype}")
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must have shape (height, width, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image dimensions must be positive")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class InstanceMask:
    """Pixel coverage of one object instance, stored as a boolean bitmap
    with the same (height, width) geometry as the image it belongs to."""

    image_id: str
    instance_id: int
    class_id: int
    bitmap: np.ndarray

    def __post_init__(self):
        bm = np.asarray(self.bitmap)
        if bm.dtype != np.bool_:
            raise ValueError(f"bitmap must be bool, got {bm.dtype}")
        if bm.ndim != 2:
            raise ValueError(f"bitmap must be 2-D, got shape {bm.shape}")
        if not bm.any():
            raise ValueError("empty mask")
        if self.instance_id < 0 or self.class_id < 0:
            raise ValueError("instance_id and class_id must be non-negative")
        bm = np.ascontiguousarray(bm)
        bm.setflags(write=False)
        object.__setattr__(self, "bitmap", bm)

    @property
    def pixel_count(self) -> int:
        return int(self.bitmap.sum())


@dataclass(frozen=True, order=True)
class BBox:
    """Axis-aligned box in normalized center-size coordinates.

    The center must lie inside the image; width/height are in (0, 1]. A box
    may overhang the image edge (e.g. cx=0.02, w=0.1); use :meth:`clipped`
    to intersect it with the frame after arithmetic.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center out of range: ({self.cx}, {self.cy})")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"box size out of range: ({self.w}, {self.h})")

    def corners(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) corner coordinates, still normalized."""
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    @property
    def area(self) -> float:
        return self.w * self.h

    @staticmethod
    def from_corners(x0: float, y0: float, x1: float, y1: float) -> "BBox":
        return BBox((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)

    def clipped(self) -> "BBox | None":
        """Box intersected with the unit frame; None when nothing remains.
        A box already inside the frame is returned as-is, so its size never
        picks up corner-arithmetic rounding."""
        x0, y0, x1, y1 = self.corners()
        if x0 >= 0.0 and y0 >= 0.0 and x1 <= 1.0 and y1 <= 1.0:
            return self
        x0, y0 = max(0.0, x0), max(0.0, y0)
        x1, y1 = min(1.0, x1), min(1.0, y1)
        if x1 <= x0 or y1 <= y0:
            return None
        return BBox.from_corners(x0, y0, x1, y1)

    def pixel_rect(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Half-open pixel rectangle (left, top, right, bottom) covered by
        the box in a width x height raster, clipped to the raster."""
        x0, y0, x1, y1 = self.corners()
        left = min(max(int(math.floor(x0 * width)), 0), width)
        right = min(max(int(math.ceil(x1 * width)), 0), width)
        top = min(max(int(math.floor(y0 * height)), 0), height)
        bottom = min(max(int(math.ceil(y1 * height)), 0), height)
        return left, top, right, bottom


@dataclass(frozen=True)
class Detection:
    """One detector output: box, class, confidence, and which run it came
    from (ANCHOR_RUN for the unperturbed pass, 0..K-1 for perturbed runs)."""

    bbox: BBox
    class_id: int
    score: float
    source_run: int = ANCHOR_RUN

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score out of range: {self.score}")
        if self.class_id < 0:
            raise ValueError("class_id must be non-negative")


@dataclass(frozen=True)
class GroundTruthBox:
    bbox: BBox
    class_id: int

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError("class_id must be non-negative")


@dataclass(frozen=True)
class HsvParams:
    """One color perturbation: additive hue rotation (degrees), multiplicative
    saturation and value scaling. (0, 1, 1) is the identity."""

    hue_shift: float = 0.0
    sat_scale: float = 1.0
    val_scale: float = 1.0

    def __post_init__(self):
        if not (-180.0 <= self.hue_shift < 180.0):
            raise ValueError(f"hue_shift must be in [-180, 180): {self.hue_shift}")
        if self.sat_scale <= 0.0 or self.val_scale <= 0.0:
            raise ValueError("sat_scale and val_scale must be positive")

    @classmethod
    def identity(cls) -> "HsvParams":
        return cls(0.0, 1.0, 1.0)

    @property
    def is_identity(self) -> bool:
        return self.hue_shift == 0.0 and self.sat_scale == 1.0 and self.val_scale == 1.0


@dataclass(frozen=True)
class CombineWeights:
    """Weights for combining box and score variance into one uncertainty
    value; they must sum to 1."""

    w_bbox: float = 0.25
    w_class: float = 0.75

    def __post_init__(self):
        if not (0.0 <= self.w_bbox <= 1.0 and 0.0 <= self.w_class <= 1.0):
            raise ValueError("weights must lie in [0, 1]")
        if abs(self.w_bbox + self.w_class - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1: {self.w_bbox} + {self.w_class}")

    def combine(self, u_bbox: float, u_class: float) -> float:
        return self.w_bbox * u_bbox + self.w_class * u_class


@dataclass(frozen=True)
class UncertaintyScore:
    """Per-detection uncertainty: score variance, mean box-coordinate
    variance, and their weighted combination.

    ``coord_variances`` keeps the individual (cx, cy, w, h) variances when
    they were computable (None when too few perturbed runs matched and the
    fixed penalty was used instead).
    """

    u_class: float
    u_bbox: float
    u_combined: float
    n_matched_runs: int
    coord_variances: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.u_class < 0.0 or self.u_bbox < 0.0 or self.u_combined < 0.0:
            raise ValueError("uncertainty components must be non-negative")
        if self.n_matched_runs < 0:
            raise ValueError("n_matched_runs must be non-negative")


def bbox_iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint, exactly 1 for
    equal boxes (short-circuited so corner rounding cannot blur identity)."""
    if a == b:
        return 1.0
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def population_variance(xs) -> float:
    """Population variance (divide by n) via a numerically stable two-pass
    scheme with compensated summation.

    The n-divisor convention is deliberate: the perturbation runs are the
    entire sampled transformation set, not a sample from a larger one.
    """
    values = [float(x) for x in xs]
    n = len(values)
    if n == 0:
        raise ValueError("no samples")
    if min(values) == max(values):
        # Constant sequences are exactly zero-variance; the mean's rounding
        # must not manufacture residuals here.
        return 0.0
    mean = math.fsum(values) / n
    return math.fsum((x - mean) ** 2 for x in values) / n
