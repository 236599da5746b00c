"""Exact RGB<->HSV conversion and per-pixel HSV perturbation math.

The conversion is the standard hexcone model with 8-bit channels first
normalized to [0, 1]. Hue lives in degrees [0, 360) (0 when the pixel is
achromatic), saturation and value in [0, 1]. Converting back quantizes with
round-half-up; with that rounding the RGB -> HSV -> RGB round trip is exact
for every 8-bit color, which is what lets masked perturbation with identity
parameters reproduce the input image bit for bit.

Hue perturbation is additive with wrap-around; saturation and value are
multiplicative with clamping, so black and unsaturated pixels stay put
instead of being colorized.

Array functions operate on float64 ``(..., 3)`` HSV stacks / uint8 RGB
stacks and are the fast path used by the object transforms; the scalar
functions are thin wrappers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import HsvParams

__all__ = [
    "HsvPixel",
    "apply_hsv_params",
    "apply_hsv_params_array",
    "circular_mean_hue",
    "hsv_to_rgb",
    "hsv_to_rgb_array",
    "rgb_to_hsv",
    "rgb_to_hsv_array",
]


@dataclass(frozen=True)
class HsvPixel:
    """Hue in degrees [0, 360), saturation and value in [0, 1]."""

    h: float
    s: float
    v: float

    def __post_init__(self):
        if not (0.0 <= self.h < 360.0):
            raise ValueError(f"hue out of range: {self.h}")
        if not (0.0 <= self.s <= 1.0 and 0.0 <= self.v <= 1.0):
            raise ValueError(f"saturation/value out of range: ({self.s}, {self.v})")


def rgb_to_hsv_array(rgb: np.ndarray) -> np.ndarray:
    """Convert a uint8 ``(..., 3)`` RGB stack to float64 HSV."""
    arr = np.asarray(rgb)
    if arr.dtype != np.uint8 or arr.shape[-1] != 3:
        raise ValueError(f"expected uint8 (..., 3) array, got {arr.dtype} {arr.shape}")
    c = arr.astype(np.float64) / 255.0
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    maxc = np.max(c, axis=-1)
    minc = np.min(c, axis=-1)
    delta = maxc - minc

    s = np.where(maxc > 0.0, delta / np.where(maxc > 0.0, maxc, 1.0), 0.0)

    safe = np.where(delta > 0.0, delta, 1.0)
    # Sector selection: ties (two channels sharing the max) resolve in
    # r, g, b order, which the inverse path absorbs continuously.
    h6 = np.select(
        [maxc == r, maxc == g],
        [np.mod((g - b) / safe, 6.0), (b - r) / safe + 2.0],
        default=(r - g) / safe + 4.0,
    )
    h = np.where(delta > 0.0, h6 * 60.0, 0.0)
    return np.stack([h, s, maxc], axis=-1)


def hsv_to_rgb_array(hsv: np.ndarray) -> np.ndarray:
    """Convert a float64 ``(..., 3)`` HSV stack to uint8 RGB.

    Channels are quantized with round-half-up, the convention the
    round-trip exactness depends on.
    """
    arr = np.asarray(hsv, dtype=np.float64)
    if arr.shape[-1] != 3:
        raise ValueError(f"expected (..., 3) array, got {arr.shape}")
    h, s, v = arr[..., 0], arr[..., 1], arr[..., 2]

    h6 = np.mod(h / 60.0, 6.0)
    i = np.floor(h6)
    f = h6 - i
    i = i.astype(np.int64) % 6

    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))

    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])

    rgb = np.stack([r, g, b], axis=-1) * 255.0
    return np.clip(np.floor(rgb + 0.5), 0.0, 255.0).astype(np.uint8)


def apply_hsv_params_array(hsv: np.ndarray, params: HsvParams) -> np.ndarray:
    """Hue rotates with wrap-around; saturation/value scale with clamping."""
    arr = np.asarray(hsv, dtype=np.float64)
    h = np.mod(arr[..., 0] + params.hue_shift, 360.0)
    # np.mod can round up to exactly 360.0 for tiny negative inputs.
    h = np.where(h >= 360.0, h - 360.0, h)
    s = np.clip(arr[..., 1] * params.sat_scale, 0.0, 1.0)
    v = np.clip(arr[..., 2] * params.val_scale, 0.0, 1.0)
    return np.stack([h, s, v], axis=-1)


def rgb_to_hsv(r: int, g: int, b: int) -> HsvPixel:
    for name, ch in (("r", r), ("g", g), ("b", b)):
        if not (0 <= ch <= 255):
            raise ValueError(f"channel {name} out of range: {ch}")
    h, s, v = rgb_to_hsv_array(np.array([[r, g, b]], dtype=np.uint8))[0]
    return HsvPixel(float(h), float(s), float(v))


def hsv_to_rgb(p: HsvPixel) -> tuple[int, int, int]:
    r, g, b = hsv_to_rgb_array(np.array([[p.h, p.s, p.v]], dtype=np.float64))[0]
    return int(r), int(g), int(b)


def apply_hsv_params(p: HsvPixel, t: HsvParams) -> HsvPixel:
    h, s, v = apply_hsv_params_array(np.array([[p.h, p.s, p.v]], dtype=np.float64), t)[0]
    return HsvPixel(float(h), float(s), float(v))


def circular_mean_hue(h_degrees: np.ndarray) -> float:
    """Circular mean of hue angles in degrees, result in [0, 360).

    The arithmetic mean is wrong across the 0/360 wrap; this averages unit
    vectors instead. An exactly balanced distribution returns 0.
    """
    rad = np.radians(np.asarray(h_degrees, dtype=np.float64))
    mean = math.atan2(float(np.mean(np.sin(rad))), float(np.mean(np.cos(rad))))
    deg = math.degrees(mean) % 360.0
    return deg if deg < 360.0 else 0.0
