"""Deterministic mock detectors.

Four kinds, all pure functions of (spec, seed, request) so replays are
byte-identical:

* ``oracle_stable`` answers from a planted-box table keyed by image id and
  never looks at pixels, so it is transformation-invariant by construction:
  any color sweep leaves its scores and boxes untouched and every
  uncertainty it produces is exactly zero.
* ``hue_sensitive`` scores each planted box from the pixels inside it:
  ``base * max(0, cos(mean_hue - preferred_hue)) ** curvature``. Rotating
  the object hue moves the score along the cosine response, so its
  detection probability depends on the perturbation by construction.
* ``fragile_fp`` mixes both behaviors: ``plants`` are stable real objects
  (amplitude 0 by default) while ``fp_plants`` are spurious boxes whose
  score ``base + amplitude * cos(mean_hue - phase)`` (and optionally
  position, via ``box_jitter``) swings with the pixels. This builds
  scenarios where false positives are visibly less stable than true
  positives.
* ``bernoulli`` detects its plants with probability ``p(theta)`` read from
  a table keyed by the estimated hue shift (region mean hue vs. a reference
  hue), using a coin derived from (seed, image id, pixel digest). It models
  a detector with internal randomness whose detection rate depends on the
  transformation.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bridge import DetectorAdapter
from .colorspace import circular_mean_hue, rgb_to_hsv_array
from .core import BBox, Detection, ImageFrame

__all__ = [
    "MockAdapter",
    "MockDetectorSpec",
    "PlantedBox",
    "mock_detect",
    "plants_from_labels",
]

KINDS = ("oracle_stable", "fragile_fp", "hue_sensitive", "bernoulli")


@dataclass(frozen=True)
class PlantedBox:
    """One box a mock may emit. ``score`` is the base confidence;
    ``amplitude``/``phase_deg`` shape the pixel-driven score swing and
    ``box_jitter`` a pixel-driven center displacement (both default off)."""

    bbox: BBox
    class_id: int
    score: float
    amplitude: float = 0.0
    phase_deg: float = 0.0
    box_jitter: float = 0.0

    def to_obj(self) -> dict:
        return {
            "bbox": {"cx": self.bbox.cx, "cy": self.bbox.cy, "w": self.bbox.w, "h": self.bbox.h},
            "class_id": self.class_id,
            "score": self.score,
            "amplitude": self.amplitude,
            "phase_deg": self.phase_deg,
            "box_jitter": self.box_jitter,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "PlantedBox":
        bb = obj["bbox"]
        return cls(
            bbox=BBox(float(bb["cx"]), float(bb["cy"]), float(bb["w"]), float(bb["h"])),
            class_id=int(obj["class_id"]),
            score=float(obj["score"]),
            amplitude=float(obj.get("amplitude", 0.0)),
            phase_deg=float(obj.get("phase_deg", 0.0)),
            box_jitter=float(obj.get("box_jitter", 0.0)),
        )


@dataclass(frozen=True)
class MockDetectorSpec:
    kind: str
    seed: int = 0
    plants: dict[str, tuple[PlantedBox, ...]] = field(default_factory=dict)
    fp_plants: dict[str, tuple[PlantedBox, ...]] = field(default_factory=dict)
    preferred_hue: float = 0.0
    curvature: float = 1.0
    p_table: tuple[tuple[float, float], ...] = ()  # (hue-shift bucket center, p)
    ref_hue: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown mock kind {self.kind!r}; expected one of {KINDS}")
        if self.curvature <= 0.0:
            raise ValueError("curvature must be positive")
        for bucket, p in self.p_table:
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"p({bucket}) out of [0, 1]: {p}")
        if self.kind == "bernoulli" and not self.p_table:
            raise ValueError("bernoulli mock needs a p_table")
        object.__setattr__(
            self, "plants", {k: tuple(v) for k, v in self.plants.items()}
        )
        object.__setattr__(
            self, "fp_plants", {k: tuple(v) for k, v in self.fp_plants.items()}
        )

    def to_json(self) -> str:
        obj = {
            "kind": self.kind,
            "seed": self.seed,
            "preferred_hue": self.preferred_hue,
            "curvature": self.curvature,
            "ref_hue": self.ref_hue,
            "p_table": [[b, p] for b, p in self.p_table],
            "plants": {k: [p.to_obj() for p in v] for k, v in sorted(self.plants.items())},
            "fp_plants": {
                k: [p.to_obj() for p in v] for k, v in sorted(self.fp_plants.items())
            },
        }
        return json.dumps(obj, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MockDetectorSpec":
        obj = json.loads(text)
        return cls(
            kind=obj["kind"],
            seed=int(obj.get("seed", 0)),
            plants={
                k: tuple(PlantedBox.from_obj(p) for p in v)
                for k, v in obj.get("plants", {}).items()
            },
            fp_plants={
                k: tuple(PlantedBox.from_obj(p) for p in v)
                for k, v in obj.get("fp_plants", {}).items()
            },
            preferred_hue=float(obj.get("preferred_hue", 0.0)),
            curvature=float(obj.get("curvature", 1.0)),
            p_table=tuple((float(b), float(p)) for b, p in obj.get("p_table", [])),
            ref_hue=float(obj.get("ref_hue", 0.0)),
        )

    @classmethod
    def load(cls, path: Path | str) -> "MockDetectorSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _region_mean_hue(frame: ImageFrame, bbox: BBox) -> float:
    left, top, right, bottom = bbox.pixel_rect(frame.width, frame.height)
    if right <= left or bottom <= top:
        return 0.0
    hsv = rgb_to_hsv_array(frame.pixels[top:bottom, left:right])
    return circular_mean_hue(hsv[..., 0].ravel())


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def _emit(plant: PlantedBox, score: float, frame: ImageFrame) -> Detection:
    bbox = plant.bbox
    if plant.box_jitter != 0.0:
        hue = _region_mean_hue(frame, plant.bbox)
        ang = math.radians(hue - plant.phase_deg)
        bbox = BBox(
            _clamp01(plant.bbox.cx + plant.box_jitter * math.sin(ang)),
            _clamp01(plant.bbox.cy + plant.box_jitter * math.cos(ang)),
            plant.bbox.w,
            plant.bbox.h,
        )
    return Detection(bbox=bbox, class_id=plant.class_id, score=score)


def _wrapped_delta(a: float, b: float) -> float:
    """Signed circular difference a - b in [-180, 180)."""
    return (a - b + 180.0) % 360.0 - 180.0


def _coin(seed: int, image_id: str, pixels: np.ndarray) -> float:
    """Uniform [0, 1) coin, a pure function of the request content (not of
    request ids, so pool scheduling cannot change replies)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(b"bernoulli-coin")
    h.update(seed.to_bytes(8, "big", signed=True))
    h.update(image_id.encode("utf-8"))
    h.update(pixels.tobytes())
    return int.from_bytes(h.digest(), "big") / 2.0**64


def mock_detect(
    spec: MockDetectorSpec,
    frame: ImageFrame,
    conf_threshold: float,
    image_id: str | None = None,
) -> list[Detection]:
    image_id = image_id if image_id is not None else frame.image_id
    plants = spec.plants.get(image_id, ())

    out: list[Detection] = []
    if spec.kind == "oracle_stable":
        for plant in plants:
            if plant.score >= conf_threshold:
                out.append(_emit(plant, plant.score, frame))

    elif spec.kind == "hue_sensitive":
        for plant in plants:
            hue = _region_mean_hue(frame, plant.bbox)
            response = math.cos(math.radians(hue - spec.preferred_hue))
            score = _clamp01(plant.score * max(0.0, response) ** spec.curvature)
            if score >= conf_threshold:
                out.append(_emit(plant, score, frame))

    elif spec.kind == "fragile_fp":
        for plant in list(plants) + list(spec.fp_plants.get(image_id, ())):
            if plant.amplitude == 0.0:
                score = plant.score
            else:
                hue = _region_mean_hue(frame, plant.bbox)
                score = _clamp01(
                    plant.score
                    + plant.amplitude * math.cos(math.radians(hue - plant.phase_deg))
                )
            if score >= conf_threshold:
                out.append(_emit(plant, score, frame))

    elif spec.kind == "bernoulli":
        if plants:
            shift = _wrapped_delta(_region_mean_hue(frame, plants[0].bbox), spec.ref_hue)
            bucket = min(spec.p_table, key=lambda bp: abs(_wrapped_delta(shift, bp[0])))
            if _coin(spec.seed, image_id, frame.pixels) < bucket[1]:
                for plant in plants:
                    if plant.score >= conf_threshold:
                        out.append(_emit(plant, plant.score, frame))

    order = sorted(range(len(out)), key=lambda i: (-out[i].score, i))
    return [out[i] for i in order]


class MockAdapter(DetectorAdapter):
    """In-process adapter over :func:`mock_detect`; shares the detect_frame
    interface with SubprocessAdapter. Stateless and thread-safe."""

    def __init__(self, spec: MockDetectorSpec):
        self.spec = spec

    def detect_frame(
        self, frame: ImageFrame, conf_threshold: float, image_id: str | None = None
    ) -> list[Detection]:
        return mock_detect(self.spec, frame, conf_threshold, image_id=image_id)


def plants_from_labels(handle, splits=None, score: float = 0.9) -> dict[str, tuple[PlantedBox, ...]]:
    """Build a plant table from a dataset's ground-truth labels, so an
    oracle mock detects exactly the labeled objects."""
    table: dict[str, tuple[PlantedBox, ...]] = {}
    wanted = splits if splits is not None else sorted(handle.splits.keys())
    for split in wanted:
        for stem in handle.splits[split]:
            boxes = handle.labels(split, stem)
            table[stem] = tuple(
                PlantedBox(bbox=gt.bbox, class_id=gt.class_id, score=score) for gt in boxes
            )
    return table
