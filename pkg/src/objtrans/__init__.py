"""Object-level HSV test-time augmentation toolkit.

Training side: masked color perturbation of labeled object instances to
generate augmented detection datasets. Inference side: controlled color
sweeps over detected objects, re-detection, and variance-based uncertainty
scores used to filter unstable false positives and recover false negatives,
with calibration and evaluation tooling. Deterministic mock detectors make
the whole pipeline runnable and testable without any trained model.
"""

from .core import (
    ANCHOR_RUN,
    BBox,
    CombineWeights,
    Detection,
    GroundTruthBox,
    HsvParams,
    ImageFrame,
    InstanceMask,
    UncertaintyScore,
    bbox_iou,
    population_variance,
)
from .colorspace import HsvPixel, apply_hsv_params, hsv_to_rgb, rgb_to_hsv
from .transforms import (
    AugmentationPlan,
    TransformSampler,
    generate_augmented_dataset,
    perturb_object,
    sample_params,
)
from .uq import (
    PerturbationRunSet,
    UqConfig,
    associate,
    decompose_variance,
    run_tta,
    score_uncertainty,
)

__version__ = "0.1.0"

__all__ = [
    "ANCHOR_RUN",
    "AugmentationPlan",
    "BBox",
    "CombineWeights",
    "Detection",
    "GroundTruthBox",
    "HsvParams",
    "HsvPixel",
    "ImageFrame",
    "InstanceMask",
    "PerturbationRunSet",
    "TransformSampler",
    "UncertaintyScore",
    "UqConfig",
    "apply_hsv_params",
    "associate",
    "bbox_iou",
    "decompose_variance",
    "generate_augmented_dataset",
    "hsv_to_rgb",
    "perturb_object",
    "population_variance",
    "rgb_to_hsv",
    "run_tta",
    "sample_params",
    "score_uncertainty",
    "__version__",
]
