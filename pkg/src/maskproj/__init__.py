"""maskproj: instance mask projection onto per-class canvases, with an exact
backward pass, projection-only semantic segmentation, and boundary-stratified
evaluation utilities."""

from .types import (
    BBox,
    Canvas,
    CanvasSpec,
    ClassOutOfRange,
    Detection,
    InstanceMask,
    InvalidBox,
    InvalidMaskValue,
    InvalidScore,
    LabelMap,
    LabelOutOfRange,
    MaskProjError,
    ShapeMismatch,
    ValidationError,
    new_canvas,
    validate_detection,
    validate_detections,
)
from .projection import (
    NO_WINNER,
    DetectionGrad,
    Provenance,
    SamplePoint,
    imp_backward,
    imp_forward,
    pre_map,
)
from .semantic import canvas_to_labels, project_to_semantic, upsample_labels

__all__ = [
    "BBox",
    "Canvas",
    "CanvasSpec",
    "ClassOutOfRange",
    "Detection",
    "DetectionGrad",
    "InstanceMask",
    "InvalidBox",
    "InvalidMaskValue",
    "InvalidScore",
    "LabelMap",
    "LabelOutOfRange",
    "MaskProjError",
    "NO_WINNER",
    "Provenance",
    "SamplePoint",
    "ShapeMismatch",
    "ValidationError",
    "canvas_to_labels",
    "imp_backward",
    "imp_forward",
    "new_canvas",
    "pre_map",
    "project_to_semantic",
    "upsample_labels",
    "validate_detection",
    "validate_detections",
]

__version__ = "0.1.0"
