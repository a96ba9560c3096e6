"""Core domain types shared by the projection kernel and the evaluation pipeline.

All real-valued payloads are stored as float32; metric accumulation happens in
64-bit (integer counts / float64 sums) elsewhere. Types are immutable after
construction except Canvas values during a projection pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

IGNORE_DEFAULT = 255


class MaskProjError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MaskProjError):
    """A detection violates one of its invariants."""


class InvalidScore(ValidationError):
    pass


class InvalidBox(ValidationError):
    pass


class InvalidMaskValue(ValidationError):
    pass


class ClassOutOfRange(ValidationError):
    pass


class ShapeMismatch(MaskProjError):
    """Two grids that must share dimensions do not."""


class LabelOutOfRange(MaskProjError):
    """A label map contains a value that is neither a class id nor a sentinel."""


def _f32(x: float) -> float:
    # round-trip through float32 so stored coordinates are exactly representable
    return float(np.float32(x))


@dataclass(frozen=True)
class BBox:
    """Continuous corner box (x0, y0, x1, y1) in image pixels, origin top-left."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        for name in ("x0", "y0", "x1", "y1"):
            object.__setattr__(self, name, _f32(getattr(self, name)))

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0


@dataclass(frozen=True)
class InstanceMask:
    """Row-major (h, w) grid of mask probabilities in [0, 1], stored float32."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatch("InstanceMask.values must be a 2D (h, w) grid with h, w >= 1")
        object.__setattr__(self, "values", arr)

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Detection:
    """One instance prediction: class, confidence, box, and soft mask."""

    class_id: int
    score: float
    bbox: BBox
    mask: InstanceMask
    index: int  # ordinal within its image; unique and contiguous from 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "score", _f32(self.score))


@dataclass(frozen=True)
class CanvasSpec:
    """Canvas geometry: per-class grid at 1/scale of the image resolution.

    One canvas cell covers a scale x scale block of image pixels, so the grid is
    ceil(H/scale) x ceil(W/scale).
    """

    num_classes: int
    height: int  # image pixels
    width: int  # image pixels
    scale: int = 1

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.height < 1 or self.width < 1:
            raise ValueError("image dims must be >= 1")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")

    @property
    def canvas_height(self) -> int:
        return -(-self.height // self.scale)

    @property
    def canvas_width(self) -> int:
        return -(-self.width // self.scale)


@dataclass
class Canvas:
    """Fused, score-scaled mask probabilities: (C, Hc, Wc), values in [0, 1].

    float32 is the storage dtype; float64 is allowed for the differentiable
    path where intermediate rounding would drown finite-difference checks.
    """

    spec: CanvasSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        expected = (self.spec.num_classes, self.spec.canvas_height, self.spec.canvas_width)
        if self.values.shape != expected:
            raise ShapeMismatch(f"canvas values shape {self.values.shape} != {expected}")
        if self.values.dtype not in (np.float32, np.float64):
            raise ValueError("canvas dtype must be float32 or float64")


def new_canvas(spec: CanvasSpec, dtype=np.float32) -> Canvas:
    """Zero-initialized canvas; an empty detection list leaves it all-zero."""
    shape = (spec.num_classes, spec.canvas_height, spec.canvas_width)
    return Canvas(spec=spec, values=np.zeros(shape, dtype=dtype))


@dataclass(frozen=True)
class LabelMap:
    """(H, W) integer class labels with BACKGROUND = num_classes and an ignore sentinel."""

    values: np.ndarray
    num_classes: int
    ignore_value: int = IGNORE_DEFAULT

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.values)
        if arr.ndim != 2:
            raise ShapeMismatch("LabelMap.values must be 2D (H, W)")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("LabelMap.values must have an integer dtype")
        object.__setattr__(self, "values", arr)
        bad = (arr != self.ignore_value) & ((arr < 0) | (arr > self.background))
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise LabelOutOfRange(
                f"label {int(arr[y, x])} at ({int(y)}, {int(x)}) is not a class id, "
                f"BACKGROUND ({self.background}) or IGNORE ({self.ignore_value})"
            )

    @property
    def background(self) -> int:
        return self.num_classes

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def validate_detection(det: Detection, spec: CanvasSpec) -> None:
    """Raise a ValidationError subclass naming the offending field.

    The bbox may extend outside the image; projection clips to the canvas.
    """
    if not (0 <= det.class_id < spec.num_classes):
        raise ClassOutOfRange(
            f"class_id: {det.class_id} not in [0, {spec.num_classes})"
        )
    if not math.isfinite(det.score) or not (0.0 <= det.score <= 1.0):
        raise InvalidScore(f"score: {det.score!r} not in [0, 1]")
    b = det.bbox
    for name, v in (("x0", b.x0), ("y0", b.y0), ("x1", b.x1), ("y1", b.y1)):
        if not math.isfinite(v):
            raise InvalidBox(f"bbox.{name}: {v!r} is not finite")
    if not (b.x1 > b.x0 and b.y1 > b.y0):
        raise InvalidBox(f"bbox: ({b.x0}, {b.y0}, {b.x1}, {b.y1}) has non-positive extent")
    m = det.mask.values
    if not np.isfinite(m).all() or m.min() < 0.0 or m.max() > 1.0:
        raise InvalidMaskValue("mask: values must be finite and in [0, 1]")
    if det.index < 0:
        raise ValidationError(f"index: {det.index} must be >= 0")


def validate_detections(dets: list[Detection], spec: CanvasSpec) -> None:
    """Validate every detection and the uniqueness of per-image ordinals."""
    seen: set[int] = set()
    for det in dets:
        validate_detection(det, spec)
        if det.index in seen:
            raise ValidationError(f"index: ordinal {det.index} appears more than once")
        seen.add(det.index)
