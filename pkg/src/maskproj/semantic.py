"""Decision layer: per-class canvases to dense semantic label maps.

The canvas-to-labels rule is pure argmax-with-threshold: the background label
wins unless some class value strictly exceeds tau; ties between classes break
toward the lowest class id. Upsampling back to image resolution is
nearest-cell by default (pixel (y, x) reads cell (y // s, x // s)), with an
optional bilinear mode that interpolates the canvas first and applies the
decision rule at full resolution.
"""
from __future__ import annotations

import numpy as np

from .projection import imp_forward
from .types import Canvas, CanvasSpec, Detection, LabelMap, ShapeMismatch

DEFAULT_IGNORE = 255


def canvas_to_labels(canvas: Canvas, tau: float, ignore_value: int = DEFAULT_IGNORE) -> LabelMap:
    """Argmax the canvas into a label map at canvas resolution.

    A cell gets class argmax_c canvas[c] when that value is strictly greater
    than tau, else the background label (== num_classes). With equal maxima
    the lowest class id wins.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    spec = canvas.spec
    best = np.argmax(canvas.values, axis=0)  # first occurrence: lowest class id
    top = np.take_along_axis(canvas.values, best[None], axis=0)[0]
    labels = np.where(top > tau, best, spec.num_classes).astype(np.int32)
    return LabelMap(values=labels, num_classes=spec.num_classes, ignore_value=ignore_value)


def upsample_labels(labels: LabelMap, spec: CanvasSpec) -> LabelMap:
    """Expand a canvas-resolution label map to image resolution, nearest-cell.

    Pixel (y, x) takes the label of cell (y // scale, x // scale); the last
    cells crop to the true image extent when scale does not divide the sides.
    """
    hc, wc = spec.canvas_height, spec.canvas_width
    if labels.values.shape != (hc, wc):
        raise ShapeMismatch(
            f"label map shape {labels.values.shape} != canvas dims {(hc, wc)}"
        )
    ys = np.arange(spec.height) // spec.scale
    xs = np.arange(spec.width) // spec.scale
    full = labels.values[np.ix_(ys, xs)]
    return LabelMap(values=full, num_classes=labels.num_classes, ignore_value=labels.ignore_value)


def _upsample_canvas_bilinear(canvas: Canvas) -> np.ndarray:
    """Bilinearly interpolate canvas channels to image resolution (float64).

    Pixel center (x + 0.5) maps to continuous cell coordinate
    (x + 0.5) / scale - 0.5, clamped to the cell grid (replicate border).
    """
    spec = canvas.spec
    hc, wc = spec.canvas_height, spec.canvas_width

    def axis(n_out: int, n_cells: int, s: int):
        t = np.clip((np.arange(n_out) + 0.5) / s - 0.5, 0.0, n_cells - 1.0)
        c0 = np.floor(t).astype(np.int64)
        c1 = np.minimum(c0 + 1, n_cells - 1)
        f = t - c0
        return c0, c1, f

    y0, y1, fy = axis(spec.height, hc, spec.scale)
    x0, x1, fx = axis(spec.width, wc, spec.scale)
    vals = canvas.values.astype(np.float64)
    gy0, gy1 = (1.0 - fy)[:, None], fy[:, None]
    gx0, gx1 = 1.0 - fx, fx
    return (
        gy0 * gx0 * vals[:, y0][:, :, x0]
        + gy0 * gx1 * vals[:, y0][:, :, x1]
        + gy1 * gx0 * vals[:, y1][:, :, x0]
        + gy1 * gx1 * vals[:, y1][:, :, x1]
    )


def project_to_semantic(
    detections: list[Detection],
    spec: CanvasSpec,
    tau: float,
    ignore_value: int = DEFAULT_IGNORE,
    upsample: str = "nearest",
) -> LabelMap:
    """Project detections and decide a full-resolution semantic label map.

    upsample="nearest" argmaxes at canvas resolution then replicates cells;
    upsample="bilinear" interpolates the canvas to image resolution first and
    applies the same decision rule per pixel.
    """
    if upsample not in ("nearest", "bilinear"):
        raise ValueError(f"upsample must be 'nearest' or 'bilinear', got {upsample!r}")
    canvas, _ = imp_forward(detections, spec)
    if upsample == "nearest":
        labels = canvas_to_labels(canvas, tau, ignore_value=ignore_value)
        return upsample_labels(labels, spec)
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    full = _upsample_canvas_bilinear(canvas)
    best = np.argmax(full, axis=0)
    top = np.take_along_axis(full, best[None], axis=0)[0]
    labels = np.where(top > tau, best, spec.num_classes).astype(np.int32)
    return LabelMap(values=labels, num_classes=spec.num_classes, ignore_value=ignore_value)
