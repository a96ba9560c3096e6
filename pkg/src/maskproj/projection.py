"""Score-scaled mask projection: forward max-fusion and its exact backward pass.

Sampling convention, shared by the scalar reference path, the vectorized
kernel, and any foreign reimplementation that must match bit-exactly:

- canvas cell (py, px) has image-space center ((px + 0.5)*s, (py + 0.5)*s)
- normalized box coords u' = (x - x0) / (x1 - x0); a cell is covered iff
  u' in [0, 1) and v' in [0, 1), half-open so abutting boxes partition cells
- continuous mask coords u = u'*w - 0.5, clamped into [0, w-1]
  (replicate-border); corners u0 = floor(u), u1 = min(u0 + 1, w - 1),
  fraction fu = u - u0, likewise v over mask rows
- bilinear weights (w00, w01, w10, w11) =
  ((1-fv)*(1-fu), (1-fv)*fu, fv*(1-fu), fv*fu)
- sample = w00*m00 + w01*m01 + w10*m10 + w11*m11, evaluated left to right in
  float64; contribution = score * sample in float64, rounded once to the
  canvas dtype before comparison
- detections fold in ascending ordinal order with strictly-greater updates,
  so the winner at a cell is the lowest ordinal among maximizers and the
  result is independent of input list order

Backward accumulates in float64, visiting cells in (class, row, col) order;
per cell the four mask-corner contributions (grad * score) * w_k are added in
(00, 01, 10, 11) order and the score contribution grad * sample once, as a
sequential sum. The Detection-level wrapper rounds results to float32; the
array-level core keeps float64 for finite-difference work.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import (
    BBox,
    Canvas,
    CanvasSpec,
    Detection,
    ShapeMismatch,
    new_canvas,
    validate_detections,
)

NO_WINNER = -1


@dataclass(frozen=True)
class SamplePoint:
    """One bilinear sample into a mask grid: clamped coords, corners, weights."""

    u: float  # continuous mask column coordinate, clamped into [0, w-1]
    v: float  # continuous mask row coordinate, clamped into [0, h-1]
    u0: int
    v0: int
    u1: int
    v1: int
    weights: tuple[float, float, float, float]  # (w00, w01, w10, w11)

    @property
    def corners(self) -> tuple[tuple[int, int], ...]:
        # (row, col) pairs matching the weight order
        return ((self.v0, self.u0), (self.v0, self.u1), (self.v1, self.u0), (self.v1, self.u1))


@dataclass
class Provenance:
    """Per canvas cell: the winning detection ordinal and its bilinear sample.

    winner == NO_WINNER iff no covering detection produced a strictly positive
    contribution (the cell value is then exactly 0).
    """

    spec: CanvasSpec
    winner: np.ndarray  # (C, Hc, Wc) int32, detection ordinal or NO_WINNER
    v0: np.ndarray  # (C, Hc, Wc) int32
    u0: np.ndarray  # (C, Hc, Wc) int32
    fv: np.ndarray  # (C, Hc, Wc) float64
    fu: np.ndarray  # (C, Hc, Wc) float64

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.winner.shape


@dataclass
class DetectionGrad:
    """Gradients for one detection: scalar d_score and a (h, w) d_mask grid."""

    d_score: float
    d_mask: np.ndarray


def pre_map(
    cell: tuple[int, int], bbox: BBox, mask_dims: tuple[int, int], spec: CanvasSpec
) -> SamplePoint | None:
    """Map a canvas cell center into a detection's mask grid.

    Returns None when the cell center falls outside the box (not an error).
    """
    py, px = cell
    h, w = mask_dims
    s = spec.scale
    x = (px + 0.5) * s
    y = (py + 0.5) * s
    un = (x - bbox.x0) / (bbox.x1 - bbox.x0)
    vn = (y - bbox.y0) / (bbox.y1 - bbox.y0)
    if not (0.0 <= un < 1.0 and 0.0 <= vn < 1.0):
        return None
    u = min(max(un * w - 0.5, 0.0), w - 1.0)
    v = min(max(vn * h - 0.5, 0.0), h - 1.0)
    u0 = int(math.floor(u))
    v0 = int(math.floor(v))
    u1 = min(u0 + 1, w - 1)
    v1 = min(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    weights = ((1.0 - fv) * (1.0 - fu), (1.0 - fv) * fu, fv * (1.0 - fu), fv * fu)
    return SamplePoint(u=u, v=v, u0=u0, v0=v0, u1=u1, v1=v1, weights=weights)


def _axis_samples(lo: int, hi: int, b0: float, b1: float, scale: int, extent: int):
    """Per-axis coverage and clamped sample coordinates for cells lo..hi inclusive.

    Returns (inside, c0, frac) with c0 the floor corner and frac the fractional
    part, matching pre_map arithmetic exactly.
    """
    idx = np.arange(lo, hi + 1, dtype=np.int64)
    centers = (idx.astype(np.float64) + 0.5) * scale
    norm = (centers - b0) / (b1 - b0)
    inside = (norm >= 0.0) & (norm < 1.0)
    cont = np.clip(norm * extent - 0.5, 0.0, extent - 1.0)
    c0 = np.floor(cont).astype(np.int64)
    frac = cont - c0
    return inside, c0, frac


def _cell_bounds(b0: float, b1: float, scale: int, n: int) -> tuple[int, int]:
    # conservative cell range; the per-cell half-open coverage test is authoritative
    lo = max(0, int(math.floor(b0 / scale - 0.5)))
    hi = min(n - 1, int(math.ceil(b1 / scale - 0.5)))
    return lo, hi


def forward_arrays(
    boxes: np.ndarray,
    scores: np.ndarray,
    class_ids: np.ndarray,
    masks: list[np.ndarray],
    ordinals: np.ndarray,
    spec: CanvasSpec,
    dtype=np.float32,
) -> tuple[np.ndarray, Provenance]:
    """Array-level forward kernel over N detections given as raw buffers.

    boxes (N, 4) float64 xyxy, scores (N,) float64, class_ids (N,) int,
    masks a list of (h, w) float64 grids, ordinals (N,) unique ints.
    No validation; callers hold the invariants.
    """
    hc, wc = spec.canvas_height, spec.canvas_width
    shape = (spec.num_classes, hc, wc)
    values = np.zeros(shape, dtype=dtype)
    prov = Provenance(
        spec=spec,
        winner=np.full(shape, NO_WINNER, dtype=np.int32),
        v0=np.zeros(shape, dtype=np.int32),
        u0=np.zeros(shape, dtype=np.int32),
        fv=np.zeros(shape, dtype=np.float64),
        fu=np.zeros(shape, dtype=np.float64),
    )

    for k in np.argsort(ordinals):  # ascending ordinal: deterministic tie-break
        x0, y0, x1, y1 = (float(v) for v in boxes[k])
        m = masks[k]
        h, w = m.shape
        px_lo, px_hi = _cell_bounds(x0, x1, spec.scale, wc)
        py_lo, py_hi = _cell_bounds(y0, y1, spec.scale, hc)
        if px_lo > px_hi or py_lo > py_hi:
            continue  # box sits between cell centers: legal, zero coverage
        in_x, u0, fu = _axis_samples(px_lo, px_hi, x0, x1, spec.scale, w)
        in_y, v0, fv = _axis_samples(py_lo, py_hi, y0, y1, spec.scale, h)
        if not (in_x.any() and in_y.any()):
            continue
        u1 = np.minimum(u0 + 1, w - 1)
        v1 = np.minimum(v0 + 1, h - 1)

        m00 = m[np.ix_(v0, u0)]
        m01 = m[np.ix_(v0, u1)]
        m10 = m[np.ix_(v1, u0)]
        m11 = m[np.ix_(v1, u1)]
        gu0, gu1 = 1.0 - fu, fu
        gv0, gv1 = (1.0 - fv)[:, None], fv[:, None]
        sample = gv0 * gu0 * m00 + gv0 * gu1 * m01 + gv1 * gu0 * m10 + gv1 * gu1 * m11
        contrib = (float(scores[k]) * sample).astype(dtype)

        region = (int(class_ids[k]), slice(py_lo, py_hi + 1), slice(px_lo, px_hi + 1))
        upd = (in_y[:, None] & in_x[None, :]) & (contrib > values[region])
        if not upd.any():
            continue
        values[region][upd] = contrib[upd]
        prov.winner[region][upd] = int(ordinals[k])
        prov.v0[region][upd] = np.broadcast_to(v0[:, None], upd.shape)[upd]
        prov.u0[region][upd] = np.broadcast_to(u0[None, :], upd.shape)[upd]
        prov.fv[region][upd] = np.broadcast_to(fv[:, None], upd.shape)[upd]
        prov.fu[region][upd] = np.broadcast_to(fu[None, :], upd.shape)[upd]

    return values, prov


def backward_arrays(
    grad_canvas: np.ndarray,
    prov: Provenance,
    scores: np.ndarray,
    masks: list[np.ndarray],
    ordinals: np.ndarray,
    freeze_scores: bool = False,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Array-level backward: float64 gradients per detection, unrounded.

    Routes each winning cell's upstream gradient to the winner's score (times
    the bilinear mask sample) and to its four sampled mask corners (times
    score * weight).
    """
    if grad_canvas.shape != prov.shape:
        raise ShapeMismatch(f"grad_canvas shape {grad_canvas.shape} != {prov.shape}")
    grad64 = grad_canvas.astype(np.float64, copy=False)

    d_scores = np.zeros(len(scores), dtype=np.float64)
    d_masks = [np.zeros(m.shape, dtype=np.float64) for m in masks]
    for k in range(len(scores)):
        m = masks[k]
        h, w = m.shape
        cells = np.nonzero(prov.winner == int(ordinals[k]))  # (c, py, px) row-major
        if cells[0].size == 0:
            continue
        g = grad64[cells]
        v0 = prov.v0[cells].astype(np.int64)
        u0 = prov.u0[cells].astype(np.int64)
        fv = prov.fv[cells]
        fu = prov.fu[cells]
        v1 = np.minimum(v0 + 1, h - 1)
        u1 = np.minimum(u0 + 1, w - 1)
        w00 = (1.0 - fv) * (1.0 - fu)
        w01 = (1.0 - fv) * fu
        w10 = fv * (1.0 - fu)
        w11 = fv * fu

        sample = w00 * m[v0, u0] + w01 * m[v0, u1] + w10 * m[v1, u0] + w11 * m[v1, u1]
        if not freeze_scores:
            d_scores[k] = (g * sample).cumsum()[-1]  # sequential float64 sum in cell order

        gs = g * float(scores[k])
        rows = np.stack([v0, v0, v1, v1], axis=1).ravel()
        cols = np.stack([u0, u1, u0, u1], axis=1).ravel()
        vals = np.stack([gs * w00, gs * w01, gs * w10, gs * w11], axis=1).ravel()
        np.add.at(d_masks[k], (rows, cols), vals)  # cell-major, corners 00,01,10,11
    return d_scores, d_masks


def detections_to_arrays(detections: list[Detection]):
    """Unpack Detection objects into the raw buffers the array kernels take."""
    n = len(detections)
    boxes = np.zeros((n, 4), dtype=np.float64)
    scores = np.zeros(n, dtype=np.float64)
    class_ids = np.zeros(n, dtype=np.int64)
    ordinals = np.zeros(n, dtype=np.int64)
    masks = []
    for k, det in enumerate(detections):
        boxes[k] = (det.bbox.x0, det.bbox.y0, det.bbox.x1, det.bbox.y1)
        scores[k] = det.score
        class_ids[k] = det.class_id
        ordinals[k] = det.index
        masks.append(det.mask.values.astype(np.float64))
    return boxes, scores, class_ids, masks, ordinals


def imp_forward(
    detections: list[Detection],
    spec: CanvasSpec,
    dtype=np.float32,
    validate: bool = True,
) -> tuple[Canvas, Provenance]:
    """Project detections onto a per-class canvas under max fusion.

    canvas[c, p] = max over detections of class c covering p of
    score * bilinear(mask, sample at p), or 0 with no winner recorded.
    """
    if validate:
        validate_detections(detections, spec)
    boxes, scores, class_ids, masks, ordinals = detections_to_arrays(detections)
    values, prov = forward_arrays(boxes, scores, class_ids, masks, ordinals, spec, dtype=dtype)
    canvas = new_canvas(spec, dtype=dtype)
    canvas.values = values
    return canvas, prov


def imp_backward(
    grad_canvas: np.ndarray,
    prov: Provenance,
    detections: list[Detection],
    freeze_scores: bool = False,
) -> list[DetectionGrad]:
    """Route the canvas gradient to each winning detection's score and mask.

    At a cell won by detection i with weights w_k:
      d_score_i += g * bilinear(mask_i); d_mask_i[corner_k] += g * score_i * w_k.
    Cells without a winner contribute nothing; so do non-winning detections.
    Results are float32 per the storage convention.
    """
    _, scores, _, masks, ordinals = detections_to_arrays(detections)
    d_scores, d_masks = backward_arrays(
        grad_canvas, prov, scores, masks, ordinals, freeze_scores=freeze_scores
    )
    return [
        DetectionGrad(d_score=float(np.float32(ds)), d_mask=dm.astype(np.float32))
        for ds, dm in zip(d_scores, d_masks)
    ]
