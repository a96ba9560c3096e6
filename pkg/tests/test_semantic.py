"""Canvas decision layer and the projection-only segmentation pipeline."""
from __future__ import annotations

import numpy as np
import pytest

from maskproj import (
    BBox,
    Canvas,
    CanvasSpec,
    Detection,
    InstanceMask,
    ShapeMismatch,
    canvas_to_labels,
    imp_forward,
    project_to_semantic,
    upsample_labels,
)
from maskproj.fixtures import random_instance
from maskproj.types import LabelMap

from oracles import rasterize_semantic


def canvas_from(vals: np.ndarray, scale: int = 1) -> Canvas:
    c, hc, wc = vals.shape
    spec = CanvasSpec(num_classes=c, height=hc * scale, width=wc * scale, scale=scale)
    return Canvas(spec=spec, values=vals.astype(np.float32))


# ── canvas_to_labels ─────────────────────────────────────────────────────


def test_labels_all_zero_canvas_is_background():
    canvas = canvas_from(np.zeros((3, 4, 4)))
    labels = canvas_to_labels(canvas, 0.5)
    assert np.all(labels.values == 3)


def test_labels_dominant_channel_wins():
    vals = np.zeros((3, 4, 4))
    vals[1] = 0.9
    labels = canvas_to_labels(canvas_from(vals), 0.5)
    assert np.all(labels.values == 1)


def test_labels_tie_breaks_to_lowest_class():
    vals = np.zeros((3, 1, 1))
    vals[:, 0, 0] = (0.4, 0.6, 0.6)
    labels = canvas_to_labels(canvas_from(vals), 0.5)
    assert labels.values[0, 0] == 1


def test_labels_threshold_is_strict():
    vals = np.full((2, 2, 2), 0.5)
    labels = canvas_to_labels(canvas_from(vals), 0.5)
    assert np.all(labels.values == 2)  # 0.5 > 0.5 is false -> background


def test_labels_rejects_bad_tau():
    canvas = canvas_from(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        canvas_to_labels(canvas, 1.5)


# ── upsample_labels ──────────────────────────────────────────────────────


def test_upsample_scale_one_identity():
    spec = CanvasSpec(num_classes=2, height=3, width=5, scale=1)
    labels = LabelMap(values=np.arange(15, dtype=np.int32).reshape(3, 5) % 3, num_classes=2)
    up = upsample_labels(labels, spec)
    assert np.array_equal(up.values, labels.values)


def test_upsample_blocks():
    spec = CanvasSpec(num_classes=4, height=8, width=8, scale=4)
    labels = LabelMap(values=np.array([[0, 1], [2, 3]], dtype=np.int32), num_classes=4)
    up = upsample_labels(labels, spec)
    assert up.values.shape == (8, 8)
    assert np.all(up.values[:4, :4] == 0)
    assert np.all(up.values[:4, 4:] == 1)
    assert np.all(up.values[4:, :4] == 2)
    assert np.all(up.values[4:, 4:] == 3)


def test_upsample_non_divisible_crops_last_blocks():
    spec = CanvasSpec(num_classes=4, height=5, width=5, scale=4)
    labels = LabelMap(values=np.array([[0, 1], [2, 3]], dtype=np.int32), num_classes=4)
    up = upsample_labels(labels, spec)
    assert up.values.shape == (5, 5)
    assert np.all(up.values[:4, :4] == 0)
    assert np.all(up.values[:4, 4] == 1)
    assert np.all(up.values[4, :4] == 2)
    assert up.values[4, 4] == 3


def test_upsample_shape_mismatch():
    spec = CanvasSpec(num_classes=2, height=8, width=8, scale=4)
    labels = LabelMap(values=np.zeros((3, 3), dtype=np.int32), num_classes=2)
    with pytest.raises(ShapeMismatch):
        upsample_labels(labels, spec)


# ── project_to_semantic ──────────────────────────────────────────────────


def test_project_empty_is_background():
    spec = CanvasSpec(num_classes=3, height=10, width=12, scale=4)
    labels = project_to_semantic([], spec, tau=0.5)
    assert labels.values.shape == (10, 12)
    assert np.all(labels.values == 3)


def test_project_full_cover_single_class():
    spec = CanvasSpec(num_classes=2, height=16, width=16, scale=4)
    det = Detection(
        0, 0.9, BBox(0, 0, 17, 17), InstanceMask(np.ones((2, 2), np.float32)), index=0
    )
    labels = project_to_semantic([det], spec, tau=0.5)
    assert np.all(labels.values == 0)


def test_project_matches_rasterization_oracle_two_rectangles():
    spec = CanvasSpec(num_classes=2, height=32, width=32, scale=4)
    ones = np.ones((4, 4), np.float32)
    dets = [
        Detection(0, 0.9, BBox(2, 2, 14, 14), InstanceMask(ones), index=0),
        Detection(1, 0.8, BBox(18, 16, 30, 30), InstanceMask(ones), index=1),
    ]
    labels = project_to_semantic(dets, spec, tau=0.5)
    ref = rasterize_semantic(dets, spec, tau=0.5)
    assert np.array_equal(labels.values, ref)


def test_project_matches_rasterization_oracle_random():
    for seed in range(10):
        dets, spec = random_instance(seed + 9000, max_canvas=8, max_dets=5, max_mask=(4, 4))
        labels = project_to_semantic(dets, spec, tau=0.4)
        ref = rasterize_semantic(dets, spec, tau=0.4)
        assert np.array_equal(labels.values, ref)


def test_project_order_invariant():
    rng = np.random.default_rng(31)
    dets, spec = random_instance(123)
    base = project_to_semantic(dets, spec, tau=0.3)
    for _ in range(4):
        shuffled = list(dets)
        rng.shuffle(shuffled)
        assert np.array_equal(project_to_semantic(shuffled, spec, tau=0.3).values, base.values)


def test_project_tau_at_max_score_is_background():
    dets, spec = random_instance(77)
    top = max((d.score for d in dets), default=0.0)
    labels = project_to_semantic(dets, spec, tau=min(1.0, top))
    assert np.all(labels.values == spec.num_classes)


def test_project_equals_composed_pipeline():
    for seed in range(6):
        dets, spec = random_instance(seed + 9500)
        canvas, _ = imp_forward(dets, spec)
        composed = upsample_labels(canvas_to_labels(canvas, 0.5), spec)
        fused = project_to_semantic(dets, spec, tau=0.5)
        assert np.array_equal(fused.values, composed.values)


def test_project_bilinear_mode_identity_at_scale_one():
    dets, spec = random_instance(55, scale=1)
    a = project_to_semantic(dets, spec, tau=0.5, upsample="nearest")
    b = project_to_semantic(dets, spec, tau=0.5, upsample="bilinear")
    assert np.array_equal(a.values, b.values)


def test_project_rejects_unknown_upsample_mode():
    spec = CanvasSpec(num_classes=1, height=4, width=4, scale=1)
    with pytest.raises(ValueError):
        project_to_semantic([], spec, tau=0.5, upsample="cubic")
