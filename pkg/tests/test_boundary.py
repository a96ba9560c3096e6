"""Boundary extraction, exact distance transform, and distance-stratified counts."""
from __future__ import annotations

import numpy as np
import pytest

from maskproj import LabelMap, ShapeMismatch
from maskproj.boundary import (
    accumulate_within,
    boundary_pixels,
    distance_transform,
)
from maskproj.metrics import ConfusionMatrix, accumulate

from oracles import brute_force_edt


def lm(vals, num_classes=2, ignore=255) -> LabelMap:
    return LabelMap(values=np.asarray(vals, dtype=np.int32), num_classes=num_classes, ignore_value=ignore)


def test_boundary_uniform_map_has_none():
    assert not boundary_pixels(lm(np.ones((8, 8)))).any()


def test_boundary_half_split_two_columns():
    vals = np.zeros((6, 8), dtype=np.int32)
    vals[:, 4:] = 1
    b = boundary_pixels(lm(vals))
    expected = np.zeros((6, 8), dtype=bool)
    expected[:, 3:5] = True
    assert np.array_equal(b, expected)


def test_boundary_single_differing_pixel():
    vals = np.zeros((5, 5), dtype=np.int32)
    vals[2, 2] = 1
    b = boundary_pixels(lm(vals))
    expected = np.zeros((5, 5), dtype=bool)
    expected[2, 2] = True
    expected[1, 2] = expected[3, 2] = expected[2, 1] = expected[2, 3] = True
    assert np.array_equal(b, expected)


def test_boundary_ignore_is_inert():
    vals = np.zeros((4, 4), dtype=np.int32)
    vals[:, 2:] = 255  # ignore region adjoins class 0: no boundary
    b = boundary_pixels(lm(vals))
    assert not b.any()


def test_edt_all_boundary_is_zero():
    d = distance_transform(np.ones((5, 7), dtype=bool))
    assert np.all(d == 0.0)


def test_edt_single_source_pythagoras():
    b = np.zeros((6, 6), dtype=bool)
    b[0, 0] = True
    d = distance_transform(b)
    assert d[3, 4] == 5.0
    assert d[0, 0] == 0.0


def test_edt_no_boundary_is_infinite():
    d = distance_transform(np.zeros((4, 4), dtype=bool))
    assert np.all(np.isinf(d))


def test_edt_matches_brute_force_random():
    rng = np.random.default_rng(5)
    for trial in range(12):
        h, w = int(rng.integers(1, 33)), int(rng.integers(1, 33))
        b = rng.uniform(size=(h, w)) < 0.08
        got = distance_transform(b)
        ref = brute_force_edt(b)
        finite = np.isfinite(ref)
        assert np.array_equal(np.isfinite(got), finite)
        assert np.all(np.abs(got[finite] - ref[finite]) <= 1e-9)


def test_edt_lipschitz():
    rng = np.random.default_rng(9)
    b = rng.uniform(size=(24, 24)) < 0.05
    if not b.any():
        b[0, 0] = True
    d = distance_transform(b)
    assert np.all(np.abs(np.diff(d, axis=0)) <= 1.0 + 1e-12)
    assert np.all(np.abs(np.diff(d, axis=1)) <= 1.0 + 1e-12)


def test_within_infinite_threshold_equals_plain_accumulate():
    rng = np.random.default_rng(3)
    gt = lm(rng.integers(0, 3, size=(12, 12)))
    pred = lm(rng.integers(0, 3, size=(12, 12)))
    dist = distance_transform(boundary_pixels(gt))
    a = accumulate_within(ConfusionMatrix(2), pred, gt, dist, np.inf)
    b = accumulate(ConfusionMatrix(2), pred, gt)
    assert np.array_equal(a.counts, b.counts)


def test_within_zero_counts_only_boundary():
    vals = np.zeros((6, 8), dtype=np.int32)
    vals[:, 4:] = 1
    gt = lm(vals)
    pred = lm(vals)
    dist = distance_transform(boundary_pixels(gt))
    cm = accumulate_within(ConfusionMatrix(2), pred, gt, dist, 0.0)
    assert cm.total == int(boundary_pixels(gt).sum())


def test_within_one_on_half_split_counts_two_columns():
    vals = np.zeros((6, 8), dtype=np.int32)
    vals[:, 4:] = 1
    gt = lm(vals)
    dist = distance_transform(boundary_pixels(gt))
    cm = accumulate_within(ConfusionMatrix(2), gt, gt, dist, 0.5)
    # the two boundary columns are at distance 0; all other pixels >= 1
    assert cm.total == 12


def test_within_monotone_in_threshold():
    rng = np.random.default_rng(17)
    gt = lm(rng.integers(0, 3, size=(20, 20)))
    pred = lm(rng.integers(0, 3, size=(20, 20)))
    dist = distance_transform(boundary_pixels(gt))
    prev = None
    for d in (0.0, 1.0, 2.0, 5.0, 10.0, np.inf):
        cm = accumulate_within(ConfusionMatrix(2), pred, gt, dist, d)
        if prev is not None:
            assert np.all(cm.counts >= prev)
        prev = cm.counts


def test_within_shape_mismatch():
    gt = lm(np.zeros((4, 4)))
    with pytest.raises(ShapeMismatch):
        accumulate_within(ConfusionMatrix(2), gt, gt, np.zeros((3, 3)), 1.0)
