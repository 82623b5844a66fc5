import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajformer.geometry import (
    BoxState,
    SentinelBoxError,
    bev_iou,
    bev_polygon,
    box_corners,
    crop_and_sample_points,
    points_in_box,
    relative_point_encoding,
    wrap_angle,
)

from conftest import car


def unit(x=0.0, y=0.0, heading=0.0):
    return BoxState(x, y, 0.0, 1.0, 1.0, 1.0, heading)


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert wrap_angle(0.3) == 0.3


def test_box_validation():
    with pytest.raises(ValueError):
        BoxState(0, 0, 0, -1.0, 1.0, 1.0, 0.0)
    s = BoxState.sentinel(4)
    assert s.is_sentinel and s.t == 4
    assert BoxState(0, 0, 0, 1, 1, 1, 4.0).heading == pytest.approx(4.0 - 2 * math.pi)


def test_unit_cube_corners():
    c = box_corners(unit())
    assert np.array_equal(np.abs(c[:8]), np.full((8, 3), 0.5))
    assert np.array_equal(c[8], np.zeros(3))
    assert c[0].tolist() == [0.5, 0.5, 0.5]


def test_rotated_cube_corners():
    c = box_corners(unit(heading=math.pi / 2))
    # (x, y) -> (-y, x)
    ref = box_corners(unit())
    assert np.allclose(c[:, 0], -ref[:, 1], atol=1e-15)
    assert np.allclose(c[:, 1], ref[:, 0], atol=1e-15)
    assert np.allclose(c.mean(axis=0), 0.0, atol=1e-15)


@given(
    st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 6), st.floats(0.1, 3), st.floats(-math.pi, math.pi)
)
def test_corner_centroid_is_center(x, y, l, w, heading):
    b = BoxState(x, y, 1.0, l, w, 1.5, heading)
    assert np.allclose(box_corners(b)[:8].mean(axis=0), b.center, atol=1e-9)


def test_sentinel_rejected_by_geometry():
    with pytest.raises(SentinelBoxError):
        box_corners(BoxState.sentinel())
    with pytest.raises(SentinelBoxError):
        bev_iou(BoxState.sentinel(), unit())


def test_iou_examples():
    assert bev_iou(unit(), unit()) == pytest.approx(1.0)
    assert bev_iou(unit(), unit(100.0)) == 0.0
    assert bev_iou(unit(), unit(0.5)) == pytest.approx(1 / 3, abs=1e-12)


@settings(max_examples=50)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
def test_iou_symmetric_and_bounded(dx, dy, ha, hb):
    a, b = car(heading=ha), car(dx, dy, hb)
    v = bev_iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == bev_iou(b, a)


def _mc_iou(a, b, rng, n=100_000):
    pa, pb = bev_polygon(a), bev_polygon(b)
    allp = np.vstack([pa, pb])
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    pts = rng.uniform(lo, hi, size=(n, 2))
    pts3 = np.column_stack([pts, np.full(n, a.z)])
    ina = points_in_box(pts3, a, margin=0.0)
    inb = points_in_box(np.column_stack([pts, np.full(n, b.z)]), b, margin=0.0)
    union = (ina | inb).sum()
    return (ina & inb).sum() / union if union else 0.0


def test_iou_against_monte_carlo_sample(rng):
    for _ in range(10):
        a = car(heading=rng.uniform(-math.pi, math.pi))
        b = car(*rng.uniform(-2, 2, size=2), heading=rng.uniform(-math.pi, math.pi))
        assert abs(bev_iou(a, b) - _mc_iou(a, b, rng)) < 0.01


def test_crop_single_point_is_repeated():
    b = car()
    cloud = np.array([[0.0, 0.0, 0.8, 0.0]])
    s = crop_and_sample_points(cloud, b, 16, np.random.default_rng(0))
    assert not s.empty
    assert np.array_equal(s.points, np.tile(cloud, (16, 1)))


def test_crop_distinct_points_inside(rng):
    b = car(3.0, -2.0, 0.7)
    local = rng.uniform(-0.5, 0.5, size=(200, 3)) * np.array([b.l, b.w, b.h])
    c, s = math.cos(b.heading), math.sin(b.heading)
    world = np.column_stack(
        [c * local[:, 0] - s * local[:, 1] + b.x, s * local[:, 0] + c * local[:, 1] + b.y, local[:, 2] + b.z]
    )
    outside = np.array([[50.0, 50.0, 0.0]])
    cloud = np.column_stack([np.vstack([world, outside]), np.zeros(201)])
    sample = crop_and_sample_points(cloud, b, 128, rng)
    assert len(np.unique(sample.points, axis=0)) == 128
    assert points_in_box(sample.points, b).all()


def test_crop_empty_cloud_falls_back_to_center():
    b = car(1.0, 2.0)
    s = crop_and_sample_points(np.zeros((0, 4)), b, 8, np.random.default_rng(0))
    assert s.empty
    assert np.array_equal(s.points[:, :3], np.tile(b.center, (8, 1)))


def test_encoding_center_point():
    b = car()
    enc = relative_point_encoding(np.array([[0.0, 0.0, 0.8, -1.0]]), b)
    assert enc.shape == (1, 28)
    assert enc[0, 24:27].tolist() == [0.0, 0.0, 0.0]
    assert enc[0, 27] == -1.0


def test_encoding_translation_invariant():
    b = car(1.0, 2.0, 0.4)
    p = np.array([[1.5, 2.25, 1.0, 0.0]])
    shifted = b.with_(x=b.x + 10.0)
    q = p + np.array([10.0, 0.0, 0.0, 0.0])
    assert np.allclose(relative_point_encoding(p, b), relative_point_encoding(q, shifted), atol=1e-12)


def test_encoding_reconstructs_point(rng):
    b = car(*rng.normal(size=2), heading=rng.uniform(-3, 3))
    p = np.concatenate([rng.normal(size=3), [0.0]])[None]
    diffs = relative_point_encoding(p, b)[0, :27].reshape(9, 3)
    corners = box_corners(b)
    assert np.allclose(corners + diffs, p[0, :3], atol=1e-9)
