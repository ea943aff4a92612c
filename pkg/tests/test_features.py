import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurframe.features import (FeatureGrid, FeatureSet, NoFeaturesError, detect_features, feature_distance,
                                feature_distance_brute, point_segment_distance)
from neurframe.mesh import generate_primitive, normalize_to_unit_box

points3 = st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3).map(np.array)


@settings(max_examples=60, deadline=None)
@given(points3, points3, points3)
def test_point_segment_distance_against_dense_sampling(p, a, b):
    if np.linalg.norm(b - a) < 1e-3:
        return
    t = np.linspace(0, 1, 20001)
    dense = np.min(np.linalg.norm(a + t[:, None] * (b - a) - p, axis=1))
    d = float(point_segment_distance(p, a, b))
    assert d <= dense + 1e-12
    assert d >= dense - np.linalg.norm(b - a) / 20000 - 1e-12


def test_cube_features_are_its_twelve_edges():
    mesh, _ = normalize_to_unit_box(generate_primitive("cube", 3))
    f = detect_features(mesh)
    assert len(f) == 12
    assert np.allclose(np.linalg.norm(f.b - f.a, axis=1), 2.0)
    # every edge is axis-parallel and lies on two cube faces
    assert np.allclose(np.sort(np.abs(f.directions), axis=1), [0, 0, 1])
    mid = (f.a + f.b) / 2
    assert np.all(np.sum(np.isclose(np.abs(mid), 1.0), axis=1) == 2)


def test_l_shape_has_a_concave_edge():
    mesh, _ = normalize_to_unit_box(generate_primitive("l_shape", 2))
    f = detect_features(mesh)
    # 12 convex box-like edges split by the notch plus the re-entrant vertical edge
    mid = (f.a + f.b) / 2
    assert np.any(np.all(np.isclose(mid[:, :2], [0.0, 0.0]), axis=1))
    assert len(f) == 18


def test_cylinder_features_are_rims():
    mesh, _ = normalize_to_unit_box(generate_primitive("cylinder", 3))
    f = detect_features(mesh)
    assert len(f) > 0
    assert np.allclose(np.abs(f.a[:, 2]), 1.0) and np.allclose(np.abs(f.b[:, 2]), 1.0)


def test_smooth_threshold_gives_no_features():
    mesh = generate_primitive("cube", 2)
    assert len(detect_features(mesh, angle_threshold=np.pi)) == 0


def test_grid_matches_brute_force(rng):
    mesh, _ = normalize_to_unit_box(generate_primitive("l_shape", 2))
    f = detect_features(mesh)
    grid = FeatureGrid(f, cell=0.1)
    pts = rng.uniform(-1.3, 1.3, size=(3000, 3))  # includes points outside the grid
    d, i = grid.query_many(pts)
    db, ib = feature_distance_brute(pts, f)
    assert np.array_equal(d, db)
    assert np.array_equal(i, ib)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_grid_exact_for_random_segments(seed):
    r = np.random.default_rng(seed)
    f = FeatureSet(r.uniform(-1, 1, (7, 3)), r.uniform(-1, 1, (7, 3)))
    grid = FeatureGrid(f, cell=0.2)
    pts = r.uniform(-1.2, 1.2, (200, 3))
    assert np.array_equal(grid.query_many(pts)[0], feature_distance_brute(pts, f)[0])


def test_feature_distance_returns_direction():
    f = FeatureSet([[0, 0, 0.0]], [[0, 0, 2.0]])
    d, direction = feature_distance(np.array([1.0, 0, 1.0]), f)
    assert d == pytest.approx(1.0)
    assert np.allclose(direction, [0, 0, 1])


def test_empty_features():
    with pytest.raises(NoFeaturesError):
        feature_distance(np.zeros(3), FeatureSet.empty())
    with pytest.raises(ValueError):
        FeatureSet([[0, 0, 0.0]], [[0, 0, 0.0]])
