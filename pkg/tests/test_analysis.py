import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from neurframe.analysis import (SurfaceProjector, as_field, choose_axis, classify_singular_edges_discrete,
                                closest_point_on_triangles, crosses_from_frames, discretize_volume_field,
                                edge_rings, extract_singular_points, extract_surface_cross_field, sample_frames,
                                seed_triangles, trace_streamline, triangle_holonomy)
from neurframe.analytic import constant_field, valence3_field
from neurframe.formats import read_frames, write_frames
from neurframe.mesh import PointLocator, generate_primitive, normalize_to_unit_box
from neurframe.octahedral import IDENTITY, element_axis, element_order
from neurframe.sh_frame import frame_to_sh
from neurframe.siren import init_params


@pytest.fixture(scope="module")
def cube():
    return normalize_to_unit_box(generate_primitive("cube", 3))[0]


def test_as_field_accepts_params_and_callables():
    p = init_params(0, (3, 8, 9))
    assert as_field(p)(np.zeros((2, 3))).shape == (2, 9)
    f = constant_field()
    assert as_field(f) is f
    with pytest.raises(TypeError):
        as_field(3)


def test_sample_frames_is_pure_and_recovers_constant_frame():
    r = Rotation.random(random_state=1).as_matrix()
    pts = np.random.default_rng(0).uniform(-1, 1, (10, 3))
    a = sample_frames(constant_field(r), pts)
    b = sample_frames(constant_field(r), pts)
    assert np.array_equal(a.frames, b.frames)
    assert a.converged.all() and len(a.failures) == 0
    assert np.allclose(frame_to_sh(a.frames), frame_to_sh(r), atol=1e-9)


def test_seed_triangles_are_equilateral_and_inside():
    mesh = normalize_to_unit_box(generate_primitive("l_shape", 2))[0]
    tris = seed_triangles(mesh, 200, side=0.1, seed=3)
    sides = np.linalg.norm(tris - np.roll(tris, 1, axis=1), axis=2)
    assert np.allclose(sides, 0.1)
    assert PointLocator(mesh).contains(tris.reshape(-1, 3)).all()
    assert np.array_equal(tris, seed_triangles(mesh, 200, side=0.1, seed=3))


def test_holonomy_of_constant_field_is_trivial():
    tris = seed_triangles(None, 50, seed=0)
    assert np.all(triangle_holonomy(constant_field(), tris) == IDENTITY)


def test_holonomy_detects_valence_line():
    # horizontal triangle around the z-axis
    ang = 2 * np.pi * np.arange(3) / 3
    tri = np.stack([0.05 * np.cos(ang), 0.05 * np.sin(ang), np.full(3, 0.2)], axis=1)[None]
    g = triangle_holonomy(valence3_field(), tri)[0]
    assert element_order(g) == 4
    # the group element lives in the frame's own basis; map it to world space
    f0 = sample_frames(valence3_field(), tri[0, :1]).frames[0]
    assert np.allclose(np.abs(f0 @ element_axis(g)), [0, 0, 1], atol=1e-9)
    shifted = tri + np.array([0.3, 0, 0])
    assert triangle_holonomy(valence3_field(), shifted)[0] == IDENTITY


def test_singular_points_constant_field_empty():
    s = extract_singular_points(constant_field(Rotation.random(random_state=2).as_matrix()), None, n_seeds=200)
    assert len(s) == 0


def test_singular_points_localize_valence_line():
    s = extract_singular_points(valence3_field(center=(0.1, -0.2)), None, n_seeds=3000, seed=1)
    assert len(s) > 0
    d = np.hypot(s.points[:, 0] - 0.1, s.points[:, 1] + 0.2)
    assert d.max() < 2e-3
    assert all(element_order(int(g)) == 4 for g in s.rotation_class)


def test_singular_points_need_seeds():
    with pytest.raises(ValueError):
        extract_singular_points(constant_field(), None, n_seeds=0)


def test_edge_rings_close_for_interior_edges(cube):
    rings = edge_rings(cube)
    assert len(rings) == len(cube.edges())
    boundary_edges = {tuple(sorted(e)) for f in cube.boundary_faces.tolist() for e in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0]))}
    for edge, (ring, closed) in rings.items():
        assert closed == (edge not in boundary_edges)
        incident = [t for t, tet in enumerate(cube.tets.tolist()) if edge[0] in tet and edge[1] in tet]
        assert sorted(ring) == sorted(incident)


def test_discrete_classifier_constant_field(cube):
    frames = discretize_volume_field(constant_field(), cube).frames
    res = classify_singular_edges_discrete(frames, cube)
    assert res.singular == []
    assert len(res.unclassified) > 0


def test_discrete_classifier_valence_line():
    mesh = normalize_to_unit_box(generate_primitive("cylinder", 3))[0]
    frames = discretize_volume_field(valence3_field(), mesh).frames
    res = classify_singular_edges_discrete(frames, mesh)
    edges = np.array([e for e, _ in res.singular])
    p = mesh.vertices[edges]
    assert np.allclose(p[:, :, :2], 0.0)
    # the singular edges chain into one path spanning the height
    verts, counts = np.unique(edges, return_counts=True)
    assert (counts == 1).sum() == 2 and (counts > 2).sum() == 0
    assert np.isclose(p[:, :, 2].min(), -1) and np.isclose(p[:, :, 2].max(), 1)


def test_discretize_frames_roundtrip(tmp_path, cube):
    r = Rotation.random(random_state=4).as_matrix()
    df = discretize_volume_field(constant_field(r), cube)
    assert len(df.frames) == cube.n_tets and len(df.failed) == 0
    assert np.allclose(frame_to_sh(df.frames), frame_to_sh(r), atol=1e-9)
    write_frames(tmp_path / "f.txt", df.frames)
    assert np.array_equal(read_frames(tmp_path / "f.txt"), df.frames)


def test_discretize_uses_transform(cube):
    source = generate_primitive("box", 2)
    norm, xf = normalize_to_unit_box(source)
    field = valence3_field(center=(0.3, 0.0))
    direct = discretize_volume_field(field, norm).frames
    via = discretize_volume_field(field, source, xf).frames
    assert np.array_equal(direct, via)


def test_discretize_marks_failures():
    def flaky(points):
        q = constant_field()(points)
        q[0] = np.ones(9) / 3.0
        return q

    import neurframe.analysis as analysis
    mesh = normalize_to_unit_box(generate_primitive("cube", 1))[0]
    orig = analysis.project_frames
    analysis.project_frames = lambda q: orig(q, max_iter=1)
    try:
        df = discretize_volume_field(flaky, mesh)
    finally:
        analysis.project_frames = orig
    assert 0 in df.failed.tolist()
    assert np.isnan(df.frames[df.failed]).all()


def test_direction_selection():
    prev = np.array([0.9, 0.1, 0.0])
    assert np.array_equal(choose_axis(np.eye(3), prev), [1, 0, 0])
    assert np.array_equal(choose_axis(np.eye(3), 1e-6 * prev), [1, 0, 0])
    assert np.array_equal(choose_axis(np.eye(3), -prev), [-1, 0, 0])
    assert np.array_equal(choose_axis(np.eye(3), prev, exclude_normal=np.array([1.0, 0, 0])), [0, 1, 0])


def test_volume_streamline_straight_line():
    line = trace_streamline(constant_field(), np.zeros(3), step=0.01, max_steps=500, direction=[1, 0, 0])
    assert line.reason == "domain_exit"
    assert np.allclose(line.points[:, 1:], 0, atol=1e-9)
    assert np.allclose(np.linalg.norm(np.diff(line.points, axis=0), axis=1), 0.01)
    assert 1.0 - 0.01 - 1e-9 <= line.points[-1, 0] <= 1.0
    short = trace_streamline(constant_field(), np.zeros(3), step=0.01, max_steps=20, direction=[0, 1, 0])
    assert short.reason == "max_steps" and len(short.points) == 21
    assert short.points[-1, 1] == pytest.approx(0.2)


def test_closest_point_on_triangle_brute_force(rng):
    a, b, c = rng.normal(size=(3, 3))
    u, v = np.meshgrid(np.linspace(0, 1, 301), np.linspace(0, 1, 301))
    keep = u + v <= 1
    dense = a + u[keep][:, None] * (b - a) + v[keep][:, None] * (c - a)
    for p in rng.normal(size=(30, 3)) * 2:
        cp = closest_point_on_triangles(p, a, b, c)
        best = np.min(np.linalg.norm(dense - p, axis=1))
        assert np.linalg.norm(cp - p) <= best + 1e-12
        assert np.linalg.norm(cp - p) >= best - 0.01


def test_surface_streamline_wraps_cube(cube):
    surf = SurfaceProjector(cube.vertices, cube.boundary_faces, cube.boundary_normals)
    line = trace_streamline(constant_field(), [0.3, 0.2, 1.0], step=0.01, max_steps=900, surface=surf)
    p = line.points
    dist = np.array([surf.project(x)[2] for x in p])
    assert dist.max() < 1e-6
    steps = np.linalg.norm(np.diff(p, axis=0), axis=1)
    assert steps.max() <= 0.01 + 1e-12
    # goes over the top edge onto the +y face and keeps x fixed
    assert np.allclose(p[:, 0], 0.3)
    assert np.any(np.isclose(p[:, 1], 1.0) & (p[:, 2] < 0.5))


def test_crosses_from_frames():
    n = np.array([[0, 0, 1.0]])
    cf = crosses_from_frames(np.eye(3)[None], n)
    assert np.allclose(cf.u, [[1, 0, 0]]) and np.allclose(cf.v, [[0, 1, 0]])
    assert len(cf.flagged) == 0
    r = Rotation.random(50, random_state=0).as_matrix()
    normals = np.random.default_rng(0).normal(size=(50, 3))
    cf = crosses_from_frames(r, normals)
    nn = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    for a, b in ((cf.u, cf.v), (cf.u, nn), (cf.v, nn)):
        assert np.abs(np.sum(a * b, axis=1)).max() < 1e-10
    assert np.allclose(np.linalg.norm(cf.u, axis=1), 1, atol=1e-10)
    # ambiguous: normal halfway between two axes
    tie = crosses_from_frames(np.eye(3)[None], np.array([[1.0, 1.0, 0.0]]))
    assert tie.flagged.tolist() == [0]


def test_surface_cross_field_on_cube(cube):
    cf = extract_surface_cross_field(constant_field(), cube.vertices, cube.boundary_faces, cube.boundary_normals)
    assert len(cf.u) == len(cube.boundary_faces) and len(cf.flagged) == 0
    n = cube.boundary_normals
    assert np.allclose(np.sum(cf.u * n, axis=1), 0, atol=1e-10)
