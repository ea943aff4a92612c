import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from neurframe.features import FeatureSet
from neurframe.formats import (MeshParseError, load_tet_mesh, read_cross_field, read_feature_file, read_frames,
                               read_medit, read_obj_features, read_obj_polylines, read_singular_ply,
                               write_cross_field, write_feature_file, write_frames, write_medit,
                               write_obj_polylines, write_singular_ply)
from neurframe.mesh import generate_primitive

TET_TEXT = """MeshVersionFormatted 2
Dimension 3
# a single tet
Vertices
4
0 0 0 1
1 0 0 1
0 1 0 1
0 0 1 1
Edges
1
1 2 0
Tetrahedra
1
1 2 3 4 0
End
"""


def test_medit_roundtrip(tmp_path):
    mesh = generate_primitive("l_shape", 1)
    write_medit(tmp_path / "m.mesh", mesh)
    back = load_tet_mesh(tmp_path / "m.mesh")
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.tets, mesh.tets)
    assert np.array_equal(back.boundary_faces, mesh.boundary_faces)


def test_medit_reads_sections_and_comments(tmp_path):
    p = tmp_path / "t.mesh"
    p.write_text(TET_TEXT)
    mesh = read_medit(p)
    assert mesh.n_tets == 1 and len(mesh.boundary_faces) == 4


@pytest.mark.parametrize("text,line", [
    (TET_TEXT.replace("1 0 0 1", "1 zero 0 1"), 7),
    (TET_TEXT.replace("Dimension 3", "Dimension 2"), 2),
    (TET_TEXT.replace("Edges", "Prisms"), 10),
    ("MeshVersionFormatted 2\nDimension 3\nVertices\n4\n0 0 0 1\n", 5),
])
def test_medit_errors_carry_line_numbers(tmp_path, text, line):
    p = tmp_path / "bad.mesh"
    p.write_text(text)
    with pytest.raises(MeshParseError) as info:
        read_medit(p)
    assert info.value.line == line


def test_unknown_extension(tmp_path):
    with pytest.raises(ValueError):
        load_tet_mesh(tmp_path / "x.vtk")


def test_feature_file_roundtrip(tmp_path, rng):
    f = FeatureSet(rng.normal(size=(5, 3)), rng.normal(size=(5, 3)))
    write_feature_file(tmp_path / "f.feat", f)
    back = read_feature_file(tmp_path / "f.feat")
    assert np.array_equal(back.a, f.a) and np.array_equal(back.b, f.b)
    (tmp_path / "bad.feat").write_text("0 0 0 1 1\n")
    with pytest.raises(MeshParseError):
        read_feature_file(tmp_path / "bad.feat")


def test_obj_polylines_roundtrip(tmp_path, rng):
    lines = [rng.normal(size=(4, 3)), rng.normal(size=(2, 3))]
    write_obj_polylines(tmp_path / "l.obj", lines)
    back = read_obj_polylines(tmp_path / "l.obj")
    assert len(back) == 2 and all(np.array_equal(a, b) for a, b in zip(lines, back))
    f = read_obj_features(tmp_path / "l.obj")
    assert len(f) == 4


def test_obj_surface_features(tmp_path):
    mesh = generate_primitive("cube", 1)
    lines = [f"v {x} {y} {z}" for x, y, z in mesh.vertices] + [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.boundary_faces]
    (tmp_path / "cube.obj").write_text("\n".join(lines))
    assert len(read_obj_features(tmp_path / "cube.obj")) == 12


def test_frames_roundtrip_bit_exact(tmp_path):
    frames = Rotation.random(20, random_state=3).as_matrix()
    frames[4] = np.nan
    write_frames(tmp_path / "f.txt", frames)
    back = read_frames(tmp_path / "f.txt")
    assert np.array_equal(back, frames, equal_nan=True)
    text = (tmp_path / "f.txt").read_text().splitlines()
    assert text[0] == "FRAMES 20" and len(text) == 21 and len(text[1].split()) == 10


def test_singular_ply_roundtrip(tmp_path, rng):
    pts = rng.normal(size=(6, 3))
    cls = rng.integers(1, 24, 6)
    write_singular_ply(tmp_path / "s.ply", pts, cls)
    p, c = read_singular_ply(tmp_path / "s.ply")
    assert np.array_equal(p, pts) and np.array_equal(c, cls)
    write_singular_ply(tmp_path / "e.ply", np.zeros((0, 3)), [])
    assert len(read_singular_ply(tmp_path / "e.ply")[0]) == 0


def test_cross_field_roundtrip(tmp_path, rng):
    u, v = rng.normal(size=(7, 3)), rng.normal(size=(7, 3))
    write_cross_field(tmp_path / "c.txt", u, v)
    bu, bv = read_cross_field(tmp_path / "c.txt")
    assert np.array_equal(bu, u) and np.array_equal(bv, v)
