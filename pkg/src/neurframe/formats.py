"""Readers and writers for the interchange formats.

* MEDIT ASCII ``.mesh`` (``Vertices``, ``Triangles``, ``Tetrahedra``, ``End``)
* feature files: one segment per line, ``ax ay az bx by bz``
* OBJ polylines (``v`` / ``l``) and OBJ surfaces for feature input
* per-tet frames: ``FRAMES <count>`` then ``tet r00 r01 ... r22``
* singular points: ASCII PLY with an int ``rotation_class`` vertex property
* cross fields: ``tri ux uy uz vx vy vz`` per line
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .features import FeatureSet, detect_surface_features
from .mesh import TetMesh


class MeshParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# record widths of the MEDIT sections we know how to skip or read (3D)
_MEDIT_WIDTHS = {
    "vertices": 4, "edges": 3, "triangles": 4, "quadrilaterals": 5, "tetrahedra": 5,
    "hexahedra": 9, "corners": 1, "ridges": 1, "requiredvertices": 1, "requirededges": 1,
    "requiredtriangles": 1, "normals": 3, "tangents": 3, "normalatvertices": 2,
    "tangentatedges": 3,
}


def _tokens(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0]
        for tok in line.split():
            yield tok, lineno


def read_medit(path) -> TetMesh:
    """Parse a MEDIT ASCII mesh; boundary orientation is always recomputed."""
    toks = _tokens(Path(path).read_text())
    sections: dict[str, np.ndarray] = {}
    last_line = 0

    def take(what):
        nonlocal last_line
        try:
            tok, last_line = next(toks)
        except StopIteration:
            raise MeshParseError(f"unexpected end of file while reading {what}", last_line) from None
        return tok, last_line

    def number(kind, what):
        tok, line = take(what)
        try:
            return kind(tok)
        except ValueError:
            raise MeshParseError(f"expected a number in {what}, got {tok!r}", line) from None

    for tok, line in toks:
        last_line = line
        key = tok.lower()
        if key == "end":
            break
        if key == "meshversionformatted":
            number(int, "MeshVersionFormatted")
            continue
        if key == "dimension":
            dim = number(int, "Dimension")
            if dim != 3:
                raise MeshParseError(f"only 3D meshes are supported, got Dimension {dim}", line)
            continue
        if key not in _MEDIT_WIDTHS:
            raise MeshParseError(f"unknown section {tok!r}", line)
        count = number(int, tok)
        width = _MEDIT_WIDTHS[key]
        kind = float if key in ("vertices", "normals", "tangents") else int
        rows = np.empty((count, width))
        for i in range(count):
            for j in range(width):
                rows[i, j] = number(kind, f"{tok} record {i + 1}")
        sections[key] = rows
    if "vertices" not in sections:
        raise MeshParseError("missing Vertices section", last_line)
    if "tetrahedra" not in sections:
        raise MeshParseError("missing Tetrahedra section", last_line)
    verts = sections["vertices"][:, :3]
    tets = sections["tetrahedra"][:, :4].astype(np.int64) - 1
    return TetMesh.from_arrays(verts, tets)


def load_tet_mesh(path, format: str | None = None) -> TetMesh:
    fmt = (format or Path(path).suffix.lstrip(".")).lower()
    if fmt in ("mesh", "medit"):
        return read_medit(path)
    raise ValueError(f"unsupported tet mesh format {fmt!r}")


def write_medit(path, mesh: TetMesh) -> None:
    lines = ["MeshVersionFormatted 1", "", "Dimension 3", "", "Vertices", str(len(mesh.vertices))]
    lines += [f"{x!r} {y!r} {z!r} 0" for x, y, z in mesh.vertices.tolist()]
    lines += ["", "Triangles", str(len(mesh.boundary_faces))]
    lines += [f"{a + 1} {b + 1} {c + 1} 0" for a, b, c in mesh.boundary_faces.tolist()]
    lines += ["", "Tetrahedra", str(len(mesh.tets))]
    lines += [f"{a + 1} {b + 1} {c + 1} {d + 1} 0" for a, b, c, d in mesh.tets.tolist()]
    lines += ["", "End", ""]
    Path(path).write_text("\n".join(lines))


# ---------------------------------------------------------------------------
# features


def read_feature_file(path) -> FeatureSet:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise MeshParseError(f"expected 6 numbers per feature segment, got {len(parts)}", lineno)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise MeshParseError("non-numeric feature coordinate", lineno) from None
    rows = np.array(rows, dtype=float).reshape(-1, 6)
    return FeatureSet(rows[:, :3], rows[:, 3:])


def write_feature_file(path, features: FeatureSet) -> None:
    lines = [" ".join(repr(float(v)) for v in np.concatenate([a, b])) for a, b in zip(features.a, features.b)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def _read_obj(path):
    verts, lines, faces = [], [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "l":
                lines.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
        except ValueError:
            raise MeshParseError(f"malformed {parts[0]!r} record", lineno) from None
    return np.array(verts, dtype=float).reshape(-1, 3), lines, faces


def read_obj_features(path, angle_threshold: float = np.pi / 4) -> FeatureSet:
    """Features from an OBJ: ``l`` polylines if present, else sharp edges of its faces."""
    verts, lines, faces = _read_obj(path)
    if lines:
        a = [verts[i] for poly in lines for i in poly[:-1]]
        b = [verts[j] for poly in lines for j in poly[1:]]
        return FeatureSet(np.array(a), np.array(b))
    tris = [[f[0], f[k], f[k + 1]] for f in faces for k in range(1, len(f) - 1)]
    if not tris:
        return FeatureSet.empty()
    return detect_surface_features(verts, np.array(tris), angle_threshold=angle_threshold)


def write_obj_polylines(path, polylines) -> None:
    out, base = [], 1
    for poly in polylines:
        poly = np.asarray(poly, dtype=float).reshape(-1, 3)
        out += [f"v {x!r} {y!r} {z!r}" for x, y, z in poly.tolist()]
        if len(poly) >= 2:
            out.append("l " + " ".join(str(base + i) for i in range(len(poly))))
        base += len(poly)
    Path(path).write_text("\n".join(out) + "\n")


def read_obj_polylines(path):
    verts, lines, _ = _read_obj(path)
    return [verts[poly] for poly in lines]


# ---------------------------------------------------------------------------
# fields


def write_frames(path, frames) -> None:
    """Per-tet frames, row-major, 17 significant digits (NaN rows mark failures)."""
    frames = np.asarray(frames, dtype=float).reshape(-1, 3, 3)
    lines = [f"FRAMES {len(frames)}"]
    for i, f in enumerate(frames):
        lines.append(f"{i} " + " ".join(f"{v:.17g}" for v in f.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def read_frames(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    head = text[0].split()
    if len(head) != 2 or head[0] != "FRAMES":
        raise MeshParseError("expected 'FRAMES <count>' header", 1)
    n = int(head[1])
    frames = np.empty((n, 3, 3))
    for lineno, line in enumerate(text[1:n + 1], start=2):
        parts = line.split()
        if len(parts) != 10:
            raise MeshParseError("expected tet index and 9 entries", lineno)
        frames[int(parts[0])] = np.array([float(p) for p in parts[1:]]).reshape(3, 3)
    return frames


def write_singular_ply(path, points, rotation_class) -> None:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(points)}",
             "property double x", "property double y", "property double z",
             "property int rotation_class", "end_header"]
    lines += [f"{x!r} {y!r} {z!r} {int(c)}" for (x, y, z), c in zip(points.tolist(), rotation_class)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_singular_ply(path):
    text = Path(path).read_text().splitlines()
    end = text.index("end_header")
    n = next(int(l.split()[2]) for l in text[:end] if l.startswith("element vertex"))
    rows = [l.split() for l in text[end + 1:end + 1 + n]]
    pts = np.array([[float(v) for v in r[:3]] for r in rows], dtype=float).reshape(-1, 3)
    cls = np.array([int(r[3]) for r in rows], dtype=int)
    return pts, cls


def write_cross_field(path, u, v) -> None:
    u = np.asarray(u, dtype=float).reshape(-1, 3)
    v = np.asarray(v, dtype=float).reshape(-1, 3)
    lines = [f"{i} " + " ".join(f"{x:.17g}" for x in np.concatenate([a, b])) for i, (a, b) in enumerate(zip(u, v))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_cross_field(path):
    rows = np.array([[float(x) for x in l.split()[1:]] for l in Path(path).read_text().splitlines() if l.strip()])
    rows = rows.reshape(-1, 6)
    return rows[:, :3], rows[:, 3:]
