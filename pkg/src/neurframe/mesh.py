"""Tetrahedral meshes and the sample sets the field losses are evaluated on."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.spatial import cKDTree

TAU = 1e-2
"""Offset in the dual-edge weight ``1 / (length + TAU)``."""

# Face i of a tet is opposite vertex i.
TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


class MeshError(ValueError):
    pass


class InvertedTetError(MeshError):
    def __init__(self, indices):
        self.indices = list(int(i) for i in indices)
        shown = ", ".join(str(i) for i in self.indices[:20])
        more = "" if len(self.indices) <= 20 else f" (+{len(self.indices) - 20} more)"
        super().__init__(f"inverted or degenerate tetrahedra: {shown}{more}")


class NonManifoldError(MeshError):
    pass


class SubdivisionError(MeshError):
    pass


def tet_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    return np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0]) / 6.0


def face_census(tets: np.ndarray):
    """Unique faces of a tet list.

    Returns ``(keys, owners, local, counts)``: ``keys`` are sorted vertex
    triples, and for each unique face the owning tets/local face ids (second
    column -1 for boundary faces) plus the incidence count.
    """
    m = len(tets)
    faces = tets[:, TET_FACES].reshape(-1, 3)
    keys = np.sort(faces, axis=1)
    uniq, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    owners = np.full((len(uniq), 2), -1, dtype=int)
    local = np.full((len(uniq), 2), -1, dtype=int)
    flat_owner = np.repeat(np.arange(m), 4)
    flat_local = np.tile(np.arange(4), m)
    first = order[starts]
    owners[:, 0], local[:, 0] = flat_owner[first], flat_local[first]
    two = counts >= 2
    second = order[starts[two] + 1]
    owners[two, 1], local[two, 1] = flat_owner[second], flat_local[second]
    return uniq, owners, local, counts


@dataclass
class TetMesh:
    """Validated tet mesh with outward-oriented boundary triangles.

    ``boundary_tets[i]`` owns boundary triangle ``boundary_faces[i]`` (vertex
    indices wound counter-clockwise seen from outside) with unit outward
    normal ``boundary_normals[i]``.
    """

    vertices: np.ndarray
    tets: np.ndarray
    boundary_tets: np.ndarray
    boundary_faces: np.ndarray
    boundary_normals: np.ndarray

    @classmethod
    def from_arrays(cls, vertices, tets) -> "TetMesh":
        vertices = np.ascontiguousarray(vertices, dtype=float).reshape(-1, 3)
        tets = np.ascontiguousarray(tets, dtype=np.int64).reshape(-1, 4)
        if len(tets) == 0:
            raise MeshError("mesh has no tetrahedra")
        if tets.min() < 0 or tets.max() >= len(vertices):
            raise MeshError("tetrahedron references a missing vertex")
        diag = np.linalg.norm(vertices.max(axis=0) - vertices.min(axis=0))
        vol = tet_volumes(vertices, tets)
        bad = np.flatnonzero(vol <= 1e-14 * diag**3)
        if bad.size:
            raise InvertedTetError(bad)
        _, owners, local, counts = face_census(tets)
        if np.any(counts > 2):
            raise NonManifoldError(f"{int(np.sum(counts > 2))} faces are shared by more than two tetrahedra")
        bmask = counts == 1
        btets = owners[bmask, 0]
        bfaces = tets[btets[:, None], TET_FACES[local[bmask, 0]]]
        p = vertices[bfaces]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        order = np.lexsort((local[bmask, 0], btets))
        mesh = cls(vertices, tets, btets[order], bfaces[order], n[order])
        mesh._check_boundary_manifold()
        return mesh

    def _check_boundary_manifold(self):
        e = self.boundary_faces[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
        _, counts = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
        if np.any(counts != 2):
            raise NonManifoldError(f"{int(np.sum(counts != 2))} boundary edges are not shared by exactly two boundary faces")

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def volumes(self) -> np.ndarray:
        return tet_volumes(self.vertices, self.tets)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)

    def boundary_face_counts(self) -> np.ndarray:
        return np.bincount(self.boundary_tets, minlength=self.n_tets)

    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.boundary_faces].mean(axis=1)

    def interior_face_count(self) -> int:
        return int(np.sum(face_census(self.tets)[3] == 2))

    def edges(self) -> np.ndarray:
        e = np.sort(self.tets[:, TET_EDGES].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))


# ---------------------------------------------------------------------------
# primitives


def _kuhn_cells(corner_index, cells: np.ndarray) -> np.ndarray:
    """Split lattice cells (rows of integer corners) into 6 tets along the main diagonal."""
    tets = []
    for perm in permutations(range(3)):
        path = [np.zeros(3, dtype=int)]
        for axis in perm:
            step = path[-1].copy()
            step[axis] = 1
            path.append(step)
        tets.append(np.stack([corner_index(cells + off) for off in path], axis=1))
    return np.stack(tets, axis=1).reshape(-1, 4)


def _lattice_mesh(counts, spacing, keep=None) -> TetMesh:
    nx, ny, nz = counts
    ijk = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"), -1).reshape(-1, 3)
    if keep is not None:
        ijk = ijk[keep(ijk)]

    def corner_index(c):
        return (c[:, 0] * (ny + 1) + c[:, 1]) * (nz + 1) + c[:, 2]

    tets = _kuhn_cells(corner_index, ijk)
    grid = np.stack(np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij"), -1)
    verts = grid.reshape(-1, 3) * np.asarray(spacing, dtype=float)
    used, tets = np.unique(tets, return_inverse=True)
    return _oriented(verts[used], tets.reshape(-1, 4))


def _oriented(verts, tets) -> TetMesh:
    tets = tets.copy()
    neg = tet_volumes(verts, tets) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return TetMesh.from_arrays(verts, tets)


def _disk_triangulation(res: int, sectors: int = 6):
    """Concentric rings with ``sectors * k`` points on ring k, stitched by angle."""
    pts = [np.zeros(2)]
    rings = [np.array([0])]
    angles = [np.zeros(1)]
    for k in range(1, res + 1):
        n = sectors * k
        a = 2 * np.pi * np.arange(n) / n
        start = len(pts)
        pts.extend(np.stack([np.cos(a), np.sin(a)], 1) * (k / res))
        rings.append(np.arange(start, start + n))
        angles.append(a)
    tris = []
    for k in range(1, res + 1):
        inner, outer = rings[k - 1], rings[k]
        if len(inner) == 1:
            n = len(outer)
            tris.extend([inner[0], outer[j], outer[(j + 1) % n]] for j in range(n))
            continue
        ai, ao = angles[k - 1], angles[k]
        ni, no = len(inner), len(outer)
        i = j = 0
        while i < ni or j < no:
            next_i = ai[(i + 1) % ni] + (2 * np.pi if i + 1 >= ni else 0.0)
            next_o = ao[(j + 1) % no] + (2 * np.pi if j + 1 >= no else 0.0)
            if j < no and (i >= ni or next_o <= next_i):
                tris.append([inner[i % ni], outer[j % no], outer[(j + 1) % no]])
                j += 1
            else:
                tris.append([inner[i % ni], outer[j % no], inner[(i + 1) % ni]])
                i += 1
    return np.array(pts), np.array(tris)


def _cylinder(res: int) -> TetMesh:
    pts2, tris = _disk_triangulation(res)
    layers = 2 * res
    n2 = len(pts2)
    z = np.linspace(-1.0, 1.0, layers + 1)
    verts = np.concatenate([np.column_stack([pts2, np.full(n2, zk)]) for zk in z])
    tris = np.sort(tris, axis=1)
    tets = []
    for layer in range(layers):
        lo, hi = layer * n2, (layer + 1) * n2
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        # sorted-index staircase split keeps shared quad diagonals consistent
        tets.append(np.stack([a + lo, b + lo, c + lo, a + hi], 1))
        tets.append(np.stack([b + lo, c + lo, a + hi, b + hi], 1))
        tets.append(np.stack([c + lo, a + hi, b + hi, c + hi], 1))
    return _oriented(verts, np.concatenate(tets))


PRIMITIVES = ("cube", "box", "cylinder", "l_shape")


def generate_primitive(shape: str, resolution: int) -> TetMesh:
    """Desk-scale test solids.

    * ``cube``: unit cube, ``resolution^3`` lattice cells, 6 tets per cell.
    * ``box``: 2 x 1 x 1 box on the same lattice spacing.
    * ``cylinder``: radius 1, height 2, ``6 k`` points on the k-th ring.
    * ``l_shape``: [0,2]^2 x [0,1] minus the [1,2]^2 quadrant.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    r = int(resolution)
    h = 1.0 / r
    if shape == "cube":
        return _lattice_mesh((r, r, r), (h, h, h))
    if shape == "box":
        return _lattice_mesh((2 * r, r, r), (h, h, h))
    if shape == "cylinder":
        return _cylinder(r)
    if shape == "l_shape":
        return _lattice_mesh((2 * r, 2 * r, r), (h, h, h),
                             keep=lambda c: ~((c[:, 0] >= r) & (c[:, 1] >= r)))
    raise ValueError(f"unsupported shape {shape!r}; expected one of {PRIMITIVES}")


# ---------------------------------------------------------------------------
# preprocessing


def subdivide_multi_boundary_tets(mesh: TetMesh, max_depth: int = 8) -> TetMesh:
    """Barycentric 1->4 split of every tet touching more than one boundary face.

    Only interior faces are created, so the boundary triangulation and the
    conformity of the rest of the mesh are untouched.
    """
    verts, tets = mesh.vertices, mesh.tets
    depth_of = np.zeros(len(tets), dtype=int)
    current = mesh
    while True:
        bad = np.flatnonzero(current.boundary_face_counts() > 1)
        if bad.size == 0:
            return current
        over = bad[depth_of[bad] >= max_depth]
        if over.size:
            raise SubdivisionError(f"tet {int(over[0])} still has several boundary faces after {max_depth} subdivisions")
        centers = verts[tets[bad]].mean(axis=1)
        new_ids = len(verts) + np.arange(len(bad))
        verts = np.concatenate([verts, centers])
        children = np.empty((len(bad), 4, 4), dtype=np.int64)
        for i, face in enumerate(TET_FACES):
            children[:, i, :3] = tets[bad][:, face]
            children[:, i, 3] = new_ids
        keep = np.ones(len(tets), dtype=bool)
        keep[bad] = False
        tets = np.concatenate([tets[keep], children.reshape(-1, 4)])
        depth_of = np.concatenate([depth_of[keep], np.repeat(depth_of[bad] + 1, 4)])
        current = _oriented(verts, tets)
        tets = current.tets


@dataclass
class AffineTransform:
    """``normalized = scale * (x - center)``."""

    center: np.ndarray
    scale: float

    def apply(self, x):
        return self.scale * (np.asarray(x, dtype=float) - self.center)

    def inverse(self, y):
        return np.asarray(y, dtype=float) / self.scale + self.center

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.zeros(3), 1.0)


def normalize_to_unit_box(mesh: TetMesh):
    """Uniformly scale and centre so the longest bbox side spans [-1, 1]."""
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise MeshError("mesh bounding box has zero extent")
    xf = AffineTransform(center=(lo + hi) / 2.0, scale=2.0 / extent)
    out = TetMesh(xf.apply(mesh.vertices), mesh.tets.copy(), mesh.boundary_tets.copy(),
                  mesh.boundary_faces.copy(), mesh.boundary_normals.copy())
    return out, xf


@dataclass
class DualGraph:
    centroids: np.ndarray
    edges: np.ndarray
    lengths: np.ndarray
    weights: np.ndarray
    tau: float = TAU


def build_dual_graph(mesh: TetMesh, tau: float = TAU) -> DualGraph:
    _, owners, _, counts = face_census(mesh.tets)
    edges = np.sort(owners[counts == 2], axis=1)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    c = mesh.centroids()
    lengths = np.linalg.norm(c[edges[:, 0]] - c[edges[:, 1]], axis=1)
    return DualGraph(c, edges, lengths, 1.0 / (lengths + tau), tau)


@dataclass
class BoundarySamples:
    tets: np.ndarray
    points: np.ndarray
    normals: np.ndarray


def build_boundary_samples(mesh: TetMesh) -> BoundarySamples:
    if np.any(mesh.boundary_face_counts() > 1):
        raise MeshError("tets with several boundary faces present; subdivide first")
    c = mesh.centroids()
    return BoundarySamples(mesh.boundary_tets.copy(), c[mesh.boundary_tets], mesh.boundary_normals.copy())


# ---------------------------------------------------------------------------
# queries


class PointLocator:
    """Point-in-tet lookup: nearest centroids first, brute force as fallback."""

    def __init__(self, mesh: TetMesh, eps: float = 1e-12):
        self.mesh = mesh
        self.eps = eps
        p = mesh.vertices[mesh.tets]
        self._origin = p[:, 0]
        self._inv = np.linalg.inv(np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2))
        self._tree = cKDTree(mesh.centroids())

    def _inside(self, pts, cand):
        lam = np.einsum("...ij,...j->...i", self._inv[cand], pts - self._origin[cand])
        return (lam >= -self.eps).all(-1) & (lam.sum(-1) <= 1 + self.eps)

    def locate(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(pts), -1, dtype=int)
        k = min(8, self.mesh.n_tets)
        _, cand = self._tree.query(pts, k=k)
        cand = cand.reshape(len(pts), k)
        hit = self._inside(pts[:, None, :], cand)
        found = hit.any(axis=1)
        out[found] = cand[found, np.argmax(hit[found], axis=1)]
        for i in np.flatnonzero(~found):
            inside = np.flatnonzero(self._inside(pts[i][None], np.arange(self.mesh.n_tets)))
            if inside.size:
                out[i] = inside[0]
        return out

    def contains(self, points) -> np.ndarray:
        return self.locate(points) >= 0
