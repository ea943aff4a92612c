"""Sharp feature edges and nearest-feature queries."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from math import pi

import numpy as np


class NoFeaturesError(LookupError):
    pass


@dataclass
class FeatureSet:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(-1, 3)
        self.b = np.asarray(self.b, dtype=float).reshape(-1, 3)
        length = np.linalg.norm(self.b - self.a, axis=1)
        if np.any(length <= 0):
            raise ValueError("feature segments must have positive length")

    @classmethod
    def empty(cls) -> "FeatureSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)))

    def __len__(self) -> int:
        return len(self.a)

    @property
    def directions(self) -> np.ndarray:
        d = self.b - self.a
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def transformed(self, fn) -> "FeatureSet":
        return FeatureSet(fn(self.a), fn(self.b))


def detect_surface_features(vertices, triangles, normals=None, angle_threshold: float = pi / 4) -> FeatureSet:
    """Edges whose two incident triangle normals differ by more than the threshold.

    Collinear feature edges meeting at a vertex of feature-degree two are
    merged into a single segment.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles)
    if normals is None:
        p = vertices[triangles]
        normals = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    e = np.sort(triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
    owner = np.repeat(np.arange(len(triangles)), 3)
    keys, inv, counts = np.unique(e, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    two = counts == 2
    f0 = owner[order[starts[two]]]
    f1 = owner[order[starts[two] + 1]]
    cosang = np.clip(np.einsum("ij,ij->i", normals[f0], normals[f1]), -1.0, 1.0)
    sharp = np.arccos(cosang) > angle_threshold
    edges = keys[two][sharp]
    return _merge_collinear(vertices, edges)


def detect_features(mesh, angle_threshold: float = pi / 4) -> FeatureSet:
    return detect_surface_features(mesh.vertices, mesh.boundary_faces, mesh.boundary_normals, angle_threshold)


def _merge_collinear(vertices, edges, tol: float = 1e-9) -> FeatureSet:
    if len(edges) == 0:
        return FeatureSet.empty()
    dirs = vertices[edges[:, 1]] - vertices[edges[:, 0]]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    incident = defaultdict(list)
    for i, (u, v) in enumerate(edges):
        incident[u].append(i)
        incident[v].append(i)
    parent = list(range(len(edges)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for vid, inc in incident.items():
        if len(inc) == 2 and abs(dirs[inc[0]] @ dirs[inc[1]]) > 1 - tol:
            ra, rb = find(inc[0]), find(inc[1])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups = defaultdict(list)
    for i in range(len(edges)):
        groups[find(i)].append(i)
    a, b = [], []
    for root in sorted(groups):
        ids = groups[root]
        verts = np.unique(edges[ids])
        d = dirs[root]
        t = vertices[verts] @ d
        a.append(vertices[verts[np.argmin(t)]])
        b.append(vertices[verts[np.argmax(t)]])
    return FeatureSet(np.array(a), np.array(b))


def point_segment_distance(p, a, b) -> np.ndarray:
    """Distances from points ``p`` to segments ``[a, b]`` (broadcasting)."""
    ab = b - a
    t = np.clip(np.sum((p - a) * ab, axis=-1) / np.sum(ab * ab, axis=-1), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def feature_distance_brute(points, features: FeatureSet):
    """Reference nearest-segment query: returns ``(distances, segment indices)``."""
    if len(features) == 0:
        raise NoFeaturesError("feature set is empty")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = point_segment_distance(pts[:, None, :], features.a[None], features.b[None])
    idx = np.argmin(d, axis=1)
    return d[np.arange(len(pts)), idx], idx


class FeatureGrid:
    """Uniform grid with per-cell candidate segment lists.

    A segment is a candidate for a cell when its distance to the cell centre
    is within ``d_min + cell diagonal`` of the closest segment, which keeps
    the exact nearest segment (and all ties) in the list for any point in the
    cell.  Points outside the grid fall back to brute force.
    """

    def __init__(self, features: FeatureSet, cell: float = 0.05, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))):
        if len(features) == 0:
            raise NoFeaturesError("feature set is empty")
        self.features = features
        self.cell = float(cell)
        pts = np.concatenate([features.a, features.b, np.asarray(bounds, dtype=float)])
        self.origin = pts.min(axis=0) - cell
        self.shape = np.ceil((pts.max(axis=0) + cell - self.origin) / cell).astype(int)
        ijk = np.stack(np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij"), -1).reshape(-1, 3)
        centers = self.origin + (ijk + 0.5) * cell
        diag = np.sqrt(3.0) * cell * (1 + 1e-9) + 1e-12
        lists = []
        for chunk in np.array_split(np.arange(len(centers)), max(1, len(centers) * len(features) // 2_000_000)):
            d = point_segment_distance(centers[chunk, None, :], features.a[None], features.b[None])
            keep = d <= d.min(axis=1, keepdims=True) + diag
            lists.extend(np.flatnonzero(row) for row in keep)
        width = max(len(ids) for ids in lists)
        self.candidates = np.full((len(lists), width), -1, dtype=int)
        for c, ids in enumerate(lists):
            self.candidates[c, : len(ids)] = ids

    def _flat_cell(self, pts):
        c = np.floor((pts - self.origin) / self.cell).astype(int)
        inside = np.all((c >= 0) & (c < self.shape), axis=1)
        flat = (c[:, 0] * self.shape[1] + c[:, 1]) * self.shape[2] + c[:, 2]
        return np.where(inside, flat, -1)

    def query_many(self, points):
        """Nearest segment per point: ``(distances, indices)``, lowest index on ties."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dist = np.empty(len(pts))
        idx = np.empty(len(pts), dtype=int)
        flat = self._flat_cell(pts)
        ok = flat >= 0
        if ok.any():
            cand = self.candidates[flat[ok]]
            valid = cand >= 0
            safe = np.where(valid, cand, 0)
            d = point_segment_distance(pts[ok][:, None, :], self.features.a[safe], self.features.b[safe])
            d = np.where(valid, d, np.inf)
            j = np.argmin(d, axis=1)
            rows = np.arange(len(j))
            dist[ok], idx[ok] = d[rows, j], cand[rows, j]
        if (~ok).any():
            dist[~ok], idx[~ok] = feature_distance_brute(pts[~ok], self.features)
        return dist, idx

    def query(self, p):
        d, i = self.query_many(np.asarray(p, dtype=float)[None])
        return float(d[0]), int(i[0])


def feature_distance(p, features: FeatureSet, grid: FeatureGrid | None = None):
    """Distance from ``p`` to the nearest feature segment and that segment's direction."""
    if len(features) == 0:
        raise NoFeaturesError("feature set is empty; skip the feature term")
    grid = grid or FeatureGrid(features)
    d, i = grid.query(p)
    return d, features.directions[i]
