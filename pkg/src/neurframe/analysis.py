"""Consumers of a trained (or analytic) field: frames, singularities, streamlines, exports.

Every function takes ``field`` as either ``MlpParams`` or a callable mapping
an (n, 3) array of normalized points to (n, 9) coefficients.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import cKDTree

from .mesh import AffineTransform, PointLocator, TetMesh, face_census
from .octahedral import COMPOSE, IDENTITY, OCTA_MATRICES, octahedral_matching_batch
from .sh_frame import project_frames, rotation_from_vector
from .siren import MlpParams, evaluate


def as_field(field):
    if isinstance(field, MlpParams):
        return lambda pts: evaluate(field, pts)
    if callable(field):
        return field
    raise TypeError("field must be MlpParams or a callable returning coefficients")


@dataclass
class SampledFrames:
    frames: np.ndarray
    converged: np.ndarray
    residual: np.ndarray

    @property
    def failures(self) -> np.ndarray:
        return np.flatnonzero(~self.converged)


def sample_frames(field, points) -> SampledFrames:
    """Evaluate and project; non-convergent projections are flagged, not raised."""
    q = as_field(field)(np.atleast_2d(np.asarray(points, dtype=float)))
    frames, ok, res = project_frames(q)
    return SampledFrames(frames, ok, res)


# ---------------------------------------------------------------------------
# singularities: continuous


@dataclass
class SingularPointSet:
    points: np.ndarray
    rotation_class: np.ndarray
    depth: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def _random_rotations(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


def _contains_fn(domain):
    if domain is None:
        return lambda p: np.all(np.abs(p) <= 1.0, axis=1), (-np.ones(3), np.ones(3))
    if isinstance(domain, TetMesh):
        domain = PointLocator(domain)
    if isinstance(domain, PointLocator):
        v = domain.mesh.vertices
        return domain.contains, (v.min(axis=0), v.max(axis=0))
    lo, hi = (np.asarray(b, dtype=float) for b in domain)
    return lambda p: np.all((p >= lo) & (p <= hi), axis=1), (lo, hi)


def seed_triangles(domain, n_seeds: int, side: float = 0.1, seed: int = 0, max_tries: int = 100):
    """Random equilateral triangles (n, 3, 3) with all corners inside ``domain``."""
    contains, (lo, hi) = _contains_fn(domain)
    rng = np.random.default_rng(seed)
    radius = side / np.sqrt(3.0)
    ang = 2 * np.pi * np.arange(3) / 3
    local = np.stack([np.cos(ang), np.sin(ang), np.zeros(3)], axis=1) * radius
    out = []
    for _ in range(max_tries):
        need = n_seeds - sum(len(o) for o in out)
        if need <= 0:
            break
        m = 2 * need + 8
        centers = rng.uniform(lo, hi, size=(m, 3))
        rots = _random_rotations(rng, m)
        tri = centers[:, None, :] + np.einsum("nij,kj->nki", rots, local)
        ok = contains(tri.reshape(-1, 3)).reshape(m, 3).all(axis=1)
        out.append(tri[ok][:need])
    tris = np.concatenate(out) if out else np.zeros((0, 3, 3))
    if len(tris) < n_seeds:
        raise RuntimeError(f"could only place {len(tris)} of {n_seeds} seed triangles inside the domain")
    return tris


def _loop_points(tris, per_edge):
    t = np.arange(per_edge) / per_edge
    a = tris
    b = np.roll(tris, -1, axis=1)
    pts = a[:, :, None, :] + t[None, None, :, None] * (b - a)[:, :, None, :]
    return pts.reshape(len(tris), 3 * per_edge, 3)


def triangle_holonomy(field, tris, samples_per_loop: int = 12) -> np.ndarray:
    """Octahedral class of the frame loop around each triangle boundary."""
    fn = as_field(field)
    if samples_per_loop % 3:
        raise ValueError("samples_per_loop must be a multiple of 3")
    pts = _loop_points(tris, samples_per_loop // 3)
    n, k = pts.shape[:2]
    frames = project_frames(fn(pts.reshape(-1, 3)))[0].reshape(n, k, 3, 3)
    nxt = np.roll(frames, -1, axis=1)
    match = octahedral_matching_batch(frames.reshape(-1, 3, 3), nxt.reshape(-1, 3, 3)).reshape(n, k)
    g = np.full(n, IDENTITY)
    for j in range(k):
        g = COMPOSE[g, match[:, j]]
    return g


def _split4(tris):
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
    return np.concatenate([
        np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1),
        np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1),
    ])


def extract_singular_points(field, domain=None, n_seeds: int = 500, max_depth: int = 8,
                            side: float = 0.1, min_side: float = 1e-3,
                            samples_per_loop: int = 12, seed: int = 0) -> SingularPointSet:
    """Point sampling of the singular curves by recursive triangle refinement.

    Triangles whose boundary holonomy is not the identity are split into four
    until they are smaller than ``min_side`` or ``max_depth`` is reached; the
    centroids of the surviving leaves are returned.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    tris = seed_triangles(domain, n_seeds, side, seed)
    pts, cls, depth = [], [], []
    level, s = 0, side
    while len(tris):
        g = triangle_holonomy(field, tris, samples_per_loop)
        hit = g != IDENTITY
        if level >= max_depth or s < min_side:
            pts.append(tris[hit].mean(axis=1))
            cls.append(g[hit])
            depth.append(np.full(int(hit.sum()), level))
            break
        tris = _split4(tris[hit])
        level += 1
        s /= 2
    if not pts:
        return SingularPointSet(np.zeros((0, 3)), np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    return SingularPointSet(np.concatenate(pts), np.concatenate(cls), np.concatenate(depth))


# ---------------------------------------------------------------------------
# singularities: per-edge test on a discrete field


@dataclass
class EdgeClassification:
    singular: list
    unclassified: list


def edge_rings(mesh: TetMesh):
    """Cyclic tet order around every edge; open rings (boundary edges) end on boundary faces.

    Returns ``{(a, b): (tets, closed)}``.
    """
    keys, owners, _, counts = face_census(mesh.tets)
    face_map = {tuple(k): o for k, o in zip(keys.tolist(), owners.tolist())}
    edge_tets = defaultdict(list)
    for t, tet in enumerate(mesh.tets.tolist()):
        for i in range(4):
            for j in range(i + 1, 4):
                a, b = sorted((tet[i], tet[j]))
                edge_tets[(a, b)].append(t)

    def across(tet_id, a, b, c):
        o = face_map[tuple(sorted((a, b, c)))]
        return o[1] if o[0] == tet_id else o[0]

    rings = {}
    tets = mesh.tets
    for (a, b), inc in edge_tets.items():
        start = inc[0]
        others = [v for v in tets[start] if v != a and v != b]
        ring = [start]
        prev, cur, via = None, start, others[0]
        closed = False
        for _ in range(len(inc) + 1):
            nb = across(cur, a, b, via)
            if nb < 0:
                break
            if nb == start:
                closed = True
                break
            ring.append(nb)
            nxt_via = [v for v in tets[nb] if v not in (a, b, via)][0]
            prev, cur, via = cur, nb, nxt_via
        if not closed:
            # walk the other way to collect the whole fan
            cur, via = start, others[1]
            back = []
            while True:
                nb = across(cur, a, b, via)
                if nb < 0:
                    break
                back.append(nb)
                via = [v for v in tets[nb] if v not in (a, b, via)][0]
                cur = nb
            ring = back[::-1] + ring
        rings[(a, b)] = (ring, closed)
    return rings


def classify_singular_edges_discrete(frames, mesh: TetMesh) -> EdgeClassification:
    """Per-edge holonomy test for a field given by one frame per tet."""
    frames = np.asarray(frames, dtype=float)
    singular, unclassified = [], []
    for edge, (ring, closed) in sorted(edge_rings(mesh).items()):
        if not closed:
            unclassified.append(edge)
            continue
        f = frames[ring]
        match = octahedral_matching_batch(f, np.roll(f, -1, axis=0))
        g = IDENTITY
        for e in match:
            g = COMPOSE[g, e]
        if g != IDENTITY:
            singular.append((edge, int(g)))
    return EdgeClassification(singular, unclassified)


# ---------------------------------------------------------------------------
# discretized exports


@dataclass
class DiscreteField:
    frames: np.ndarray
    failed: np.ndarray = dc_field(default_factory=lambda: np.zeros(0, dtype=int))


def discretize_volume_field(field, mesh: TetMesh, transform: AffineTransform | None = None) -> DiscreteField:
    """One frame per tet, queried at tet centroids.

    ``mesh`` is in its original coordinates and ``transform`` maps them into
    the field's normalized box.  The map is a similarity, so frames need no
    change on the way back.  Failed projections become NaN rows.
    """
    xf = transform or AffineTransform.identity()
    s = sample_frames(field, xf.apply(mesh.centroids()))
    frames = s.frames.copy()
    frames[~s.converged] = np.nan
    return DiscreteField(frames, s.failures)


@dataclass
class CrossField:
    u: np.ndarray
    v: np.ndarray
    flagged: np.ndarray


def crosses_from_frames(frames, normals, tie_tol: float = 1e-6) -> CrossField:
    frames = np.asarray(frames, dtype=float)
    n = np.asarray(normals, dtype=float)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    align = np.abs(np.einsum("kij,ki->kj", frames, n))
    order = np.argsort(-align, axis=1, kind="stable")
    flagged = np.flatnonzero(align[np.arange(len(n)), order[:, 0]] - align[np.arange(len(n)), order[:, 1]] < tie_tol)
    keep = np.sort(order[:, 1:], axis=1)
    rows = np.arange(len(n))
    a1 = frames[rows, :, keep[:, 0]]
    a2 = frames[rows, :, keep[:, 1]]
    u = a1 - np.sum(a1 * n, axis=1, keepdims=True) * n
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(n, u)
    flip = np.sum(v * a2, axis=1) < 0
    v[flip] *= -1
    return CrossField(u, v, flagged)


def extract_surface_cross_field(field, vertices, triangles, normals=None) -> CrossField:
    """Per-triangle crosses: drop the frame axis closest to the normal, project the rest."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles)
    p = vertices[triangles]
    if normals is None:
        normals = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    frames = sample_frames(field, p.mean(axis=1)).frames
    return crosses_from_frames(frames, normals)


# ---------------------------------------------------------------------------
# streamlines


@dataclass
class Streamline:
    points: np.ndarray
    seed: np.ndarray
    reason: str


def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles (broadcast over leading axes) to ``p``."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = np.sum(ab * ap, -1), np.sum(ac * ap, -1)
    bp = p - b
    d3, d4 = np.sum(ab * bp, -1), np.sum(ac * bp, -1)
    cp = p - c
    d5, d6 = np.sum(ab * cp, -1), np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    denom = np.where(denom == 0, 1.0, denom)
    v = vb / denom
    w = vc / denom
    out = a + v[..., None] * ab + w[..., None] * ac

    def sel(mask, val):
        nonlocal out
        out = np.where(mask[..., None], val, out)

    # edge regions
    with np.errstate(divide="ignore", invalid="ignore"):
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        sel((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + np.nan_to_num(t_bc)[..., None] * (c - b))
        t_ac = d2 / (d2 - d6)
        sel((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + np.nan_to_num(t_ac)[..., None] * ac)
        t_ab = d1 / (d1 - d3)
        sel((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + np.nan_to_num(t_ab)[..., None] * ab)
    # vertex regions
    sel((d6 >= 0) & (d5 <= d6), c)
    sel((d3 >= 0) & (d4 <= d3), b)
    sel((d1 <= 0) & (d2 <= 0), a)
    return out


class SurfaceProjector:
    """Closest point on a triangle surface, exact over a centroid KD-tree prefilter."""

    def __init__(self, vertices, triangles, normals=None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles)
        p = self.vertices[self.triangles]
        self._a, self._b, self._c = p[:, 0], p[:, 1], p[:, 2]
        if normals is None:
            normals = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        self.normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        cen = p.mean(axis=1)
        self._radius = float(np.max(np.linalg.norm(p - cen[:, None], axis=2)))
        self._tree = cKDTree(cen)

    def project(self, x, prefer=None):
        """Return ``(closest point, triangle index, distance)``.

        Ties (e.g. on a sharp edge) go to the triangle whose normal best
        matches ``prefer`` (default: the offset direction ``x - closest``).
        """
        x = np.asarray(x, dtype=float)
        d0, _ = self._tree.query(x)
        cand = np.array(sorted(self._tree.query_ball_point(x, d0 + self._radius + 1e-12)))
        cp = closest_point_on_triangles(x[None], self._a[cand], self._b[cand], self._c[cand])
        dist = np.linalg.norm(cp - x, axis=1)
        best = dist.min()
        tied = np.flatnonzero(dist <= best + 1e-12 * max(1.0, best))
        if len(tied) > 1:
            pref = prefer if prefer is not None else x - cp[tied[0]]
            score = self.normals[cand[tied]] @ pref
            j = tied[int(np.argmax(score))]
        else:
            j = tied[0]
        return cp[j], int(cand[j]), float(dist[j])


def _transport(d, n_from, n_to):
    axis = np.cross(n_from, n_to)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        return d
    angle = np.arctan2(s, n_from @ n_to)
    return rotation_from_vector(axis / s * angle) @ d


def choose_axis(frame, previous, exclude_normal=None):
    """Signed frame axis with the largest dot product against ``previous``.

    With ``exclude_normal`` the axis most parallel to that normal is dropped.
    """
    axes = np.concatenate([frame.T, -frame.T])
    allowed = np.ones(6, dtype=bool)
    if exclude_normal is not None:
        k = int(np.argmax(np.abs(frame.T @ exclude_normal)))
        allowed[[k, k + 3]] = False
    scores = np.where(allowed, axes @ previous, -np.inf)
    return axes[int(np.argmax(scores))]


def trace_streamline(field, seed, step: float = 0.01, max_steps: int = 2000, direction=None,
                     domain=None, surface: SurfaceProjector | None = None) -> Streamline:
    """Follow the frame axis closest to the current heading.

    Volume mode stops on leaving ``domain`` (a ``TetMesh``/``PointLocator``,
    a ``(lo, hi)`` box, or None for [-1, 1]^3).  Surface mode projects each
    step back onto ``surface`` and never moves along the local normal.
    """
    fn = as_field(field)
    p = np.asarray(seed, dtype=float)
    pts = [p.copy()]
    contains = None if surface is not None else _contains_fn(domain)[0]
    tri, normal = None, None
    if surface is not None:
        p, tri, _ = surface.project(p)
        pts[0] = p.copy()
        normal = surface.normals[tri]

    frames, ok, _ = project_frames(fn(p[None]))
    if not ok[0]:
        return Streamline(np.array(pts), np.asarray(seed, dtype=float), "projection_failure")
    heading = frames[0][:, 0] if direction is None else np.asarray(direction, dtype=float)
    if surface is not None:
        heading = heading - (heading @ normal) * normal
    heading = heading / np.linalg.norm(heading)
    reason = "max_steps"
    for _ in range(max_steps):
        frames, ok, _ = project_frames(fn(p[None]))
        if not ok[0]:
            reason = "projection_failure"
            break
        axis = choose_axis(frames[0], heading, normal)
        if surface is None:
            nxt = p + step * axis
            if not contains(nxt[None])[0]:
                reason = "domain_exit"
                break
            heading = axis
        else:
            tangent = axis - (axis @ normal) * normal
            tn = np.linalg.norm(tangent)
            if tn < 1e-12:
                reason = "projection_failure"
                break
            tangent /= tn
            nxt, new_tri, _ = surface.project(p + step * tangent)
            new_normal = surface.normals[new_tri]
            moved = np.linalg.norm(nxt - p)
            heading = tangent
            if new_normal @ normal < 1 - 1e-9:
                # crossed a crease: carry the heading over and spend the remaining length
                heading = _transport(tangent, normal, new_normal)
                rest = step - moved
                if rest > 1e-12:
                    nxt2, tri2, _ = surface.project(nxt + rest * heading, prefer=new_normal)
                    if np.linalg.norm(nxt2 - p) <= step + 1e-12:
                        nxt, new_tri = nxt2, tri2
                        new_normal = surface.normals[new_tri]
            if np.linalg.norm(nxt - p) < 1e-12:
                reason = "projection_failure"
                break
            tri, normal = new_tri, new_normal
        p = nxt
        pts.append(p.copy())
    return Streamline(np.array(pts), np.asarray(seed, dtype=float), reason)
