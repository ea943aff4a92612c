"""Octahedral frames in the band-4 real spherical-harmonic representation.

A frame ``V`` (3x3 rotation, columns are the axes) is encoded by the function

    F_V(s) = (v0.s)^2 (v1.s)^2 + (v1.s)^2 (v2.s)^2 + (v2.s)^2 (v0.s)^2

restricted to the unit sphere.  ``F_V`` lives in bands 0 and 4 only, so

    F_V = C0 * Y00 + C1 * sum_k q_k Y4_k

with frame-independent constants ``C0``, ``C1`` and a unit 9-vector ``q``.

Coefficient ordering: slot ``k`` carries order ``m = k - 4``.  Slots 0..3 hold
the ``cos(|m| phi)`` harmonics (|m| = 4..1), slot 4 the zonal ``Y4,0`` and
slots 5..8 the ``sin(m phi)`` harmonics (m = 1..4).  With this ordering the
identity frame maps to ``(sqrt(5/12), 0, 0, 0, sqrt(7/12), 0, 0, 0, 0)`` and a
frame rotated by ``theta`` about z maps to
``(sqrt(5/12) cos 4t, 0, 0, 0, sqrt(7/12), 0, 0, 0, sqrt(5/12) sin 4t)``.
"""
from __future__ import annotations

from math import pi, sqrt

import numpy as np

SQRT_5_12 = sqrt(5.0 / 12.0)
SQRT_7_12 = sqrt(7.0 / 12.0)

# F_V projections: C0 on Y00 and the (negative) band-4 scale.
C0 = 2.0 * sqrt(pi) / 5.0
C1 = -4.0 * sqrt(pi / 525.0)

Y40_INDEX = 4

Q_REF = np.array([SQRT_5_12, 0, 0, 0, SQRT_7_12, 0, 0, 0, 0], dtype=float)
"""Coefficients of the identity frame."""

_s2, _s5, _s7, _s14, _s35 = sqrt(2), sqrt(5), sqrt(7), sqrt(14), sqrt(35)

# Coefficient action of a +90 degree rotation about x.
RX90 = np.array([
    [1 / 8,    0,         -_s7 / 4,  0,         _s35 / 8, 0,        0,          0,        0],
    [0,        0,         0,         0,         0,        0,        -_s14 / 4,  0,        _s2 / 4],
    [-_s7 / 4, 0,         1 / 2,     0,         _s5 / 4,  0,        0,          0,        0],
    [0,        0,         0,         0,         0,        0,        -_s2 / 4,   0,        -_s14 / 4],
    [_s35 / 8, 0,         _s5 / 4,   0,         3 / 8,    0,        0,          0,        0],
    [0,        0,         0,         0,         0,        3 / 4,    0,          _s7 / 4,  0],
    [0,        _s14 / 4,  0,         _s2 / 4,   0,        0,        0,          0,        0],
    [0,        0,         0,         0,         0,        _s7 / 4,  0,          -3 / 4,   0],
    [0,        -_s2 / 4,  0,         _s14 / 4,  0,        0,        0,          0,        0],
])

_ORDERS = np.arange(1, 5)
_COS_SLOTS = 4 - _ORDERS
_SIN_SLOTS = 4 + _ORDERS


class InvalidFrameError(ValueError):
    pass


class ProjectionError(RuntimeError):
    """Raised when projecting coefficients onto a frame does not converge.

    The last iterate is kept in ``frame`` so callers can still use it.
    """

    def __init__(self, message: str, frame: np.ndarray, residual: float):
        super().__init__(message)
        self.frame = frame
        self.residual = residual


# ---------------------------------------------------------------------------
# basis and frame function


def sh_basis(s: np.ndarray) -> np.ndarray:
    """Orthonormal real band-4 harmonics at unit vectors ``s`` (..., 3) -> (..., 9)."""
    s = np.asarray(s, dtype=float)
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    x2, y2, z2 = x * x, y * y, z * z
    r2 = x2 + y2 + z2
    a = 0.75 * sqrt(35 / pi)
    b = 0.75 * sqrt(35 / (2 * pi))
    c = 0.75 * sqrt(5 / pi)
    d = 0.75 * sqrt(5 / (2 * pi))
    return np.stack([
        a / 4 * (x2 * (x2 - 3 * y2) - y2 * (3 * x2 - y2)),
        b * (x2 - 3 * y2) * x * z,
        c / 2 * (x2 - y2) * (7 * z2 - r2),
        d * x * z * (7 * z2 - 3 * r2),
        3 / 16 * sqrt(1 / pi) * (35 * z2 * z2 - 30 * z2 * r2 + 3 * r2 * r2),
        d * y * z * (7 * z2 - 3 * r2),
        c * x * y * (7 * z2 - r2),
        b * (3 * x2 - y2) * y * z,
        a * x * y * (x2 - y2),
    ], axis=-1)


def check_frame(f: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (3, 3):
        raise InvalidFrameError(f"frame must be 3x3, got shape {f.shape}")
    if np.abs(f.T @ f - np.eye(3)).max() > tol:
        raise InvalidFrameError("frame axes are not orthonormal")
    if abs(np.linalg.det(f) - 1.0) > tol:
        raise InvalidFrameError("frame is not right-handed")
    return f


def evaluate_frame_function(f: np.ndarray, s: np.ndarray) -> float:
    """Evaluate ``F_V(s)``; zero exactly along the frame axes."""
    f = check_frame(f)
    s = np.asarray(s, dtype=float)
    if abs(np.linalg.norm(s) - 1.0) > 1e-8:
        raise ValueError("query direction must be a unit vector")
    a = (f.T @ s) ** 2
    return float(a[0] * a[1] + a[1] * a[2] + a[2] * a[0])


# ---------------------------------------------------------------------------
# rotations in coefficient space


def qz(theta) -> np.ndarray:
    """Coefficients of the identity frame rotated by ``theta`` about z."""
    theta = np.asarray(theta, dtype=float)
    q = np.zeros(theta.shape + (9,))
    q[..., 0] = SQRT_5_12 * np.cos(4 * theta)
    q[..., 4] = SQRT_7_12
    q[..., 8] = SQRT_5_12 * np.sin(4 * theta)
    return q


def rz_sh(theta) -> np.ndarray:
    """Closed-form coefficient rotation about z; broadcasts over ``theta``."""
    theta = np.asarray(theta, dtype=float)
    m = np.zeros(theta.shape + (9, 9))
    m[..., 4, 4] = 1.0
    ang = theta[..., None] * _ORDERS
    c, s = np.cos(ang), np.sin(ang)
    m[..., _COS_SLOTS, _COS_SLOTS] = c
    m[..., _SIN_SLOTS, _SIN_SLOTS] = c
    m[..., _COS_SLOTS, _SIN_SLOTS] = -s
    m[..., _SIN_SLOTS, _COS_SLOTS] = s
    return m


def ry_sh(theta) -> np.ndarray:
    return RX90.T @ rz_sh(theta) @ RX90


def euler_zyz(r: np.ndarray):
    """Angles with ``r = Rz(alpha) Ry(beta) Rz(gamma)``; broadcasts over (..., 3, 3).

    gamma is recovered from the remainder after undoing alpha and beta, so the
    decomposition stays exact near the gimbal-locked poles.
    """
    r = np.asarray(r, dtype=float)
    alpha = np.arctan2(r[..., 1, 2], r[..., 0, 2])
    beta = np.arctan2(np.hypot(r[..., 0, 2], r[..., 1, 2]), r[..., 2, 2])
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    # rows 0 and 1 of Ry(beta)^T Rz(alpha)^T r, column 0
    u = ca * r[..., 0, 0] + sa * r[..., 1, 0]
    v = -sa * r[..., 0, 0] + ca * r[..., 1, 0]
    m00 = cb * u - sb * r[..., 2, 0]
    gamma = np.arctan2(v, m00)
    return alpha, beta, gamma


def check_rotation(r: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape[-2:] != (3, 3):
        raise ValueError(f"rotation must be (..., 3, 3), got {r.shape}")
    eye_err = np.abs(np.swapaxes(r, -1, -2) @ r - np.eye(3)).max(initial=0.0)
    if eye_err > tol or np.any(np.abs(np.linalg.det(r) - 1.0) > tol):
        raise ValueError("input is not a proper rotation matrix")
    return r


def shrot(r: np.ndarray) -> np.ndarray:
    """9x9 coefficient rotation for a 3D rotation ``r`` (batched over leading axes).

    Satisfies ``shrot(r) @ frame_to_sh(V) == frame_to_sh(r @ V)``.
    """
    r = check_rotation(r)
    alpha, beta, gamma = euler_zyz(r)
    return rz_sh(alpha) @ ry_sh(beta) @ rz_sh(gamma)


def frame_to_sh(f: np.ndarray) -> np.ndarray:
    """Unit 9-vector of a frame; accepts a single frame or a stack (..., 3, 3)."""
    f = np.asarray(f, dtype=float)
    if f.ndim == 2:
        check_frame(f)
    return shrot(f) @ Q_REF


def _generators():
    lz = np.zeros((9, 9))
    lz[_SIN_SLOTS, _COS_SLOTS] = _ORDERS
    lz[_COS_SLOTS, _SIN_SLOTS] = -_ORDERS
    ry90 = ry_sh(pi / 2)
    lx = ry90 @ lz @ ry90.T
    ly = RX90.T @ lz @ RX90
    return np.stack([lx, ly, lz])


# Infinitesimal generators: d/dt shrot(exp(t [e_k]x)) at t = 0.
GENERATORS = _generators()


def rotation_from_vector(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula, batched over (..., 3)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    k = np.zeros(w.shape[:-1] + (3, 3))
    k[..., 0, 1], k[..., 0, 2] = -w[..., 2], w[..., 1]
    k[..., 1, 0], k[..., 1, 2] = w[..., 2], -w[..., 0]
    k[..., 2, 0], k[..., 2, 1] = -w[..., 1], w[..., 0]
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24, (1 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * k + b * (k @ k)


def rotation_to_z(d: np.ndarray) -> np.ndarray:
    """Minimal rotation taking unit ``d`` onto +z (about ``d x z``).

    For ``d`` close to -z the axis is undefined; a half-turn about x is used.
    """
    d = np.asarray(d, dtype=float)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    axis = np.cross(d, [0.0, 0.0, 1.0])
    sin_a = np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.arctan2(sin_a, d[..., 2:3])
    flip = (d[..., 2] < 0) & (sin_a[..., 0] < 1e-12)
    unit = np.where(sin_a > 1e-300, axis / np.where(sin_a > 1e-300, sin_a, 1.0), 0.0)
    w = unit * angle
    w[flip] = [pi, 0.0, 0.0]
    return rotation_from_vector(w)


def alignment_rows(directions: np.ndarray) -> np.ndarray:
    """Rows ``e0^T shrot(R_{d->z})`` for each direction; shape (..., 9).

    ``align_residual(q, d) = sqrt(7/12) - alignment_rows(d) @ q``.
    """
    return shrot(rotation_to_z(directions))[..., Y40_INDEX, :]


def align_residual(q: np.ndarray, d: np.ndarray) -> float:
    q = np.asarray(q, dtype=float)
    return float(SQRT_7_12 - alignment_rows(d) @ q)


def frame_distance(qa: np.ndarray, qb: np.ndarray) -> float:
    diff = np.asarray(qa, dtype=float) - np.asarray(qb, dtype=float)
    return float(diff @ diff)


# ---------------------------------------------------------------------------
# projection back onto frames


def _candidate_rotations(n_dirs: int = 24, n_angles: int = 8) -> np.ndarray:
    # Fibonacci directions on the upper hemisphere x in-plane turns over [0, pi/2).
    i = np.arange(n_dirs) + 0.5
    z = 1.0 - i / n_dirs
    phi = i * pi * (3.0 - sqrt(5.0))
    rho = np.sqrt(1.0 - z * z)
    dirs = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    to_dir = np.swapaxes(rotation_to_z(dirs), -1, -2)
    turns = np.arange(n_angles) * (pi / 2) / n_angles
    rz = np.zeros((n_angles, 3, 3))
    rz[:, 0, 0] = rz[:, 1, 1] = np.cos(turns)
    rz[:, 1, 0] = np.sin(turns)
    rz[:, 0, 1] = -np.sin(turns)
    rz[:, 2, 2] = 1.0
    return (to_dir[:, None] @ rz[None]).reshape(-1, 3, 3)


_CANDIDATES = _candidate_rotations()
_CANDIDATE_Q = shrot(_CANDIDATES) @ Q_REF


def project_frames(q: np.ndarray, tol: float = 1e-9, max_iter: int = 50):
    """Batched Gauss-Newton projection of (n, 9) coefficients onto frames.

    Returns ``(frames, converged, residual)`` where ``residual`` is the final
    ``||frame_to_sh(frame) - q_hat||``.  Non-converged entries hold the last
    iterate.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(norms <= 0):
        raise ValueError("cannot project a zero coefficient vector")
    qh = q / norms
    rots = _CANDIDATES[np.argmax(qh @ _CANDIDATE_Q.T, axis=1)].copy()
    converged = np.zeros(len(q), dtype=bool)
    active = np.arange(len(q))
    for _ in range(max_iter):
        if active.size == 0:
            break
        v = shrot(rots[active]) @ Q_REF
        jac = np.einsum("kij,nj->nik", GENERATORS, v)
        res = v - qh[active]
        jtj = np.swapaxes(jac, 1, 2) @ jac
        jtr = np.einsum("nik,ni->nk", jac, res)
        step = -np.linalg.solve(jtj, jtr[..., None])[..., 0]
        rots[active] = rotation_from_vector(step) @ rots[active]
        done = np.linalg.norm(step, axis=1) < tol
        converged[active[done]] = True
        active = active[~done]
    # re-orthonormalize away accumulated rounding
    u, _, vt = np.linalg.svd(rots)
    rots = u @ vt
    residual = np.linalg.norm(shrot(rots) @ Q_REF - qh, axis=1)
    return rots, converged, residual


def project_to_frame(q: np.ndarray, tol: float = 1e-9, max_iter: int = 50) -> np.ndarray:
    """Nearest frame (locally) to the coefficient vector ``q``.

    Raises ``ProjectionError`` when the iteration does not settle, which in
    practice flags queries near singular curves.
    """
    frames, ok, res = project_frames(np.asarray(q, dtype=float)[None], tol, max_iter)
    if not ok[0]:
        raise ProjectionError(
            f"projection did not converge in {max_iter} iterations", frames[0], float(res[0])
        )
    return frames[0]
