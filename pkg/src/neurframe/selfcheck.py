"""Embedded oracle suite: SH quadrature, loss gradients, octahedral group closure.

Each check returns a ``CheckResult``; ``run_selfcheck`` runs them all.  The
``q_ref`` argument exists so tests can feed a perturbed reference table and
watch the quadrature check fail.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.integrate import lebedev_rule
from scipy.spatial.transform import Rotation

from .mesh import generate_primitive, normalize_to_unit_box, subdivide_multi_boundary_tets
from .features import detect_features
from .octahedral import COMPOSE, IDENTITY, INVERSE, OCTA_MATRICES
from .sh_frame import C0, C1, Q_REF, sh_basis, shrot
from .siren import init_params
from .training import loss_boundary, loss_feature, loss_smoothness, prepare_training_data


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (tol {self.tolerance:.0e}, {self.seconds:.2f}s)"


def frame_function(frames, s):
    """``F_V(s) = sum_i (s.v_i)^2 (s.v_{i+1})^2`` for frames (n, 3, 3) at directions (m, 3)."""
    d = np.einsum("mk,nki->nmi", s, frames)
    d2 = d * d
    return np.sum(d2 * np.roll(d2, -1, axis=2), axis=2)


def quadrature_coefficients(frames, degree: int = 17):
    """Band-4 coefficients of ``F_V`` by Lebedev quadrature, rescaled to unit norm."""
    pts, w = lebedev_rule(degree)
    pts = pts.T
    basis = sh_basis(pts)
    f = frame_function(np.asarray(frames, dtype=float).reshape(-1, 3, 3), pts)
    band0 = (f @ w) / (2.0 * np.sqrt(np.pi))
    return (f * w) @ basis / C1, band0


def check_sh_quadrature(n_frames: int = 100, seed: int = 0, q_ref=None, tol: float = 1e-6) -> CheckResult:
    t = time.perf_counter()
    q_ref = Q_REF if q_ref is None else np.asarray(q_ref, dtype=float)
    rots = Rotation.random(n_frames, random_state=seed).as_matrix()
    quad, band0 = quadrature_coefficients(rots)
    ours = shrot(rots) @ q_ref
    err = float(np.max(np.linalg.norm(ours - quad, axis=1) / np.linalg.norm(quad, axis=1)))
    err = max(err, float(np.max(np.abs(band0 - C0))) / C0)
    return CheckResult("sh_quadrature", err < tol, err, tol, time.perf_counter() - t)


def check_shrot_algebra(n: int = 50, seed: int = 1, tol: float = 1e-8) -> CheckResult:
    t = time.perf_counter()
    a = Rotation.random(n, random_state=seed).as_matrix()
    b = Rotation.random(n, random_state=seed + 1).as_matrix()
    da, db = shrot(a), shrot(b)
    hom = np.max(np.abs(shrot(a @ b) - da @ db))
    orth = np.max(np.abs(np.swapaxes(da, 1, 2) @ da - np.eye(9)))
    err = float(max(hom, orth))
    return CheckResult("shrot_homomorphism_orthogonality", err < tol, err, tol, time.perf_counter() - t)


def check_octahedral_invariance(tol: float = 1e-12) -> CheckResult:
    t = time.perf_counter()
    err = float(np.max(np.abs(shrot(OCTA_MATRICES) @ Q_REF - Q_REF)))
    return CheckResult("octahedral_invariance", err < tol, err, tol, time.perf_counter() - t)


def check_group_closure() -> CheckResult:
    """Table entries match matrix products; identity, inverses and associativity hold."""
    t = time.perf_counter()
    prod = np.einsum("aij,bjk->abik", OCTA_MATRICES, OCTA_MATRICES)
    table = OCTA_MATRICES[COMPOSE]
    bad = int(np.sum(np.any(np.abs(prod - table) > 1e-12, axis=(2, 3))))
    idx = np.arange(24)
    bad += int(np.sum(COMPOSE[IDENTITY] != idx) + np.sum(COMPOSE[:, IDENTITY] != idx))
    bad += int(np.sum(COMPOSE[idx, INVERSE] != IDENTITY))
    bad += int(np.sum(COMPOSE[COMPOSE[:, :, None], idx[None, None, :]] != COMPOSE[idx[:, None, None], COMPOSE[None, :, :]]))
    bad += int(np.sum(np.abs(np.linalg.det(OCTA_MATRICES) - 1) > 1e-12))
    bad += 24 - len({m.tobytes() for m in np.rint(OCTA_MATRICES).astype(int)})
    return CheckResult("octahedral_group_closure", bad == 0, float(bad), 0.5, time.perf_counter() - t)


def gradient_error(loss, params, n_entries: int = 20, h: float = 1e-6, seed: int = 0) -> float:
    """Max relative error between ``loss(params) -> (value, grads)`` and central differences.

    Checks ``n_entries`` randomly chosen scalars per parameter array.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss(params)
    worst = 0.0
    for p, g in zip(params.arrays(), grads.arrays()):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_entries, flat.size), replace=False)
        for k in picks:
            old = flat[k]
            flat[k] = old + h
            up = loss(params)[0]
            flat[k] = old - h
            down = loss(params)[0]
            flat[k] = old
            fd = (up - down) / (2 * h)
            scale = max(abs(fd), abs(gflat[k]), 1e-8)
            worst = max(worst, abs(fd - gflat[k]) / scale)
    return worst


def small_fixture(widths=(3, 16, 16, 9), seed: int = 0):
    mesh, _ = normalize_to_unit_box(generate_primitive("cube", 1))
    mesh = subdivide_multi_boundary_tets(mesh)
    data = prepare_training_data(mesh, detect_features(mesh))
    return data, init_params(seed, widths)


def check_gradients(tol: float = 1e-4) -> CheckResult:
    t = time.perf_counter()
    data, params = small_fixture()
    terms = (
        lambda p: loss_smoothness(p, data.dual),
        lambda p: loss_boundary(p, data),
        lambda p: loss_feature(p, data, sigma=10.0),
    )
    err = max(gradient_error(f, params) for f in terms)
    return CheckResult("loss_gradients", err < tol, err, tol, time.perf_counter() - t)


def run_selfcheck(q_ref=None) -> list:
    return [
        check_sh_quadrature(q_ref=q_ref),
        check_shrot_algebra(),
        check_octahedral_invariance(),
        check_group_closure(),
        check_gradients(),
    ]
