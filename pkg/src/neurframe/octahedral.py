"""The 24 proper rotations of the cube, frame matching and loop holonomy."""
from __future__ import annotations

from itertools import permutations, product

import numpy as np


def _build_group() -> np.ndarray:
    mats = []
    for perm in permutations(range(3)):
        for signs in product((1, -1), repeat=3):
            m = np.zeros((3, 3))
            for col, (row, sign) in enumerate(zip(perm, signs)):
                m[row, col] = sign
            if round(np.linalg.det(m)) == 1:
                mats.append(m)
    return np.array(mats)


OCTA_MATRICES = _build_group()
"""(24, 3, 3) signed permutation matrices; index 0 is the identity."""

IDENTITY = 0


def _compose_table() -> np.ndarray:
    flat = OCTA_MATRICES.reshape(24, 9)
    prod = np.einsum("aij,bjk->abik", OCTA_MATRICES, OCTA_MATRICES).reshape(24, 24, 9)
    table = np.empty((24, 24), dtype=int)
    for a in range(24):
        for b in range(24):
            table[a, b] = int(np.flatnonzero(np.all(flat == prod[a, b], axis=1))[0])
    return table


COMPOSE = _compose_table()
"""``COMPOSE[a, b]`` is the index of ``OCTA_MATRICES[a] @ OCTA_MATRICES[b]``."""

INVERSE = np.array([int(np.flatnonzero(COMPOSE[a] == IDENTITY)[0]) for a in range(24)])


def element_index(m: np.ndarray) -> int:
    """Index of a signed permutation matrix (rounded) in the group."""
    m = np.asarray(m, dtype=float)
    if np.max(np.abs(m - np.rint(m))) > 1e-6:
        raise ValueError("matrix is not a signed permutation")
    m = np.rint(m)
    hits = np.flatnonzero(np.all(OCTA_MATRICES.reshape(24, 9) == m.reshape(9), axis=1))
    if hits.size == 0:
        raise ValueError("matrix is not a proper cube rotation")
    return int(hits[0])


def element_order(g: int) -> int:
    k, cur = 1, g
    while cur != IDENTITY:
        cur = COMPOSE[cur, g]
        k += 1
    return k


def element_axis(g: int) -> np.ndarray | None:
    """Rotation axis of a group element (None for the identity)."""
    if g == IDENTITY:
        return None
    w, v = np.linalg.eig(OCTA_MATRICES[g])
    axis = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    return axis / np.linalg.norm(axis)


def octahedral_matching(fa: np.ndarray, fb: np.ndarray) -> int:
    """Group element ``g`` minimising the rotation angle between ``fa @ g`` and ``fb``.

    The angle is monotone in ``trace((fa g)^T fb)``, so this is an argmax over
    24 traces; ``np.argmax`` keeps the lowest index on ties.
    """
    c = np.asarray(fa).T @ np.asarray(fb)
    traces = np.einsum("gij,ij->g", OCTA_MATRICES, c)
    return int(np.argmax(traces))


def octahedral_matching_batch(fa: np.ndarray, fb: np.ndarray) -> np.ndarray:
    c = np.swapaxes(fa, -1, -2) @ fb
    return np.argmax(np.einsum("gij,nij->ng", OCTA_MATRICES, c), axis=1)


def compose_sequence(elements) -> int:
    g = IDENTITY
    for e in elements:
        g = COMPOSE[g, e]
    return int(g)


def loop_rotation(frames) -> int:
    """Holonomy of a closed loop of frames (last frame connects back to the first).

    Returns the group index of ``g_0 g_1 ... g_{n-1}`` where ``g_i`` matches
    frame ``i`` to frame ``i + 1``.  Identity means no singularity is enclosed.
    """
    frames = np.asarray(frames, dtype=float)
    if len(frames) < 3:
        raise ValueError("a loop needs at least 3 frames")
    nxt = np.roll(frames, -1, axis=0)
    return compose_sequence(octahedral_matching_batch(frames, nxt))
