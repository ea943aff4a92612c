"""Closed-form coefficient fields used as fixtures and for sanity checks."""
from __future__ import annotations

import numpy as np

from .sh_frame import SQRT_5_12, SQRT_7_12, frame_to_sh


def constant_field(frame=None):
    q = frame_to_sh(np.eye(3) if frame is None else frame)

    def field(points):
        pts = np.atleast_2d(points)
        return np.tile(q, (len(pts), 1))

    return field


def valence3_field(center=(0.0, 0.0)):
    """Frames with one axis along z, turning by a quarter of the polar angle.

    The coefficient vector is ``(sqrt(5/12) cos phi, 0, 0, 0, sqrt(7/12), 0, 0, 0,
    sqrt(5/12) sin phi)``: smooth everywhere except on the vertical line through
    ``center``, around which the frame turns by 90 degrees per revolution.
    """
    cx, cy = center

    def field(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dx, dy = pts[:, 0] - cx, pts[:, 1] - cy
        rho = np.hypot(dx, dy)
        rho_safe = np.where(rho > 0, rho, 1.0)
        c = np.where(rho > 0, dx / rho_safe, 1.0)
        s = np.where(rho > 0, dy / rho_safe, 0.0)
        q = np.zeros((len(pts), 9))
        q[:, 0] = SQRT_5_12 * c
        q[:, 4] = SQRT_7_12
        q[:, 8] = SQRT_5_12 * s
        return q

    return field
