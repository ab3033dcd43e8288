"""Henyey-Greenstein phase function."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .._rng import new_state, next_float
from .bsdf import onb


@njit(cache=True, inline="always")
def hg_cos(g, u):
    """Inverse-CDF sample of the scattering cosine."""
    if abs(g) < 1e-3:
        return 1.0 - 2.0 * u
    s = (1.0 - g * g) / (1.0 - g + 2.0 * g * u)
    return min(1.0, max(-1.0, (1.0 + g * g - s * s) / (2.0 * g)))


@njit(cache=True, inline="always")
def hg_sample(dx, dy, dz, g, u1, u2):
    """New unit direction scattered about travel direction d."""
    c = hg_cos(g, u1)
    s = math.sqrt(max(0.0, 1.0 - c * c))
    phi = 2.0 * math.pi * u2
    tx, ty, tz, bx, by, bz = onb(dx, dy, dz)
    cp, sp = s * math.cos(phi), s * math.sin(phi)
    return (cp * tx + sp * bx + c * dx,
            cp * ty + sp * by + c * dy,
            cp * tz + sp * bz + c * dz)


def hg_pdf(cos_theta, g):
    """Density per steradian."""
    cos_theta = np.asarray(cos_theta, dtype=np.float64)
    return (1 - g * g) / (4 * np.pi * (1 + g * g - 2 * g * cos_theta) ** 1.5)


@njit(cache=True)
def _draw(g, n, d, state):
    out = np.empty((n, 3))
    for i in range(n):
        x, y, z = hg_sample(d[0], d[1], d[2], g, next_float(state), next_float(state))
        out[i, 0] = x
        out[i, 1] = y
        out[i, 2] = z
    return out


def sample_hg(g: float, n: int, direction=(0.0, 0.0, 1.0), seed: int = 0) -> np.ndarray:
    """``n`` scattered directions for incoming travel ``direction``."""
    if not -1.0 < g < 1.0:
        raise ValueError("g must lie in (-1, 1)")
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    return _draw(float(g), int(n), d, new_state(seed))
