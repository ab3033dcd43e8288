"""Spectrum <-> RGB conversion on the renderer's wavelength bins.

Spectra are piecewise constant over K uniform bins, so each bin is weighted
by the colour matching functions integrated over its width.  The equal-energy
spectrum is treated as the white point and mapped to sRGB white with a
Bradford adaptation.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

import numpy as np

from ..optics import LAMBDA_MAX, LAMBDA_MIN, wavelength_grid

XYZ_TO_LINEAR_SRGB = np.array([
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
])
D65_WHITE = np.array([0.95047, 1.0, 1.08883])
_BRADFORD = np.array([
    [0.8951, 0.2664, -0.1614],
    [-0.7502, 1.7135, 0.0367],
    [0.0389, -0.0685, 1.0296],
])


@lru_cache(maxsize=1)
def cie_table() -> np.ndarray:
    """Rows of (wavelength, xbar, ybar, zbar)."""
    with resources.as_file(resources.files("skinsynth") / "data" / "cie1931_2deg.txt") as p:
        return np.loadtxt(p, comments="#")


@lru_cache(maxsize=8)
def bin_weights(k: int) -> np.ndarray:
    """(K, 3) CMF integrals over each bin, normalised so a flat spectrum has Y = 1."""
    table = cie_table()
    fine = np.arange(LAMBDA_MIN, LAMBDA_MAX, 0.25) + 0.125
    cmf = np.column_stack([np.interp(fine, table[:, 0], table[:, c]) for c in (1, 2, 3)])
    edges = np.linspace(LAMBDA_MIN, LAMBDA_MAX, k + 1)
    idx = np.digitize(fine, edges) - 1
    w = np.zeros((k, 3))
    np.add.at(w, idx, cmf)
    return w / w[:, 1].sum()


@lru_cache(maxsize=8)
def xyz_to_rgb_matrix(k: int) -> np.ndarray:
    """XYZ -> linear sRGB with the equal-energy white adapted to D65."""
    white = bin_weights(k).sum(axis=0)
    src = _BRADFORD @ white
    dst = _BRADFORD @ D65_WHITE
    adapt = np.linalg.inv(_BRADFORD) @ np.diag(dst / src) @ _BRADFORD
    m = XYZ_TO_LINEAR_SRGB @ adapt
    # absorb the last digits of matrix rounding so white is exactly (1, 1, 1)
    return m / (m @ white)[:, None]


def spectral_to_xyz(spectral: np.ndarray) -> np.ndarray:
    spectral = np.asarray(spectral, dtype=np.float64)
    return spectral @ bin_weights(spectral.shape[-1])


def spectral_to_linear_rgb(spectral: np.ndarray) -> np.ndarray:
    spectral = np.asarray(spectral, dtype=np.float64)
    k = spectral.shape[-1]
    return spectral_to_xyz(spectral) @ xyz_to_rgb_matrix(k).T


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    linear = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(linear <= 0.0031308, 12.92 * linear, 1.055 * linear ** (1 / 2.4) - 0.055)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    encoded = np.asarray(encoded, dtype=np.float64)
    return np.where(encoded <= 0.04045, encoded / 12.92, ((encoded + 0.055) / 1.055) ** 2.4)


def to_uint8(encoded: np.ndarray) -> np.ndarray:
    return np.round(np.clip(encoded, 0.0, 1.0) * 255.0).astype(np.uint8)


def spectral_to_srgb(spectral: np.ndarray, exposure: float = 1.0) -> np.ndarray:
    """Spectral buffer (..., K) -> gamma-encoded sRGB in [0, 1]."""
    return srgb_encode(exposure * spectral_to_linear_rgb(spectral))


def luminance(linear_rgb: np.ndarray) -> np.ndarray:
    return np.asarray(linear_rgb) @ np.array([0.2126, 0.7152, 0.0722])


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@lru_cache(maxsize=8)
def uplift_basis(k: int) -> np.ndarray:
    """(K, 3) smooth red/green/blue band spectra summing to one at every bin."""
    wl = wavelength_grid(k)
    blue = 1.0 - _sigmoid((wl - 490.0) / 15.0)
    red = _sigmoid((wl - 585.0) / 15.0)
    green = 1.0 - red - blue
    return np.column_stack([red, green, blue])


def rgb_to_spectrum(rgb: np.ndarray, k: int) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ uplift_basis(k).T
