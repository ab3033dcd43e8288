"""Equirectangular environment lighting."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..formats import read_hdr, read_pfm, write_hdr, write_pfm

BUILTINS = ("uniform", "sky-gradient")


@dataclass(frozen=True)
class EnvMap:
    """Radiance image indexed [row, col, rgb]; row 0 is the zenith.

    Column u maps to azimuth phi = (u - 1/2) * 2 pi measured from +x toward
    +y, so the left half of the image covers phi in [-pi, 0).
    """

    image: np.ndarray
    scale: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        img = np.ascontiguousarray(self.image, dtype=np.float32)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("environment image must be (H, W, 3)")
        if np.any(img < 0) or not np.all(np.isfinite(img)):
            raise ValueError("environment radiance must be finite and >= 0")
        if self.scale < 0:
            raise ValueError("environment scale must be >= 0")
        object.__setattr__(self, "image", img)

    def lookup(self, directions) -> np.ndarray:
        d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        out = np.array([_lookup(self.image, v) for v in d]) * self.scale
        return out.reshape(np.shape(directions))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        if path.suffix.lower() == ".hdr":
            write_hdr(path, self.image * self.scale)
        else:
            write_pfm(path, self.image * self.scale)


def _lookup(image, d):
    h, w, _ = image.shape
    phi = np.arctan2(d[1], d[0])
    theta = np.arccos(np.clip(d[2], -1.0, 1.0))
    u = (phi / (2 * np.pi) + 0.5) * w - 0.5
    v = theta / np.pi * h - 0.5
    u0 = int(np.floor(u))
    v0 = int(np.floor(v))
    fu, fv = u - u0, v - v0
    out = np.zeros(3)
    for dv, wv in ((0, 1 - fv), (1, fv)):
        row = min(max(v0 + dv, 0), h - 1)
        for du, wu in ((0, 1 - fu), (1, fu)):
            out += wv * wu * image[row, (u0 + du) % w]
    return out


def uniform_env(level: float = 1.0) -> EnvMap:
    return EnvMap(np.full((1, 1, 3), level, np.float32), 1.0, f"uniform({level:g})")


def sky_gradient(height: int = 32, width: int = 64) -> EnvMap:
    """Bright bluish zenith fading to a warm horizon over a dim ground."""
    theta = (np.arange(height) + 0.5) / height * np.pi
    zenith = np.array([0.75, 0.85, 1.1])
    horizon = np.array([1.1, 1.0, 0.85])
    ground = np.array([0.25, 0.22, 0.2])
    rows = []
    for th in theta:
        if th < np.pi / 2:
            t = th / (np.pi / 2)
            rows.append((1 - t) * zenith + t * horizon)
        else:
            t = min(1.0, (th - np.pi / 2) / 0.3)
            rows.append((1 - t) * horizon + t * ground)
    img = np.repeat(np.array(rows)[:, None, :], width, axis=1)
    return EnvMap(img.astype(np.float32), 1.0, "sky-gradient")


_UNIFORM = re.compile(r"^uniform(?:\(\s*([0-9.eE+-]+)\s*\))?$")


def load_envmap(spec: str | Path, scale: float = 1.0) -> EnvMap:
    """Builtin name (``uniform(L)``, ``sky-gradient``) or a .pfm / .hdr file."""
    s = str(spec).strip()
    m = _UNIFORM.match(s)
    if m:
        env = uniform_env(float(m.group(1)) if m.group(1) else 1.0)
    elif s == "sky-gradient":
        env = sky_gradient()
    else:
        path = Path(s)
        if not path.exists():
            raise FileNotFoundError(f"environment map {s!r} not found")
        if path.suffix.lower() == ".hdr":
            img = read_hdr(path)
        else:
            img = read_pfm(path)
            if img.ndim == 2:
                img = np.repeat(img[..., None], 3, axis=2)
        env = EnvMap(img, 1.0, path.name)
    if scale != 1.0:
        env = EnvMap(env.image, env.scale * scale, env.name)
    return env
