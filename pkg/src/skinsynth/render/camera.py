"""Pinhole camera looking straight down at the skin."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Camera:
    """Pinhole at (0, 0, height) looking along -z; image rows run toward -y."""

    width: int = 256
    height: int = 256
    fov_deg: float = 75.0
    height_mm: float = 15.0

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("field of view must lie in (0, 180) degrees")
        if self.width < 16 or self.height < 16:
            raise ValueError("camera resolution must be at least 16 x 16")
        if self.height_mm <= 0:
            raise ValueError("camera must sit above the skin")

    @property
    def position(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.height_mm])

    @property
    def tan_half(self) -> float:
        return math.tan(math.radians(self.fov_deg) / 2)

    def ray_directions(self, jitter: np.ndarray | None = None) -> np.ndarray:
        """Unit directions (H, W, 3) through pixel centres (or jittered points)."""
        r, c = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        fx, fy = (c + 0.5, r + 0.5) if jitter is None else (c + jitter[..., 0], r + jitter[..., 1])
        t = self.tan_half
        # square pixels: the horizontal half-width sets the scale
        half = self.width / 2
        x = (fx - half) / half * t
        y = -(fy - self.height / 2) / half * t
        d = np.stack([x, y, -np.ones_like(x, dtype=np.float64)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def footprint_mm(self) -> float:
        """Half-width of the view on the plane z = 0."""
        return self.height_mm * self.tan_half
