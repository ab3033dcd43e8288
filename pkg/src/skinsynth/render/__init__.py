"""Spectral Monte Carlo rendering of skin models."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np
from PIL import Image

from ..optics import OpticsConfig
from .camera import Camera
from .color import spectral_to_linear_rgb, srgb_encode, to_uint8
from .envmap import EnvMap, load_envmap
from .kernel import render_kernel
from .mask import render_mask
from .scene import BOTTOM_ABSORB, BOTTOM_TRANSPARENT, MaterialOverrides, compile_scene

__all__ = [
    "Camera", "EnvMap", "RenderConfig", "RenderOutput", "MaterialOverrides",
    "BOTTOM_ABSORB", "BOTTOM_TRANSPARENT", "load_envmap", "render", "render_mask",
]


@dataclass(frozen=True)
class RenderConfig:
    spp: int = 124
    max_depth: int = 100_000
    rr_depth: int = 256
    wavelengths_per_path: int = 4
    seed: int = 0
    tile_size: int = 16
    threads: int | None = None
    exposure: float = 1.0
    max_events: int = 5_000_000

    def __post_init__(self):
        if self.spp < 1:
            raise ValueError("spp must be >= 1")
        if self.max_depth < 2:
            raise ValueError("max_depth must be >= 2")
        if self.rr_depth < 0:
            raise ValueError("rr_depth must be >= 0")
        if self.wavelengths_per_path != 4:
            raise ValueError("the kernel traces exactly 4 wavelengths per path")
        if self.exposure <= 0:
            raise ValueError("exposure must be positive")


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3) uint8, sRGB encoded
    radiance: np.ndarray  # (H, W, 3) float32 linear RGB
    spectral: np.ndarray  # (H, W, K) float32
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    metadata: dict = field(default_factory=dict)

    def save(self, out_dir: str | Path, stem: str = "render", pfm: bool = False) -> dict[str, Path]:
        from ..formats import write_pfm

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"image": out / f"{stem}.png", "mask": out / f"{stem}_mask.png",
                 "metadata": out / f"{stem}.json"}
        save_png(paths["image"], self.image)
        save_png(paths["mask"], self.mask * 255)
        if pfm:
            paths["radiance"] = out / f"{stem}.pfm"
            write_pfm(paths["radiance"], self.radiance)
        paths["metadata"].write_text(json.dumps(self.metadata, indent=2, sort_keys=True))
        return paths


def save_png(path, array: np.ndarray) -> None:
    # fixed encoder settings keep the bytes reproducible
    Image.fromarray(np.ascontiguousarray(array)).save(path, format="PNG", optimize=False,
                                                      compress_level=6)


def _set_threads(n: int | None) -> int:
    limit = numba.config.NUMBA_NUM_THREADS
    n = limit if n is None else max(1, min(int(n), limit))
    numba.set_num_threads(n)
    return n


def render(model, camera: Camera = Camera(), env: EnvMap | str = "sky-gradient",
           config: RenderConfig = RenderConfig(), optics: OpticsConfig = OpticsConfig(),
           overrides: MaterialOverrides = MaterialOverrides()) -> RenderOutput:
    """Render ``model`` (a SkinModel, or None for an empty scene)."""
    if isinstance(env, (str, Path)):
        env = load_envmap(env)
    if optics.n_wavelengths % 4:
        raise ValueError("wavelength count must be a multiple of 4")
    threads = _set_threads(config.threads)
    t_start = time.perf_counter()
    scene = compile_scene(model, env, optics, overrides)
    h, w, k = camera.height, camera.width, optics.n_wavelengths
    acc = np.zeros((h * w, k))
    stats = np.zeros((h * w, 2), np.int64)
    render_kernel(scene, w, h, camera.tan_half, camera.height_mm, config.spp,
                  np.uint64(config.seed), config.max_depth, config.rr_depth,
                  config.max_events, acc, stats)
    spectral = acc.reshape(h, w, k)
    linear = spectral_to_linear_rgb(spectral)
    image = to_uint8(srgb_encode(config.exposure * linear))
    mask = render_mask(model, camera)
    elapsed = time.perf_counter() - t_start
    meta = {
        "seed": config.seed,
        "spp": config.spp,
        "width": w,
        "height": h,
        "wavelength_bins": k,
        "threads": threads,
        "render_ms": round(elapsed * 1000.0, 1),
        "nonfinite_samples": int(stats[:, 0].sum()),
        "truncated_paths": int(stats[:, 1].sum()),
        "env": env.name,
        "camera": asdict(camera),
    }
    return RenderOutput(image, linear.astype(np.float32), spectral.astype(np.float32), mask, meta)
