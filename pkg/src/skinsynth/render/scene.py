"""Flatten a SkinModel and its materials into arrays for the path tracer.

The interface is the plane just above the highest point of the epidermis
heightfield; its shading normal follows the heightfield gradient, and the
thin sliver between the plane and the heightfield counts as epidermis.
The slab repeats laterally with the period of the heightfields.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from ..anatomy import SkinModel
from ..optics import OpticsConfig, TissueParams, default_table, material_for_layer
from .envmap import EnvMap
from .color import uplift_basis

LAYER_KINDS = ("epidermis", "papillary_dermis", "dermis", "hypodermis", "lesion")
LESION = 4

BOTTOM_ABSORB = 0
BOTTOM_TRANSPARENT = 1

SceneArrays = namedtuple("SceneArrays", [
    "no_skin", "extent", "cell", "heights", "hmin", "hmax", "grad",
    "z_surf", "z_bot", "bottom_mode", "eta", "alpha",
    "mu_a", "mu_s", "g",
    "mu_blood", "blood_ext", "blood", "bx0", "by_top", "bz_top", "bpitch",
    "occ", "lbox", "lpitch",
    "band_dz", "maj_out", "maj_in",
    "caps", "cap_radius", "hgrid", "hgrid_start", "hgrid_items", "hz_max", "hair_albedo",
    "env",
])


@dataclass(frozen=True)
class MaterialOverrides:
    """Hooks used by tests and the furnace scene; None keeps the computed value."""

    mu_a: np.ndarray | None = None  # (5, K)
    mu_s: np.ndarray | None = None
    g: float | None = None
    blood_scale: float = 1.0
    bottom: int = BOTTOM_ABSORB
    band_um: float = 25.0


def layer_coefficients(model: SkinModel, optics: OpticsConfig):
    tissue = TissueParams(model.melanosome_fraction, model.blood_fraction)
    table = default_table()
    mats = [material_for_layer(k, tissue, optics, table) for k in LAYER_KINDS]
    mu_a = np.array([m.mu_a.values for m in mats])
    mu_s = np.array([m.mu_s.values for m in mats])
    blood = material_for_layer("blood", tissue, optics, table).mu_a.values
    b_layer = np.array([0.0, min(1.0, model.blood_fraction * optics.papillary_blood_scale),
                        model.blood_fraction, 0.0, 0.0])
    ext = np.where(np.arange(5) % 3 != 0, np.maximum(0.0, optics.vessel_blood_fraction - b_layer), 0.0)
    ext[LESION] = 0.0
    return mu_a, mu_s, blood, ext


def _lesion_arrays(model: SkinModel):
    if model.lesion is None or model.lesion.n_occupied == 0:
        return np.zeros((1, 1, 1), np.uint8), np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0]), 1.0
    vol = model.lesion.depth_first()
    lo, hi = model.lesion.bounding_box()
    occ = np.ascontiguousarray(vol[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]).astype(np.uint8)
    k0, i0, j0 = model.lesion.seed_cell
    p = model.lesion.pitch_um / 1000.0
    pl = model.placement
    x0 = pl.x_mm + (lo[2] - j0 - 0.5) * p
    y1 = pl.y_mm - (lo[1] - i0 - 0.5) * p
    z1 = pl.z_mm - (lo[0] - k0 - 0.5) * p
    nz, ny, nx = occ.shape
    box = np.array([x0, x0 + nx * p, y1 - ny * p, y1, z1 - nz * p, z1])
    return occ, box, p


def _hair_arrays(model: SkinModel, k: int):
    strands = model.hair.strands
    if not strands:
        empty = np.zeros((0, 6))
        return (empty, 0.0, np.zeros(5), np.zeros(2, np.int64), np.zeros(0, np.int64), -np.inf)
    caps = np.vstack([np.hstack([s[:-1], s[1:]]) for s in strands])
    r = model.hair.thickness_um / 2000.0
    lo = np.minimum(caps[:, :2], caps[:, 3:5]) - r
    hi = np.maximum(caps[:, :2], caps[:, 3:5]) + r
    gx0, gy0 = lo.min(axis=0)
    gx1, gy1 = hi.max(axis=0)
    cell = max(0.25, (gx1 - gx0) / 64, (gy1 - gy0) / 64)
    nx = max(1, int(np.ceil((gx1 - gx0) / cell)))
    ny = max(1, int(np.ceil((gy1 - gy0) / cell)))
    buckets = [[] for _ in range(nx * ny)]
    for n in range(len(caps)):
        c0 = int((lo[n, 0] - gx0) / cell)
        c1 = min(nx - 1, int((hi[n, 0] - gx0) / cell))
        r0 = int((lo[n, 1] - gy0) / cell)
        r1 = min(ny - 1, int((hi[n, 1] - gy0) / cell))
        for rr in range(r0, r1 + 1):
            for cc in range(c0, c1 + 1):
                buckets[rr * nx + cc].append(n)
    start = np.zeros(nx * ny + 1, np.int64)
    start[1:] = np.cumsum([len(b) for b in buckets])
    items = np.array([i for b in buckets for i in b], np.int64)
    grid = np.array([gx0, gy0, cell, nx, ny], np.float64)
    top = float(max(caps[:, 2].max(), caps[:, 5].max()) + r)
    return caps, r, grid, start, items, top


def hair_albedo(k: int) -> np.ndarray:
    from ..optics import wavelength_grid
    mel = default_table()("eumelanin", wavelength_grid(k))
    return 0.35 * np.exp(-0.06 * mel)


def _band_majorants(mu_t, hmin, hmax, z_surf, z_bot, band_dz, blood_peak, bz_top,
                    bz_bot, box, lesion_mu_t):
    nb = max(1, int(np.ceil((z_surf - z_bot) / band_dz)))
    lo = np.array([hmin[1], hmin[2], hmin[3], z_bot]) - 1e-6
    hi = np.array([z_surf, hmax[1], hmax[2], hmax[3]]) + 1e-6
    maj_out = np.zeros(nb)
    maj_in = np.zeros(nb)
    for b in range(nb):
        top = z_surf - b * band_dz
        bot = top - band_dz
        m = 0.0
        for layer in range(4):
            if hi[layer] < bot or lo[layer] > top:
                continue
            extra = 0.0
            if bot <= bz_top and top >= bz_bot:
                extra = blood_peak[layer]
            m = max(m, float(np.max(mu_t[layer] + extra)))
        maj_out[b] = m * 1.0001
        inside = box[5] >= bot and box[4] <= top and box[0] < box[1]
        maj_in[b] = max(maj_out[b], lesion_mu_t * 1.0001) if inside else maj_out[b]
    return maj_out, maj_in


def compile_scene(model: SkinModel | None, env: EnvMap, optics: OpticsConfig = OpticsConfig(),
                  overrides: MaterialOverrides = MaterialOverrides()) -> SceneArrays:
    k = optics.n_wavelengths
    env_spec = np.ascontiguousarray(
        (env.image.astype(np.float64) @ uplift_basis(k).T) * env.scale)
    if model is None:
        z = np.zeros((4, 1, 1))
        return SceneArrays(
            True, 1.0, 1.0, z, np.zeros(4), np.zeros(4), np.zeros((2, 1, 1)),
            0.0, -1.0, BOTTOM_ABSORB, optics.ior, optics.roughness,
            np.zeros((5, k)), np.zeros((5, k)), np.zeros(5),
            np.zeros(k), np.zeros(5), np.zeros((1, 1, 1), np.float32), 0.0, 0.0, 0.0, 1.0,
            np.zeros((1, 1, 1), np.uint8), np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0]), 1.0,
            1.0, np.zeros(1), np.zeros(1),
            np.zeros((0, 6)), 0.0, np.zeros(5), np.zeros(2, np.int64), np.zeros(0, np.int64),
            -np.inf, np.zeros(k), env_spec)

    stack = model.stack
    heights = np.ascontiguousarray(stack.heights_um / 1000.0)
    hmin = heights.reshape(4, -1).min(axis=1)
    hmax = heights.reshape(4, -1).max(axis=1)
    cell = stack.cell_mm
    h0 = heights[0]
    gx = (np.roll(h0, -1, axis=1) - np.roll(h0, 1, axis=1)) / (2 * cell)
    gy = -(np.roll(h0, -1, axis=0) - np.roll(h0, 1, axis=0)) / (2 * cell)
    grad = np.ascontiguousarray(np.stack([gx, gy]))
    z_surf = float(hmax[0]) + 1e-6
    z_bot = float(hmin[3]) - stack.thickness_um["hypodermis"] / 1000.0

    mu_a, mu_s, mu_blood, ext = layer_coefficients(model, optics)
    if overrides.mu_a is not None:
        mu_a = np.broadcast_to(np.asarray(overrides.mu_a, float), mu_a.shape).copy()
    if overrides.mu_s is not None:
        mu_s = np.broadcast_to(np.asarray(overrides.mu_s, float), mu_s.shape).copy()
    ext = ext * overrides.blood_scale
    g = np.full(5, optics.g if overrides.g is None else overrides.g)

    blood = np.ascontiguousarray(model.blood_field, dtype=np.float32)
    bg = model.blood_grid
    bz_bot = bg.z_top - bg.shape[0] * bg.pitch_mm
    fpeak = float(blood.max()) if blood.size else 0.0
    blood_peak = ext[:4] * fpeak * float(mu_blood.max())

    occ, box, lp = _lesion_arrays(model)
    box_in = box.copy()
    if box[0] < box[1]:
        box_in[0::2] -= 1e-6
        box_in[1::2] += 1e-6
    band_dz = overrides.band_um / 1000.0
    maj_out, maj_in = _band_majorants(mu_a + mu_s, hmin, hmax, z_surf, z_bot, band_dz,
                                      blood_peak, bg.z_top, bz_bot, box_in,
                                      float(np.max(mu_a[LESION] + mu_s[LESION])))
    caps, r, hgrid, hstart, hitems, htop = _hair_arrays(model, k)
    return SceneArrays(
        False, float(stack.extent_mm), float(cell), heights, hmin, hmax, grad,
        z_surf, z_bot, int(overrides.bottom), float(optics.ior), float(optics.roughness),
        np.ascontiguousarray(mu_a), np.ascontiguousarray(mu_s), g,
        np.ascontiguousarray(mu_blood), ext, blood, float(bg.x0), float(bg.y_top),
        float(bg.z_top), float(bg.pitch_mm),
        occ, box, float(lp),
        float(band_dz), maj_out, maj_in,
        np.ascontiguousarray(caps), float(r), hgrid, hstart, hitems, float(htop),
        hair_albedo(k), env_spec)
