"""Noise-free lesion mask from straight primary rays."""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from .camera import Camera
from .scene import _lesion_arrays


@njit(cache=True)
def _ray_hits_grid(occ, box, pitch, ox, oy, oz, dx, dy, dz):
    # grid space: g = ((x - x0), (y1 - y), (z1 - z)) / pitch, indices [k, i, j]
    gx, gy, gz = (ox - box[0]) / pitch, (box[3] - oy) / pitch, (box[5] - oz) / pitch
    vx, vy, vz = dx, -dy, -dz
    nz, ny, nx = occ.shape
    dims = (nx, ny, nz)
    o = (gx, gy, gz)
    v = (vx, vy, vz)
    t0, t1 = 0.0, np.inf
    for a in range(3):
        if v[a] == 0.0:
            if o[a] < 0.0 or o[a] > dims[a]:
                return False
            continue
        ta = (0.0 - o[a]) / v[a]
        tb = (dims[a] - o[a]) / v[a]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    if t0 > t1:
        return False
    t = t0 + 1e-9
    px, py, pz = gx + t * vx, gy + t * vy, gz + t * vz
    i = min(max(int(math.floor(px)), 0), nx - 1)
    j = min(max(int(math.floor(py)), 0), ny - 1)
    k = min(max(int(math.floor(pz)), 0), nz - 1)
    step = np.empty(3, np.int64)
    tmax = np.empty(3)
    tdelta = np.empty(3)
    cur = np.array([i, j, k])
    pos = (px, py, pz)
    for a in range(3):
        if v[a] > 0:
            step[a] = 1
            tmax[a] = t + (cur[a] + 1 - pos[a]) / v[a]
            tdelta[a] = 1.0 / v[a]
        elif v[a] < 0:
            step[a] = -1
            tmax[a] = t + (cur[a] - pos[a]) / v[a]
            tdelta[a] = -1.0 / v[a]
        else:
            step[a] = 0
            tmax[a] = np.inf
            tdelta[a] = np.inf
    while True:
        if occ[cur[2], cur[1], cur[0]] != 0:
            return True
        a = 0
        if tmax[1] < tmax[a]:
            a = 1
        if tmax[2] < tmax[a]:
            a = 2
        if tmax[a] > t1:
            return False
        cur[a] += step[a]
        if cur[a] < 0 or cur[a] >= dims[a]:
            return False
        tmax[a] += tdelta[a]


@njit(cache=True, parallel=True)
def _mask_kernel(occ, box, pitch, dirs, cam_z, out):
    h, w, _ = dirs.shape
    for p in prange(h * w):
        r = p // w
        c = p - r * w
        if _ray_hits_grid(occ, box, pitch, 0.0, 0.0, cam_z, dirs[r, c, 0], dirs[r, c, 1], dirs[r, c, 2]):
            out[r, c] = 1


def render_mask(model, camera: Camera) -> np.ndarray:
    """uint8 mask, 1 where the pixel-centre ray crosses an occupied lesion voxel."""
    out = np.zeros((camera.height, camera.width), np.uint8)
    if model is None or model.lesion is None or model.lesion.n_occupied == 0:
        return out
    occ, box, pitch = _lesion_arrays(model)
    _mask_kernel(occ, box, pitch, camera.ray_directions(), camera.height_mm, out)
    return out
