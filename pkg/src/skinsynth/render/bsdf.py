"""Rough dielectric interface: GGX microfacets, visible-normal sampling.

Directions follow the usual convention: ``wi`` points away from the surface
toward where light is going to (the camera side), ``wo`` is the sampled
direction, also pointing away.  ``eta`` is the index on the far side of the
surface divided by the index on the ``wi`` side.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def onb(nx, ny, nz):
    """Tangent frame (t, b) around unit normal n."""
    sign = 1.0 if nz >= 0.0 else -1.0
    a = -1.0 / (sign + nz)
    b = nx * ny * a
    return (1.0 + sign * nx * nx * a, sign * b, -sign * nx,
            b, sign + ny * ny * a, -ny)


@njit(cache=True, inline="always")
def fresnel_dielectric(cos_i, eta):
    """Unpolarised reflectance and transmitted cosine; cos_t = 0 under TIR."""
    cos_i = min(max(cos_i, 0.0), 1.0)
    if eta == 1.0:
        return 0.0, cos_i
    sin2_t = (1.0 - cos_i * cos_i) / (eta * eta)
    if sin2_t >= 1.0:
        return 1.0, 0.0
    cos_t = math.sqrt(1.0 - sin2_t)
    rs = (cos_i - eta * cos_t) / (cos_i + eta * cos_t)
    rp = (eta * cos_i - cos_t) / (eta * cos_i + cos_t)
    return 0.5 * (rs * rs + rp * rp), cos_t


@njit(cache=True, inline="always")
def smith_g1(cos_theta, alpha):
    c2 = cos_theta * cos_theta
    if c2 <= 0.0:
        return 0.0
    tan2 = max(0.0, 1.0 - c2) / c2
    return 2.0 / (1.0 + math.sqrt(1.0 + alpha * alpha * tan2))


@njit(cache=True, inline="always")
def ggx_d(cos_h, alpha):
    if cos_h <= 0.0:
        return 0.0
    a2 = alpha * alpha
    t = cos_h * cos_h * (a2 - 1.0) + 1.0
    return a2 / (math.pi * t * t)


@njit(cache=True, inline="always")
def sample_vndf(wx, wy, wz, alpha, u1, u2):
    """Visible GGX normal for local view direction w (w.z > 0)."""
    vx, vy, vz = alpha * wx, alpha * wy, wz
    inv = 1.0 / math.sqrt(vx * vx + vy * vy + vz * vz)
    vx *= inv
    vy *= inv
    vz *= inv
    lensq = vx * vx + vy * vy
    if lensq > 0.0:
        il = 1.0 / math.sqrt(lensq)
        t1x, t1y, t1z = -vy * il, vx * il, 0.0
    else:
        t1x, t1y, t1z = 1.0, 0.0, 0.0
    t2x = vy * t1z - vz * t1y
    t2y = vz * t1x - vx * t1z
    t2z = vx * t1y - vy * t1x
    r = math.sqrt(u1)
    phi = 2.0 * math.pi * u2
    p1 = r * math.cos(phi)
    p2 = r * math.sin(phi)
    s = 0.5 * (1.0 + vz)
    p2 = (1.0 - s) * math.sqrt(max(0.0, 1.0 - p1 * p1)) + s * p2
    p3 = math.sqrt(max(0.0, 1.0 - p1 * p1 - p2 * p2))
    nx = p1 * t1x + p2 * t2x + p3 * vx
    ny = p1 * t1y + p2 * t2y + p3 * vy
    nz = p1 * t1z + p2 * t2z + p3 * vz
    mx, my, mz = alpha * nx, alpha * ny, max(1e-9, nz)
    inv = 1.0 / math.sqrt(mx * mx + my * my + mz * mz)
    return mx * inv, my * inv, mz * inv


@njit(cache=True)
def sample_dielectric(wi_x, wi_y, wi_z, nx, ny, nz, eta, alpha, u1, u2, u3):
    """Sample the rough dielectric.

    Returns (wo_x, wo_y, wo_z, weight, refracted).  The weight is the
    shadowing term G1(wo) <= 1, or 0 when the sample ends on the wrong side
    of the mean surface; Fresnel is folded into the reflect/refract choice.
    ``n`` must lie on the ``wi`` side.
    """
    tx, ty, tz, bx, by, bz = onb(nx, ny, nz)
    lx = wi_x * tx + wi_y * ty + wi_z * tz
    ly = wi_x * bx + wi_y * by + wi_z * bz
    lz = wi_x * nx + wi_y * ny + wi_z * nz
    if lz <= 1e-9:
        lz = 1e-9
    mx, my, mz = sample_vndf(lx, ly, lz, alpha, u1, u2)
    cos_i = lx * mx + ly * my + lz * mz
    if cos_i < 0.0:
        cos_i = 0.0
    f, cos_t = fresnel_dielectric(cos_i, eta)
    if u3 < f:
        ox = 2.0 * cos_i * mx - lx
        oy = 2.0 * cos_i * my - ly
        oz = 2.0 * cos_i * mz - lz
        refracted = False
    else:
        inv_eta = 1.0 / eta
        k = cos_i * inv_eta - cos_t
        ox = -lx * inv_eta + k * mx
        oy = -ly * inv_eta + k * my
        oz = -lz * inv_eta + k * mz
        refracted = True
    inv = 1.0 / math.sqrt(ox * ox + oy * oy + oz * oz)
    ox *= inv
    oy *= inv
    oz *= inv
    # single-scattering model: leaving on the wrong side of the microsurface is lost energy
    weight = smith_g1(oz, alpha) if (oz < 0.0) == refracted else 0.0
    wx = ox * tx + oy * bx + oz * nx
    wy = ox * ty + oy * by + oz * ny
    wz = ox * tz + oy * bz + oz * nz
    return wx, wy, wz, weight, refracted


def sample(incident, normal, eta: float, alpha: float, u) -> tuple[np.ndarray, float, bool]:
    """Python entry point; ``incident`` is the travel direction of the ray."""
    if alpha <= 0 or eta <= 0:
        raise ValueError("need alpha > 0 and eta > 0")
    d = np.asarray(incident, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    wi = -d / np.linalg.norm(d)
    if wi @ n < 0:
        n = -n
    ox, oy, oz, w, refr = sample_dielectric(wi[0], wi[1], wi[2], n[0], n[1], n[2],
                                            eta, alpha, u[0], u[1], u[2])
    return np.array([ox, oy, oz]), float(w), bool(refr)


def evaluate(wi, wo, normal, eta: float, alpha: float) -> float:
    """BSDF value f(wi, wo) of the rough interface (no cosine factor).

    ``eta`` is the index below the surface over the index above it; either
    direction may lie on either side.
    """
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    ci, co = float(wi @ n), float(wo @ n)
    if ci == 0.0 or co == 0.0:
        return 0.0
    eta_i = 1.0 if ci > 0 else eta
    eta_o = 1.0 if co > 0 else eta
    if ci * co > 0:
        h = wi + wo
        h = h / np.linalg.norm(h)
        if h @ n < 0:
            h = -h
        cih = float(wi @ h)
        eta_t = eta if ci > 0 else 1.0
        f, _ = fresnel_dielectric(abs(cih), eta_t / eta_i)
        g = smith_g1(abs(ci), alpha) * smith_g1(abs(co), alpha)
        if (wi @ h) * ci <= 0 or (wo @ h) * co <= 0:
            return 0.0
        return f * ggx_d(float(h @ n), alpha) * g / (4.0 * abs(ci) * abs(co))
    h = -(eta_i * wi + eta_o * wo)
    h = h / np.linalg.norm(h)
    if h @ n < 0:
        h = -h
    cih, coh = float(wi @ h), float(wo @ h)
    if cih * ci <= 0 or coh * co <= 0:
        return 0.0
    f, _ = fresnel_dielectric(abs(cih), eta_o / eta_i)
    g = smith_g1(abs(ci), alpha) * smith_g1(abs(co), alpha)
    denom = eta_i * cih + eta_o * coh
    return (abs(cih) * abs(coh) * eta_o * eta_o * (1.0 - f) * ggx_d(float(h @ n), alpha) * g
            / (abs(ci) * abs(co) * denom * denom))
