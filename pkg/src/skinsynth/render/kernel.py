"""Jitted transport kernel.

Each camera path carries four wavelength bins ``j0 + m K/4``.  One of them, the
hero, drives every stochastic decision; the others ride along with the ratio
of their path density to the hero's.  Contributions use the balance
heuristic over the four tracking strategies, so per-bin weights stay below 4.

Free flight uses delta tracking against piecewise-constant majorants: the
slab is cut into depth bands and the lesion's bounding box gets its own,
larger majorant.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from .._rng import next_float, stream_state
from .bsdf import onb, sample_dielectric
from .phase import hg_sample

N_HERO = 4
INF = np.inf
NUDGE = 1e-7


@njit(cache=True, inline="always")
def _wrap(i, n):
    i = i % n
    return i + n if i < 0 else i


@njit(cache=True)
def bilinear_periodic(grid, extent, cell, x, y):
    n = grid.shape[0]
    col = (x + 0.5 * extent) / cell - 0.5
    row = (0.5 * extent - y) / cell - 0.5
    c0 = math.floor(col)
    r0 = math.floor(row)
    fc = col - c0
    fr = row - r0
    c0 = _wrap(int(c0), n)
    r0 = _wrap(int(r0), n)
    c1 = c0 + 1 if c0 + 1 < n else 0
    r1 = r0 + 1 if r0 + 1 < n else 0
    return ((1.0 - fr) * ((1.0 - fc) * grid[r0, c0] + fc * grid[r0, c1])
            + fr * ((1.0 - fc) * grid[r1, c0] + fc * grid[r1, c1]))


@njit(cache=True)
def layer_at(S, x, y, z):
    for k in range(1, 4):
        if z > S.hmax[k]:
            return k - 1
        if z > S.hmin[k] and z > bilinear_periodic(S.heights[k], S.extent, S.cell, x, y):
            return k - 1
    return 3


@njit(cache=True)
def blood_at(S, x, y, z):
    if z >= S.bz_top:
        return 0.0
    nz, ny, nx = S.blood.shape
    k = int((S.bz_top - z) / S.bpitch)
    if k >= nz:
        return 0.0
    i = _wrap(int(math.floor((S.by_top - y) / S.bpitch)), ny)
    j = _wrap(int(math.floor((x - S.bx0) / S.bpitch)), nx)
    return S.blood[k, i, j]


@njit(cache=True)
def lesion_at(S, x, y, z):
    b = S.lbox
    if not (b[0] <= x < b[1] and b[2] < y <= b[3] and b[4] < z <= b[5]):
        return False
    nz, ny, nx = S.occ.shape
    j = int((x - b[0]) / S.lpitch)
    i = int((b[3] - y) / S.lpitch)
    k = int((b[5] - z) / S.lpitch)
    if j >= nx or i >= ny or k >= nz:
        return False
    return S.occ[k, i, j] != 0


@njit(cache=True, inline="always")
def _box_valid(S):
    return S.lbox[0] < S.lbox[1]


@njit(cache=True)
def in_lesion_box(S, x, y, z):
    b = S.lbox
    e = 1e-6
    return (b[0] - e <= x <= b[1] + e and b[2] - e <= y <= b[3] + e
            and b[4] - e <= z <= b[5] + e)


@njit(cache=True)
def box_interval(S, ox, oy, oz, dx, dy, dz):
    """Entry and exit distances of the (slightly inflated) lesion box."""
    b = S.lbox
    e = 1e-6
    t0 = -INF
    t1 = INF
    for a in range(3):
        o = ox if a == 0 else (oy if a == 1 else oz)
        d = dx if a == 0 else (dy if a == 1 else dz)
        lo = b[2 * a] - e
        hi = b[2 * a + 1] + e
        if d == 0.0:
            if o < lo or o > hi:
                return INF, -INF
            continue
        ta = (lo - o) / d
        tb = (hi - o) / d
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    return t0, t1


@njit(cache=True)
def shading_normal(S, x, y):
    gx = bilinear_periodic(S.grad[0], S.extent, S.cell, x, y)
    gy = bilinear_periodic(S.grad[1], S.extent, S.cell, x, y)
    inv = 1.0 / math.sqrt(gx * gx + gy * gy + 1.0)
    return -gx * inv, -gy * inv, inv


@njit(cache=True)
def env_lookup(env, dx, dy, dz, j):
    h, w, _ = env.shape
    phi = math.atan2(dy, dx)
    theta = math.acos(min(1.0, max(-1.0, dz)))
    u = (phi / (2.0 * math.pi) + 0.5) * w - 0.5
    v = theta / math.pi * h - 0.5
    u0 = math.floor(u)
    v0 = math.floor(v)
    fu = u - u0
    fv = v - v0
    c0 = _wrap(int(u0), w)
    c1 = c0 + 1 if c0 + 1 < w else 0
    r0 = min(max(int(v0), 0), h - 1)
    r1 = min(max(int(v0) + 1, 0), h - 1)
    return ((1.0 - fv) * ((1.0 - fu) * env[r0, c0, j] + fu * env[r0, c1, j])
            + fv * ((1.0 - fu) * env[r1, c0, j] + fu * env[r1, c1, j]))


# ---------------------------------------------------------------------------
# hair


@njit(cache=True)
def ray_capsule(ox, oy, oz, dx, dy, dz, c, r):
    ax, ay, az, bx, by, bz = c[0], c[1], c[2], c[3], c[4], c[5]
    bax, bay, baz = bx - ax, by - ay, bz - az
    oax, oay, oaz = ox - ax, oy - ay, oz - az
    baba = bax * bax + bay * bay + baz * baz
    bard = bax * dx + bay * dy + baz * dz
    baoa = bax * oax + bay * oay + baz * oaz
    rdoa = dx * oax + dy * oay + dz * oaz
    oaoa = oax * oax + oay * oay + oaz * oaz
    qa = baba - bard * bard
    qb = baba * rdoa - baoa * bard
    qc = baba * oaoa - baoa * baoa - r * r * baba
    h = qb * qb - qa * qc
    if h >= 0.0 and qa > 1e-20:
        t = (-qb - math.sqrt(h)) / qa
        yq = baoa + t * bard
        if 0.0 < yq < baba:
            return t
        if yq <= 0.0:
            cx, cy, cz = oax, oay, oaz
        else:
            cx, cy, cz = ox - bx, oy - by, oz - bz
        b2 = dx * cx + dy * cy + dz * cz
        c2 = cx * cx + cy * cy + cz * cz - r * r
        h2 = b2 * b2 - c2
        if h2 > 0.0:
            return -b2 - math.sqrt(h2)
    return -1.0


@njit(cache=True)
def hair_hit(S, ox, oy, oz, dx, dy, dz, tmax):
    """Nearest hair capsule along the ray before ``tmax``; (-1, -1) if none."""
    if S.caps.shape[0] == 0 or oz > S.hz_max and dz >= 0.0:
        return -1.0, -1
    gx0, gy0, cell = S.hgrid[0], S.hgrid[1], S.hgrid[2]
    nx, ny = int(S.hgrid[3]), int(S.hgrid[4])
    t0 = 0.0
    t1 = tmax
    if dz < 0.0:
        t0 = max(t0, (oz - S.hz_max) / -dz)
    elif dz > 0.0:
        t1 = min(t1, (S.hz_max - oz) / dz)
    for a in range(2):
        o = ox if a == 0 else oy
        d = dx if a == 0 else dy
        lo = gx0 if a == 0 else gy0
        hi = lo + cell * (nx if a == 0 else ny)
        if d == 0.0:
            if o < lo or o > hi:
                return -1.0, -1
            continue
        ta = (lo - o) / d
        tb = (hi - o) / d
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    if t0 > t1:
        return -1.0, -1
    px = ox + dx * t0
    py = oy + dy * t0
    cx = min(max(int((px - gx0) / cell), 0), nx - 1)
    cy = min(max(int((py - gy0) / cell), 0), ny - 1)
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    tdx = cell / abs(dx) if dx != 0.0 else INF
    tdy = cell / abs(dy) if dy != 0.0 else INF
    if dx > 0:
        tmx = t0 + (gx0 + (cx + 1) * cell - px) / dx
    elif dx < 0:
        tmx = t0 + (gx0 + cx * cell - px) / dx
    else:
        tmx = INF
    if dy > 0:
        tmy = t0 + (gy0 + (cy + 1) * cell - py) / dy
    elif dy < 0:
        tmy = t0 + (gy0 + cy * cell - py) / dy
    else:
        tmy = INF
    best = INF
    best_i = -1
    while True:
        cidx = cy * nx + cx
        for q in range(S.hgrid_start[cidx], S.hgrid_start[cidx + 1]):
            n = S.hgrid_items[q]
            t = ray_capsule(ox, oy, oz, dx, dy, dz, S.caps[n], S.cap_radius)
            if 1e-7 < t < best and t < tmax:
                best = t
                best_i = n
        t_next = min(tmx, tmy)
        if best <= t_next or t_next > t1:
            break
        if tmx < tmy:
            cx += sx
            tmx += tdx
            if cx < 0 or cx >= nx:
                break
        else:
            cy += sy
            tmy += tdy
            if cy < 0 or cy >= ny:
                break
    if best_i < 0:
        return -1.0, -1
    return best, best_i


@njit(cache=True)
def capsule_normal(S, n, x, y, z):
    c = S.caps[n]
    bax, bay, baz = c[3] - c[0], c[4] - c[1], c[5] - c[2]
    pax, pay, paz = x - c[0], y - c[1], z - c[2]
    baba = bax * bax + bay * bay + baz * baz
    h = 0.0 if baba == 0.0 else min(1.0, max(0.0, (pax * bax + pay * bay + paz * baz) / baba))
    nx, ny, nz = pax - h * bax, pay - h * bay, paz - h * baz
    inv = 1.0 / math.sqrt(nx * nx + ny * ny + nz * nz)
    return nx * inv, ny * inv, nz * inv


@njit(cache=True, inline="always")
def cosine_hemisphere(nx, ny, nz, u1, u2):
    r = math.sqrt(u1)
    phi = 2.0 * math.pi * u2
    lx, ly, lz = r * math.cos(phi), r * math.sin(phi), math.sqrt(max(0.0, 1.0 - u1))
    tx, ty, tz, bx, by, bz = onb(nx, ny, nz)
    return (lx * tx + ly * bx + lz * nx,
            lx * ty + ly * by + lz * ny,
            lx * tz + ly * bz + lz * nz)


# ---------------------------------------------------------------------------
# path


@njit(cache=True)
def _splat(S, acc, jb, dx, dy, dz, tp, alb, ratio):
    mean = 0.25 * (ratio[0] + ratio[1] + ratio[2] + ratio[3])
    # each bin lands in a path's group with probability N_HERO / K
    scale = acc.shape[0] / N_HERO
    vals = np.empty(N_HERO)
    for i in range(N_HERO):
        L = env_lookup(S.env, dx, dy, dz, jb[i])
        vals[i] = scale * tp * alb[i] * L * ratio[i] / mean
        if not math.isfinite(vals[i]):
            return 2
    for i in range(N_HERO):
        acc[jb[i]] += vals[i]
    return 0


@njit(cache=True)
def trace_path(S, ox, oy, oz, dx, dy, dz, jb, hero, state, acc,
               max_depth, rr_depth, max_events, mua, mus, ratio, alb):
    """Follow one camera path; returns 0 normally, 1 if truncated, 2 if non-finite."""
    for i in range(N_HERO):
        ratio[i] = 1.0
        alb[i] = 1.0
    tp = 1.0
    inside = False
    depth = 0
    hb = jb[hero]
    for _ in range(max_events):
        if not inside:
            t_surf = INF
            if dz < 0.0 and not S.no_skin:
                t_surf = (oz - S.z_surf) / -dz
            th, ci = hair_hit(S, ox, oy, oz, dx, dy, dz, t_surf)
            if ci >= 0:
                px, py, pz = ox + th * dx, oy + th * dy, oz + th * dz
                nx, ny, nz = capsule_normal(S, ci, px, py, pz)
                dx, dy, dz = cosine_hemisphere(nx, ny, nz, next_float(state), next_float(state))
                for i in range(N_HERO):
                    alb[i] *= S.hair_albedo[jb[i]]
                ox, oy, oz = px + 1e-6 * nx, py + 1e-6 * ny, pz + 1e-6 * nz
                continue
            if t_surf == INF:
                return _splat(S, acc, jb, dx, dy, dz, tp, alb, ratio)
            px, py = ox + t_surf * dx, oy + t_surf * dy
            nx, ny, nz = shading_normal(S, px, py)
            wx, wy, wz, w, refr = sample_dielectric(
                -dx, -dy, -dz, nx, ny, nz, S.eta, S.alpha,
                next_float(state), next_float(state), next_float(state))
            if w <= 0.0:
                return 0
            tp *= w
            if refr:
                inside = True
                wz = -abs(wz)
                oz = S.z_surf - NUDGE
            else:
                wz = abs(wz)
                oz = S.z_surf + NUDGE
            ox, oy = px, py
            dx, dy, dz = wx, wy, wz
            continue

        # inside the slab: one majorant segment
        nb = S.maj_out.shape[0]
        b = int((S.z_surf - oz) / S.band_dz)
        b = min(max(b, 0), nb - 1)
        boxed = _box_valid(S) and in_lesion_box(S, ox, oy, oz)
        mubar = S.maj_in[b] if boxed else S.maj_out[b]
        kind = 0
        if dz < 0.0:
            zb = max(S.z_surf - (b + 1) * S.band_dz, S.z_bot)
            t_plane = (oz - zb) / -dz
            if zb <= S.z_bot:
                kind = 2
        elif dz > 0.0:
            t_plane = (S.z_surf - b * S.band_dz - oz) / dz
            if b == 0:
                kind = 1
        else:
            t_plane = INF
        t_box = INF
        if _box_valid(S):
            tn, tf = box_interval(S, ox, oy, oz, dx, dy, dz)
            if boxed:
                t_box = max(tf, 0.0)
            elif tn <= tf and tn >= 0.0:
                t_box = tn
        t_seg = t_plane
        if t_box < t_plane:
            t_seg = t_box
            kind = 0
        if mubar > 0.0:
            t = -math.log(1.0 - next_float(state)) / mubar
        else:
            t = INF
        if t < t_seg:
            ox += t * dx
            oy += t * dy
            oz += t * dz
            if boxed and lesion_at(S, ox, oy, oz):
                m = 4
            else:
                m = layer_at(S, ox, oy, oz)
            f = 0.0
            if S.blood_ext[m] > 0.0:
                f = S.blood_ext[m] * blood_at(S, ox, oy, oz)
            for i in range(N_HERO):
                mua[i] = S.mu_a[m, jb[i]] + f * S.mu_blood[jb[i]]
                mus[i] = S.mu_s[m, jb[i]]
            u = next_float(state) * mubar
            if u < mua[hero]:
                return 0
            if u < mua[hero] + mus[hero]:
                for i in range(N_HERO):
                    ratio[i] *= mus[i] / mus[hero]
                dx, dy, dz = hg_sample(dx, dy, dz, S.g[m], next_float(state), next_float(state))
                inv = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
                dx *= inv
                dy *= inv
                dz *= inv
                depth += 1
                if depth >= max_depth:
                    return 1
                if depth > rr_depth:
                    mean = 0.25 * (ratio[0] + ratio[1] + ratio[2] + ratio[3])
                    c = 0.0
                    for i in range(N_HERO):
                        c = max(c, alb[i] * ratio[i])
                    q = min(1.0, tp * c / mean)
                    if next_float(state) >= q:
                        return 0
                    tp /= q
            else:
                mun_h = mubar - mua[hero] - mus[hero]
                for i in range(N_HERO):
                    ratio[i] *= max(0.0, mubar - mua[i] - mus[i]) / mun_h
            top = max(ratio[0], ratio[1], ratio[2], ratio[3])
            if top > 1e100 or top < 1e-100:
                for i in range(N_HERO):
                    ratio[i] /= top
            continue

        if kind == 1:
            px, py = ox + t_seg * dx, oy + t_seg * dy
            nx, ny, nz = shading_normal(S, px, py)
            wx, wy, wz, w, refr = sample_dielectric(
                -dx, -dy, -dz, -nx, -ny, -nz, 1.0 / S.eta, S.alpha,
                next_float(state), next_float(state), next_float(state))
            if w <= 0.0:
                return 0
            tp *= w
            if refr:
                inside = False
                wz = abs(wz)
                oz = S.z_surf + NUDGE
            else:
                wz = -abs(wz)
                oz = S.z_surf - NUDGE
            ox, oy = px, py
            dx, dy, dz = wx, wy, wz
        elif kind == 2:
            if S.bottom_mode == 1:
                return _splat(S, acc, jb, dx, dy, dz, tp, alb, ratio)
            return 0
        else:
            step = t_seg + NUDGE
            ox += step * dx
            oy += step * dy
            oz += step * dz
    return 1


@njit(cache=True, parallel=True)
def render_kernel(S, width, height, tan_half, cam_z, spp, seed, max_depth, rr_depth,
                  max_events, out, stats):
    """Accumulate spectral radiance into ``out`` (H*W, K); stats per pixel."""
    half = 0.5 * width
    stride = out.shape[1] // N_HERO
    for p in prange(width * height):
        state = np.empty(1, np.uint64)
        state[0] = stream_state(seed, p)
        row = p // width
        col = p - row * width
        jb = np.empty(N_HERO, np.int64)
        mua = np.empty(N_HERO)
        mus = np.empty(N_HERO)
        ratio = np.empty(N_HERO)
        alb = np.empty(N_HERO)
        acc = out[p]
        n_bad = 0
        n_trunc = 0
        # wavelength groups and heroes cycle from a random per-pixel offset,
        # so every bin gets the same share of samples
        g_off = min(int(next_float(state) * stride), stride - 1)
        h_off = min(int(next_float(state) * N_HERO), N_HERO - 1)
        for s in range(spp):
            fx = col + next_float(state)
            fy = row + next_float(state)
            x = (fx - half) / half * tan_half
            y = -(fy - 0.5 * height) / half * tan_half
            inv = 1.0 / math.sqrt(x * x + y * y + 1.0)
            j0 = (s + g_off) % stride
            hero = (s // stride + h_off) % N_HERO
            for i in range(N_HERO):
                jb[i] = j0 + stride * i
            status = trace_path(S, 0.0, 0.0, cam_z, x * inv, y * inv, -inv, jb, hero, state, acc,
                                max_depth, rr_depth, max_events, mua, mus, ratio, alb)
            if status == 1:
                n_trunc += 1
            elif status == 2:
                n_bad += 1
        for k in range(acc.shape[0]):
            acc[k] /= spp
        stats[p, 0] = n_bad
        stats[p, 1] = n_trunc
