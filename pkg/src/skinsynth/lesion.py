"""Stochastic 3D growing-lesion automaton.

A lesion starts from one occupied voxel and grows over discrete time points.
At every pass each occupied cell tries to claim each neighbour offset of a
5x5x5 stencil with that offset's probability.  The stencil is biased inward
(depth axis increasing) and is re-perturbed at every time point.  Cells can
also trigger local recursive growth bursts, which is what makes a lesion
irregular.

Volumes are indexed ``[depth, row, col]``; depth grows inward from the skin
surface.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit
from scipy import ndimage

from . import _rng
from .formats import read_voxels, write_voxels

STENCIL_RADIUS = 2

# Regular / irregular lesion presets for the irregularity probability.
CP_REGULAR = 0.0001
CP_IRREGULAR = 0.001


class LesionConfigError(ValueError):
    pass


def _base_probabilities() -> np.ndarray:
    p = np.zeros((5, 5, 5))
    c = STENCIL_RADIUS
    # outward plane
    p[c - 1, c, c] = 0.001
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        p[c - 1, c + dy, c + dx] = 0.0001
    # central plane
    for dy in range(-2, 3):
        for dx in range(-2, 3):
            if dy == 0 and dx == 0:
                continue
            if abs(dy) + abs(dx) == 2 and (dy == 0 or dx == 0):
                p[c, c + dy, c + dx] = 0.1
            elif abs(dy) + abs(dx) == 1:
                p[c, c + dy, c + dx] = 0.3
            elif abs(dy) == 1 and abs(dx) == 1:
                p[c, c + dy, c + dx] = 0.2
    # inward plane
    p[c + 1, c - 1:c + 2, c - 1:c + 2] = 0.1
    p[c + 1, c, c] = 0.5
    p[c + 2, c, c] = 0.5
    return p


@dataclass(frozen=True)
class GrowthStencil:
    """Per-offset growth probabilities, ``probs[dz + 2, dy + 2, dx + 2]``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.shape != (5, 5, 5):
            raise ValueError(f"stencil must be 5x5x5, got {probs.shape}")
        if np.any(probs < 0) or np.any(probs > 1) or not np.all(np.isfinite(probs)):
            raise ValueError("stencil probabilities must lie in [0, 1]")
        probs = probs.copy()
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @classmethod
    def base(cls) -> GrowthStencil:
        return cls(_base_probabilities())

    def total(self) -> float:
        """Expected number of claims a lone cell makes in one pass."""
        return float(self.probs.sum())

    def offsets(self):
        """Nonzero offsets as flat arrays ``(dz, dy, dx, p, flat_index)``."""
        idx = np.flatnonzero(self.probs)
        dz, dy, dx = np.unravel_index(idx, self.probs.shape)
        return (
            (dz - 2).astype(np.int64),
            (dy - 2).astype(np.int64),
            (dx - 2).astype(np.int64),
            self.probs.ravel()[idx].copy(),
            idx.astype(np.int64),
        )


@dataclass(frozen=True)
class LesionParams:
    timepoints: int = 20
    step_choices: tuple[int, ...] = (1, 2)
    sigma: float = 0.5
    cp: float = CP_REGULAR
    ci: int = 10
    cr: int = 2
    seed: int = 0
    pitch_um: float = 50.0
    grid_shape: tuple[int, int, int] = (128, 128, 128)
    stencil: GrowthStencil | None = None

    def __post_init__(self):
        if self.timepoints < 1:
            raise LesionConfigError("timepoints must be >= 1")
        if not 0.0 <= self.cp <= 1.0:
            raise LesionConfigError("cp must lie in [0, 1]")
        if self.ci < 0 or self.cr < 0:
            raise LesionConfigError("ci and cr must be >= 0")
        if self.sigma < 0:
            raise LesionConfigError("sigma must be >= 0")
        if not self.step_choices or min(self.step_choices) < 0:
            raise LesionConfigError("step_choices must be non-negative counts")
        if self.pitch_um <= 0:
            raise LesionConfigError("pitch_um must be positive")

    @property
    def base_stencil(self) -> GrowthStencil:
        return self.stencil if self.stencil is not None else GrowthStencil.base()

    def to_dict(self) -> dict:
        d = {
            "timepoints": self.timepoints,
            "step_choices": list(self.step_choices),
            "sigma": self.sigma,
            "cp": self.cp,
            "ci": self.ci,
            "cr": self.cr,
            "seed": self.seed,
            "pitch_um": self.pitch_um,
            "grid_shape": list(self.grid_shape),
        }
        if self.stencil is not None:
            d["stencil"] = self.stencil.probs.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> LesionParams:
        d = dict(d)
        if "stencil" in d:
            d["stencil"] = GrowthStencil(np.array(d["stencil"]))
        d["step_choices"] = tuple(d.get("step_choices", (1, 2)))
        d["grid_shape"] = tuple(d.get("grid_shape", (128, 128, 128)))
        return cls(**d)


@dataclass(frozen=True)
class LesionVolume:
    occupancy: np.ndarray
    birth: np.ndarray
    seed_cell: tuple[int, int, int]
    pitch_um: float = 50.0
    depth_axis: int = 0
    clamp_depth: int = -1
    time: int = 0
    growth_counts: np.ndarray = field(default_factory=lambda: np.zeros((5, 5, 5), np.int64))

    def __post_init__(self):
        for name in ("occupancy", "birth", "growth_counts"):
            arr = getattr(self, name)
            arr.flags.writeable = False

    @property
    def shape(self):
        return self.occupancy.shape

    @property
    def n_occupied(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    def depth_first(self) -> np.ndarray:
        return np.moveaxis(self.occupancy, self.depth_axis, 0)

    def bounding_box(self):
        idx = np.argwhere(self.depth_first())
        return idx.min(axis=0), idx.max(axis=0)

    def save(self, path: str | Path, params: LesionParams | None = None) -> None:
        path = Path(path)
        write_voxels(path, self.depth_first().astype(np.uint8), self.pitch_um)
        meta = {
            "seed_cell": list(self.seed_cell),
            "pitch_um": self.pitch_um,
            "clamp_depth": self.clamp_depth,
            "time": self.time,
            "n_occupied": self.n_occupied,
        }
        if params is not None:
            meta["params"] = params.to_dict()
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> LesionVolume:
        path = Path(path)
        data, pitch = read_voxels(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        occ = data != 0
        birth = np.where(occ, 0, -1).astype(np.int32)
        return cls(
            occupancy=occ,
            birth=birth,
            seed_cell=tuple(meta["seed_cell"]),
            pitch_um=float(pitch),
            clamp_depth=int(meta["clamp_depth"]),
            time=int(meta.get("time", 0)),
        )


# ---------------------------------------------------------------------------
# jitted core


@njit(cache=True)
def _growth_pass(occ, birth, az, ay, ax, sat, n_act, oz, oy, ox, op, oidx,
                 t, clamp, cp, trig, state, counts):
    """One growth pass over the first ``n_act`` active cells.

    New cells are appended to the active arrays; returns ``(n_act, n_trig)``.
    """
    nd, nr, nc = occ.shape
    n_new = n_act
    n_trig = 0
    n_off = oz.shape[0]
    for i in range(n_act):
        if sat[i]:
            continue
        z = az[i]
        y = ay[i]
        x = ax[i]
        free = 0
        for k in range(n_off):
            tz = z + oz[k]
            if tz <= clamp or tz < 0 or tz >= nd:
                continue
            ty = y + oy[k]
            tx = x + ox[k]
            if ty < 0 or ty >= nr or tx < 0 or tx >= nc:
                continue
            if occ[tz, ty, tx]:
                continue
            free += 1
            if op[k] > 0.0 and _rng.next_float(state) < op[k]:
                occ[tz, ty, tx] = True
                birth[tz, ty, tx] = t
                az[n_new] = tz
                ay[n_new] = ty
                ax[n_new] = tx
                sat[n_new] = False
                n_new += 1
                counts[oidx[k]] += 1
        if free == 0:
            sat[i] = True
        elif cp > 0.0 and _rng.next_float(state) < cp:
            trig[n_trig, 0] = z
            trig[n_trig, 1] = y
            trig[n_trig, 2] = x
            n_trig += 1
    return n_new, n_trig


class _Grower:
    """Mutable working state shared by the main growth and its bursts."""

    def __init__(self, volume: LesionVolume, params: LesionParams, rng: np.random.Generator):
        self.params = params
        self.rng = rng
        self.occ = volume.depth_first().copy()
        self.birth = np.moveaxis(volume.birth, volume.depth_axis, 0).copy()
        self.clamp = volume.clamp_depth
        self.seed_cell = volume.seed_cell
        self.pitch_um = volume.pitch_um
        self.time = volume.time
        self.counts = volume.growth_counts.ravel().copy()
        cap = self.occ.size
        self.main = _ActiveList(cap, np.argwhere(self.occ))
        self.sub = _ActiveList(cap)
        self.trig = np.zeros((cap, 3), np.int32)
        self.state = _rng.new_state(int(rng.integers(0, 2**63)))

    def passes(self, active, stencil: GrowthStencil, n_passes: int, depth: int):
        dz, dy, dx, p, oidx = stencil.offsets()
        cp = self.params.cp if depth < self.params.cr else 0.0
        queue: deque = deque()
        for _ in range(n_passes):
            active.n, n_trig = _growth_pass(
                self.occ, self.birth, active.z, active.y, active.x, active.sat,
                active.n, dz, dy, dx, p, oidx, self.time, self.clamp, cp,
                self.trig, self.state, self.counts)
            queue.extend((tuple(self.trig[j]), depth + 1) for j in range(n_trig))
        return queue

    def run_bursts(self, queue: deque, base: GrowthStencil):
        # a burst grows from one cell with its own active set, apart from the
        # regular growth (its cells never join the main set); bursts it
        # triggers are processed after it finishes
        while queue:
            cell, depth = queue.popleft()
            stencil = perturb_stencil(base, self.rng, self.params.sigma)
            self.sub.reset(cell)
            queue.extend(self.passes(self.sub, stencil, self.params.ci, depth))

    def step(self, stencil: GrowthStencil, n_passes: int, depth: int = 0):
        base = self.params.base_stencil
        for _ in range(n_passes):
            queue = self.passes(self.main, stencil, 1, depth)
            self.run_bursts(queue, base)

    def prune_detached(self) -> int:
        """Drop cells not 26-connected to the seed; returns how many went."""
        lo, hi = [], []
        for axis in range(3):
            hit = np.flatnonzero(self.occ.any(axis=tuple(k for k in range(3) if k != axis)))
            lo.append(int(hit[0]))
            hi.append(int(hit[-1]) + 1)
        box = tuple(slice(l, h) for l, h in zip(lo, hi))
        sub = self.occ[box]
        lab, n_lab = ndimage.label(sub, structure=np.ones((3, 3, 3), bool))
        if n_lab <= 1:
            return 0
        seed = lab[tuple(c - l for c, l in zip(self.seed_cell, lo))]
        drop = (lab != seed) & sub
        self.occ[box][drop] = False
        self.birth[box][drop] = -1
        a, n = self.main, self.main.n
        keep = self.occ[a.z[:n], a.y[:n], a.x[:n]]
        m = int(keep.sum())
        a.z[:m], a.y[:m], a.x[:m] = a.z[:n][keep], a.y[:n][keep], a.x[:n][keep]
        a.sat[:m] = False  # neighbours of dropped cells are free again
        a.n = m
        return int(drop.sum())

    def volume(self) -> LesionVolume:
        return LesionVolume(
            occupancy=self.occ.copy(),
            birth=self.birth.copy(),
            seed_cell=self.seed_cell,
            pitch_um=self.pitch_um,
            clamp_depth=self.clamp,
            time=self.time,
            growth_counts=self.counts.reshape(5, 5, 5).copy(),
        )


class _ActiveList:
    def __init__(self, capacity: int, cells: np.ndarray | None = None):
        self.z = np.zeros(capacity, np.int32)
        self.y = np.zeros(capacity, np.int32)
        self.x = np.zeros(capacity, np.int32)
        self.sat = np.zeros(capacity, np.bool_)
        self.n = 0
        if cells is not None and len(cells):
            n = len(cells)
            self.z[:n], self.y[:n], self.x[:n] = cells.T
            self.n = n

    def reset(self, cell):
        self.z[0], self.y[0], self.x[0] = cell
        self.sat[0] = False
        self.n = 1


# ---------------------------------------------------------------------------
# public operations


def new_lesion(params: LesionParams, grid_shape: tuple[int, int, int] | None = None) -> LesionVolume:
    """Seed a lesion with one active cell at the grid center."""
    shape = tuple(int(s) for s in (grid_shape or params.grid_shape))
    if len(shape) != 3:
        raise LesionConfigError("grid_shape must be 3D")
    center = tuple(s // 2 for s in shape)
    margin = 2 * params.timepoints
    for axis in (1, 2):
        if center[axis] < margin or shape[axis] - 1 - center[axis] < margin:
            raise LesionConfigError(
                f"grid {shape} too small for {params.timepoints} time points: "
                f"seed needs {margin} voxels of lateral margin")
    occ = np.zeros(shape, np.bool_)
    birth = np.full(shape, -1, np.int32)
    occ[center] = True
    birth[center] = 0
    return LesionVolume(
        occupancy=occ,
        birth=birth,
        seed_cell=center,
        pitch_um=params.pitch_um,
        clamp_depth=center[0] - STENCIL_RADIUS,
    )


def perturb_stencil(base: GrowthStencil, rng: np.random.Generator, sigma: float = 0.5) -> GrowthStencil:
    """Multiplicative Gaussian jitter of every nonzero probability, clamped to [0, 1]."""
    if sigma == 0:
        return base
    p = base.probs.copy()
    nz = p > 0
    eps = rng.normal(0.0, sigma, size=int(nz.sum()))
    p[nz] = np.clip(p[nz] * (1.0 + eps), 0.0, 1.0)
    return GrowthStencil(p)


def grow_step(volume: LesionVolume, stencil: GrowthStencil, params: LesionParams,
              rng: np.random.Generator, depth: int = 0, n_passes: int | None = None) -> LesionVolume:
    """Advance a lesion by one time point and return the new volume.

    ``n_passes`` overrides the drawn growing step, mainly for testing.
    """
    if volume.n_occupied == 0:
        raise ValueError("cannot grow an empty volume")
    if depth > params.cr:
        raise ValueError("recursion depth exceeds cr")
    g = _Grower(volume, params, rng)
    g.time = volume.time + 1
    if n_passes is None:
        n_passes = int(rng.choice(params.step_choices))
    g.step(stencil, n_passes, depth)
    return g.volume()


def grow(params: LesionParams, grid_shape=None, snapshots=()) -> tuple[LesionVolume, dict[int, LesionVolume]]:
    """Grow a lesion for ``params.timepoints`` steps.

    Returns the final volume and a dict of copies taken at the requested time
    points.  Fully determined by ``params.seed``.

    A far stencil offset can claim a cell that touches nothing else.  Cells
    still detached from the seed's component when a time point ends are
    dropped, so every returned volume is 26-connected.  ``grow_step`` is the
    raw automaton and keeps them.
    """
    rng = np.random.default_rng(params.seed)
    g = _Grower(new_lesion(params, grid_shape), params, rng)
    wanted = set(int(t) for t in snapshots)
    taken: dict[int, LesionVolume] = {}
    if 0 in wanted:
        taken[0] = g.volume()
    base = params.base_stencil
    for t in range(1, params.timepoints + 1):
        g.time = t
        stencil = perturb_stencil(base, rng, params.sigma)
        g.step(stencil, int(rng.choice(params.step_choices)))
        g.prune_detached()
        if t in wanted:
            taken[t] = g.volume()
    return g.volume(), taken


def project_mask(volume: LesionVolume, axis: int | None = None) -> np.ndarray:
    """Binary projection of the occupancy along ``axis`` (default: depth)."""
    if volume.n_occupied == 0:
        raise ValueError("empty volume")
    if axis is None:
        axis = volume.depth_axis
    return volume.occupancy.any(axis=axis)


def export_snapshots(final: LesionVolume, snaps: dict[int, LesionVolume], params: LesionParams,
                     out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in sorted(snaps):
        p = out / f"lesion_t{t:03d}.vox"
        snaps[t].save(p, replace(params))
        paths.append(p)
    return paths
