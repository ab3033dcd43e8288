"""Assembly of the layered skin model.

Coordinates are in mm with z pointing up out of the skin; the nominal
epidermis top is the plane z = 0 and the lateral domain is centred on the
origin.  Gridded lateral data uses image orientation: row index runs toward
-y, column index toward +x.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .formats import read_pfm, read_voxels, write_pfm, write_voxels
from .lesion import LesionVolume

BOUNDARIES = ("epidermis", "papillary_dermis", "dermis", "hypodermis")


class AnatomyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# layers


@dataclass(frozen=True)
class LayerConfig:
    extent_mm: float = 20.0
    resolution: int = 128
    epidermis_um: tuple[float, float] = (20.0, 150.0)
    papillary_um: tuple[float, float] = (200.0, 200.0)
    dermis_mm: tuple[float, float] = (1.0, 4.0)
    hypodermis_mm: tuple[float, float] = (3.0, 3.0)
    # maximum roughness amplitude (um) of each boundary's top surface
    roughness_um: tuple[float, float, float, float] = (10.0, 15.0, 0.0, 100.0)
    # fixed amplitudes override the random draw; validated, never capped
    fixed_roughness_um: tuple[float, float, float, float] | None = None
    frequency: tuple[float, float] = (4.0, 16.0)


@dataclass(frozen=True)
class LayerStack:
    extent_mm: float
    heights_um: np.ndarray  # (4, N, N) elevation of each boundary, z up
    thickness_um: dict
    roughness_um: tuple

    @property
    def resolution(self) -> int:
        return self.heights_um.shape[1]

    @property
    def cell_mm(self) -> float:
        return self.extent_mm / self.resolution

    def layer_thickness_um(self, index: int) -> np.ndarray:
        """Local thickness of layer ``index`` (its top minus the next top)."""
        if index < 3:
            return self.heights_um[index] - self.heights_um[index + 1]
        return np.full(self.heights_um.shape[1:], self.thickness_um["hypodermis"])

    def elevation_um(self, index: int, x_mm, y_mm):
        """Bilinear, periodic lookup of boundary ``index`` at lateral points."""
        n = self.resolution
        col = (np.asarray(x_mm) + self.extent_mm / 2) / self.cell_mm - 0.5
        row = (self.extent_mm / 2 - np.asarray(y_mm)) / self.cell_mm - 0.5
        return ndimage.map_coordinates(
            self.heights_um[index], [np.atleast_1d(row), np.atleast_1d(col)],
            order=1, mode="grid-wrap").reshape(np.shape(x_mm))

    def cell_centers(self):
        n = self.resolution
        c = -self.extent_mm / 2 + (np.arange(n) + 0.5) * self.cell_mm
        return c, c[::-1]


def value_noise(n: int, frequency: float, rng: np.random.Generator) -> np.ndarray:
    """Periodic band-limited noise on an n x n grid scaled to max |value| = 1."""
    out = np.zeros((n, n))
    for octave, weight in ((1.0, 1.0), (2.0, 0.5)):
        f = max(2, int(round(frequency * octave)))
        lattice = rng.uniform(-1.0, 1.0, size=(f, f))
        coords = (np.arange(n) + 0.5) * f / n - 0.5
        rr, cc = np.meshgrid(coords, coords, indexing="ij")
        out += weight * ndimage.map_coordinates(lattice, [rr, cc], order=3, mode="grid-wrap")
    peak = np.abs(out).max()
    return out / peak if peak > 0 else out


def build_layers(config: LayerConfig, rng: np.random.Generator) -> LayerStack:
    if config.extent_mm <= 0 or config.resolution < 2:
        raise AnatomyError("layer extent and resolution must be positive")
    t = np.array([
        rng.uniform(*config.epidermis_um),
        rng.uniform(*config.papillary_um),
        rng.uniform(*config.dermis_mm) * 1000.0,
        rng.uniform(*config.hypodermis_mm) * 1000.0,
    ])
    lo = np.array([config.epidermis_um[0], 0.0, config.dermis_mm[0] * 1000.0, 0.0])
    hi = np.array([config.epidermis_um[1], np.inf, config.dermis_mm[1] * 1000.0, np.inf])

    if config.fixed_roughness_um is not None:
        amp = np.array(config.fixed_roughness_um, dtype=float)
        if np.any(amp < 0):
            raise AnatomyError("roughness amplitudes must be non-negative")
        for k in range(4):
            below = t[k]
            above = t[k - 1] if k > 0 else np.inf
            if amp[k] > 0 and (amp[k] >= below or amp[k] >= above):
                raise AnatomyError(
                    f"roughness amplitude {amp[k]} um of {BOUNDARIES[k]} boundary "
                    f"is not below the adjacent layer thickness")
        for k in range(3):
            if amp[k] + amp[k + 1] >= t[k]:
                raise AnatomyError(f"roughness would invert layer {BOUNDARIES[k]}")
    else:
        amp = np.array([rng.uniform(0.0, a) if a > 0 else 0.0 for a in config.roughness_um])
        # cap so every layer keeps its thickness bounds and ordering
        for k in range(3):
            room = min(t[k] - lo[k], hi[k] - t[k], 0.5 * t[k])
            s = amp[k] + amp[k + 1]
            if s > room:
                scale = room / s
                amp[k] *= scale
                amp[k + 1] *= scale

    n = config.resolution
    nominal = -np.concatenate([[0.0], np.cumsum(t[:3])])
    heights = np.empty((4, n, n))
    for k in range(4):
        noise = value_noise(n, rng.uniform(*config.frequency), rng) if amp[k] > 0 else 0.0
        heights[k] = nominal[k] + amp[k] * noise
    return LayerStack(
        extent_mm=config.extent_mm,
        heights_um=heights,
        thickness_um=dict(zip(BOUNDARIES, (float(v) for v in t))),
        roughness_um=tuple(float(a) for a in amp),
    )


# ---------------------------------------------------------------------------
# blood network


@dataclass(frozen=True)
class BloodConfig:
    n_nodes: tuple[int, int] = (1200, 2000)
    n_start: tuple[int, int] = (20, 60)
    n_end: tuple[int, int] = (20, 60)
    k: int = 8
    k_max: int = 64
    face_fraction: float = 0.1
    radius_um: tuple[float, float] = (10.0, 40.0)


@dataclass(frozen=True)
class BloodNetwork:
    nodes: np.ndarray  # (N, 3) mm
    graph: csr_matrix  # symmetric Euclidean edge weights
    starts: np.ndarray
    ends: np.ndarray
    paths: list  # node-index arrays, start -> end
    radii_um: np.ndarray
    box: tuple  # (x0, x1, y0, y1, z_bottom, z_top)

    def polylines(self) -> list[np.ndarray]:
        return [self.nodes[p] for p in self.paths]

    def path_cost(self, i: int) -> float:
        p = self.paths[i]
        cost = 0.0
        for a, b in zip(p[:-1], p[1:]):
            cost = cost + self.graph[a, b]
        return float(cost)


def knn_graph(nodes: np.ndarray, k: int) -> csr_matrix:
    k = min(k, len(nodes) - 1)
    if k < 1:
        return csr_matrix((len(nodes), len(nodes)))
    dist, idx = cKDTree(nodes).query(nodes, k=k + 1)
    rows = np.repeat(np.arange(len(nodes)), k)
    cols = idx[:, 1:].ravel()
    w = dist[:, 1:].ravel()
    g = coo_matrix((w, (rows, cols)), shape=(len(nodes), len(nodes))).tocsr()
    return g.maximum(g.T).tocsr()


def shortest_paths(graph: csr_matrix, starts, ends):
    """Path from every start to its cheapest end; (None, None) if any start is cut off."""
    dist, pred = dijkstra(graph, directed=False, indices=starts, return_predecessors=True)
    paths, costs = [], []
    for row, s in enumerate(starts):
        d = dist[row, ends]
        j = int(np.argmin(d))
        if not np.isfinite(d[j]):
            return None, None
        node = int(ends[j])
        path = [node]
        while node != s:
            node = int(pred[row, node])
            path.append(node)
        paths.append(np.array(path[::-1]))
        costs.append(float(d[j]))
    return paths, costs


def generate_blood_network(config: BloodConfig, rng: np.random.Generator, box) -> BloodNetwork:
    """Shortest-path capillary network inside ``box`` = (x0, x1, y0, y1, z_bottom, z_top)."""
    x0, x1, y0, y1, zb, zt = box
    if x1 <= x0 or y1 <= y0 or zt <= zb:
        raise AnatomyError("blood network box must have positive size")
    n_start = int(rng.integers(config.n_start[0], config.n_start[1] + 1))
    n_end = int(rng.integers(config.n_end[0], config.n_end[1] + 1))
    n = int(rng.integers(config.n_nodes[0], config.n_nodes[1] + 1))
    if n < n_start + n_end:
        raise AnatomyError("node count must cover start and end points")
    nodes = np.column_stack([
        rng.uniform(x0, x1, n), rng.uniform(y0, y1, n), rng.uniform(zb, zt, n)])
    band = config.face_fraction * (zt - zb)
    bottom = np.flatnonzero(nodes[:, 2] <= zb + band)
    top = np.flatnonzero(nodes[:, 2] >= zt - band)
    if len(bottom) < n_start or len(top) < n_end:
        raise AnatomyError("not enough nodes near the box faces")
    starts = rng.choice(bottom, n_start, replace=False)
    ends = rng.choice(top, n_end, replace=False)
    nodes[starts, 2] = zb
    nodes[ends, 2] = zt
    k = config.k
    while True:
        graph = knn_graph(nodes, k)
        paths, _ = shortest_paths(graph, starts, ends)
        if paths is not None:
            break
        if k >= config.k_max:
            raise AnatomyError(f"start and end points disconnected at k={k}")
        k = min(2 * k, config.k_max)
    radii = rng.uniform(*config.radius_um, size=len(paths))
    return BloodNetwork(nodes, graph, np.asarray(starts), np.asarray(ends), paths, radii, tuple(box))


@dataclass(frozen=True)
class FieldGrid:
    """Regular grid; voxel (k, i, j) centre is (x0 + (j+.5)p, y_top - (i+.5)p, z_top - (k+.5)p)."""

    x0: float
    y_top: float
    z_top: float
    pitch_mm: float
    shape: tuple[int, int, int]

    def centers(self):
        nz, ny, nx = self.shape
        p = self.pitch_mm
        z = self.z_top - (np.arange(nz) + 0.5) * p
        y = self.y_top - (np.arange(ny) + 0.5) * p
        x = self.x0 + (np.arange(nx) + 0.5) * p
        return z, y, x


def _segment_distance(px, py, pz, a, b):
    ab = b - a
    ll = float(ab @ ab)
    if ll == 0.0:
        t = np.zeros_like(px)
    else:
        t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1] + (pz - a[2]) * ab[2]) / ll, 0.0, 1.0)
    dx = px - (a[0] + t * ab[0])
    dy = py - (a[1] + t * ab[1])
    dz = pz - (a[2] + t * ab[2])
    return np.sqrt(dx * dx + dy * dy + dz * dz)


def bake_blood_field(network: BloodNetwork | None, grid: FieldGrid, falloff_mm: float) -> np.ndarray:
    """Sum of exp(-(d/r)^2) over segments, clamped to [0, 1]."""
    if falloff_mm <= 0:
        raise AnatomyError("falloff radius must be positive")
    field_ = np.zeros(grid.shape, np.float32)
    if network is None or not network.paths:
        return field_
    zc, yc, xc = grid.centers()
    reach = 5.0 * falloff_mm
    acc = np.zeros(grid.shape)
    for line in network.polylines():
        for a, b in zip(line[:-1], line[1:]):
            lo = np.minimum(a, b) - reach
            hi = np.maximum(a, b) + reach
            j0, j1 = np.searchsorted(xc, [lo[0], hi[0]])
            i0, i1 = np.searchsorted(-yc, [-hi[1], -lo[1]])
            k0, k1 = np.searchsorted(-zc, [-hi[2], -lo[2]])
            if j0 >= j1 or i0 >= i1 or k0 >= k1:
                continue
            pz, py, px = np.meshgrid(zc[k0:k1], yc[i0:i1], xc[j0:j1], indexing="ij")
            d = _segment_distance(px, py, pz, a, b)
            acc[k0:k1, i0:i1, j0:j1] += np.where(d <= reach, np.exp(-(d / falloff_mm) ** 2), 0.0)
    np.clip(acc, 0.0, 1.0, out=acc)
    field_[:] = acc
    return field_


# ---------------------------------------------------------------------------
# hair


@dataclass(frozen=True)
class HairConfig:
    density_per_cm2: float = 0.0
    length_mm: tuple[float, float] = (3.0, 8.0)
    thickness_um: float = 60.0
    curvature_per_mm: float = 0.15
    elevation_deg: tuple[float, float] = (10.0, 35.0)
    direction_spread_deg: float = 180.0
    segments: int = 12


@dataclass(frozen=True)
class HairSet:
    strands: list  # (n_pts, 3) arrays in mm
    config: HairConfig = HairConfig()

    @property
    def thickness_um(self) -> float:
        return self.config.thickness_um

    def __len__(self):
        return len(self.strands)


def generate_hair(config: HairConfig, rng: np.random.Generator, stack: LayerStack) -> HairSet:
    if config.density_per_cm2 < 0:
        raise AnatomyError("hair density must be >= 0")
    if config.thickness_um <= 0:
        raise AnatomyError("hair thickness must be positive")
    area_cm2 = (stack.extent_mm / 10.0) ** 2
    count = int(rng.poisson(config.density_per_cm2 * area_cm2)) if config.density_per_cm2 > 0 else 0
    half = stack.extent_mm / 2
    lift = config.thickness_um / 2000.0
    main_dir = rng.uniform(0, 2 * np.pi)
    spread = np.radians(config.direction_spread_deg)
    strands = []
    for _ in range(count):
        root = np.array([rng.uniform(-half, half), rng.uniform(-half, half), 0.0])
        root[2] = float(stack.elevation_um(0, root[0], root[1])) / 1000.0
        length = rng.uniform(*config.length_mm)
        ds = length / config.segments
        az = main_dir + rng.uniform(-spread / 2, spread / 2)
        el = np.radians(rng.uniform(*config.elevation_deg))
        d = np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        # curl plane: fixed bending axis perpendicular to the initial direction
        axis = np.cross(d, [0.0, 0.0, 1.0])
        axis /= np.linalg.norm(axis)
        if rng.random() < 0.5:
            axis = -axis
        pts = [root]
        for _ in range(config.segments):
            angle = config.curvature_per_mm * ds + rng.normal(0.0, 0.05)
            d = _rotate(d, axis, angle)
            nxt = pts[-1] + ds * d
            if nxt[2] < root[2] + lift:
                d[2] = abs(d[2])
                nxt = pts[-1] + ds * d
            pts.append(nxt)
        strands.append(np.array(pts))
    return HairSet(strands, config)


def _rotate(v, axis, angle):
    c, s = np.cos(angle), np.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * (axis @ v) * (1 - c)


# ---------------------------------------------------------------------------
# assembly


@dataclass(frozen=True)
class LesionPlacement:
    """World position (mm) of the lesion's seed voxel centre."""

    x_mm: float = 0.0
    y_mm: float = 0.0
    z_mm: float = 0.0


@dataclass(frozen=True)
class SkinModel:
    stack: LayerStack
    lesion: LesionVolume | None
    placement: LesionPlacement
    blood_field: np.ndarray
    blood_grid: FieldGrid
    hair: HairSet
    melanosome_fraction: float
    blood_fraction: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.blood_field.size and (self.blood_field.min() < 0 or self.blood_field.max() > 1):
            raise AnatomyError("blood field must lie in [0, 1]")

    def lesion_voxel_centers(self) -> np.ndarray:
        """World coordinates (mm) of every occupied lesion voxel."""
        if self.lesion is None:
            return np.zeros((0, 3))
        k0, i0, j0 = self.lesion.seed_cell
        p = self.lesion.pitch_um / 1000.0
        idx = np.argwhere(self.lesion.depth_first())
        return np.column_stack([
            self.placement.x_mm + (idx[:, 2] - j0) * p,
            self.placement.y_mm - (idx[:, 1] - i0) * p,
            self.placement.z_mm - (idx[:, 0] - k0) * p,
        ])

    def without_lesion(self) -> SkinModel:
        return SkinModel(self.stack, None, self.placement, self.blood_field, self.blood_grid,
                         self.hair, self.melanosome_fraction, self.blood_fraction, self.params)


def embed_lesion(stack: LayerStack, lesion: LesionVolume | None,
                 placement: LesionPlacement | None = None, **kw) -> SkinModel:
    """Place ``lesion`` with its seed plane on the epidermis bottom.

    The placement is pushed down as needed so that no voxel pokes through
    the epidermis top.  Remaining keyword arguments fill the SkinModel.
    """
    kw.setdefault("blood_field", np.zeros((1, 1, 1), np.float32))
    kw.setdefault("blood_grid", FieldGrid(-stack.extent_mm / 2, stack.extent_mm / 2, 0.0,
                                          stack.extent_mm, (1, 1, 1)))
    kw.setdefault("hair", HairSet([]))
    kw.setdefault("melanosome_fraction", 0.06)
    kw.setdefault("blood_fraction", 0.02)
    if lesion is None:
        return SkinModel(stack, None, placement or LesionPlacement(), **kw)
    p = lesion.pitch_um / 1000.0
    _, ny, nx = lesion.depth_first().shape
    if max(ny, nx) * p > stack.extent_mm:
        raise AnatomyError("lesion grid is wider than the skin domain")
    if placement is None:
        x, y = 0.0, 0.0
        z = float(stack.elevation_um(1, x, y)) / 1000.0
    else:
        x, y, z = placement.x_mm, placement.y_mm, placement.z_mm
    model = SkinModel(stack, lesion, LesionPlacement(x, y, z), **kw)
    centers = model.lesion_voxel_centers()
    top = float(stack.elevation_um(0, centers[:, 0], centers[:, 1]).min()) / 1000.0 \
        if len(centers) else 0.0
    highest = centers[:, 2].max() + p / 2 if len(centers) else -np.inf
    if highest >= top:
        z -= highest - top + 1e-6
        model = SkinModel(stack, lesion, LesionPlacement(x, y, z), **kw)
    return model


@dataclass(frozen=True)
class SkinConfig:
    layers: LayerConfig = LayerConfig()
    blood: BloodConfig = BloodConfig()
    hair: HairConfig = HairConfig()
    blood_pitch_mm: float = 0.1
    blood_falloff_mm: float = 0.06
    melanosome_fraction: float = 0.06
    blood_fraction: float = 0.02


def build_skin_model(config: SkinConfig, rng: np.random.Generator,
                     lesion: LesionVolume | None = None) -> SkinModel:
    """Layers, blood network, hair and lesion from one random stream."""
    r_layers, r_blood, r_hair = rng.spawn(3)
    stack = build_layers(config.layers, r_layers)
    half = stack.extent_mm / 2
    t = stack.thickness_um
    z_top = -t["epidermis"] / 1000.0
    z_bottom = -(t["epidermis"] + t["papillary_dermis"] + t["dermis"]) / 1000.0
    network = generate_blood_network(config.blood, r_blood, (-half, half, -half, half, z_bottom, z_top))
    nxy = int(round(stack.extent_mm / config.blood_pitch_mm))
    nz = max(1, int(np.ceil((z_top - z_bottom) / config.blood_pitch_mm)))
    grid = FieldGrid(-half, half, z_top, config.blood_pitch_mm, (nz, nxy, nxy))
    field_ = bake_blood_field(network, grid, config.blood_falloff_mm)
    hair = generate_hair(config.hair, r_hair, stack)
    return embed_lesion(
        stack, lesion,
        blood_field=field_, blood_grid=grid, hair=hair,
        melanosome_fraction=config.melanosome_fraction,
        blood_fraction=config.blood_fraction,
        params={"thickness_um": t, "roughness_um": list(stack.roughness_um),
                "n_vessels": len(network.paths), "n_hairs": len(hair)},
    )


# ---------------------------------------------------------------------------
# serialization


def save_skin_model(model: SkinModel, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, name in enumerate(BOUNDARIES):
        write_pfm(out / f"height_{name}.pfm", model.stack.heights_um[k])
    q = np.round(model.blood_field * 255.0).astype(np.uint8)
    write_voxels(out / "blood.vox", q, model.blood_grid.pitch_mm * 1000.0)
    with open(out / "hair.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["strand", "x_mm", "y_mm", "z_mm"])
        for s, pts in enumerate(model.hair.strands):
            for x, y, z in pts:
                w.writerow([s, repr(float(x)), repr(float(y)), repr(float(z))])
    if model.lesion is not None:
        model.lesion.save(out / "lesion.vox")
    meta = {
        "extent_mm": model.stack.extent_mm,
        "thickness_um": model.stack.thickness_um,
        "roughness_um": list(model.stack.roughness_um),
        "placement": asdict(model.placement),
        "blood_grid": asdict(model.blood_grid),
        "hair": _jsonable(asdict(model.hair.config)),
        "melanosome_fraction": model.melanosome_fraction,
        "blood_fraction": model.blood_fraction,
        "has_lesion": model.lesion is not None,
        "params": _jsonable(model.params),
    }
    (out / "params.json").write_text(json.dumps(meta, indent=2))
    return out


def load_skin_model(src: str | Path) -> SkinModel:
    src = Path(src)
    meta = json.loads((src / "params.json").read_text())
    heights = np.stack([read_pfm(src / f"height_{n}.pfm").astype(np.float64) for n in BOUNDARIES])
    stack = LayerStack(meta["extent_mm"], heights, meta["thickness_um"], tuple(meta["roughness_um"]))
    q, _ = read_voxels(src / "blood.vox")
    g = meta["blood_grid"]
    grid = FieldGrid(g["x0"], g["y_top"], g["z_top"], g["pitch_mm"], tuple(g["shape"]))
    strands: dict[int, list] = {}
    with open(src / "hair.csv", newline="") as f:
        for row in csv.DictReader(f):
            strands.setdefault(int(row["strand"]), []).append(
                [float(row["x_mm"]), float(row["y_mm"]), float(row["z_mm"])])
    hcfg = HairConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["hair"].items()})
    hair = HairSet([np.array(strands[k]) for k in sorted(strands)], hcfg)
    lesion = LesionVolume.load(src / "lesion.vox") if meta["has_lesion"] else None
    return SkinModel(stack, lesion, LesionPlacement(**meta["placement"]),
                     (q.astype(np.float32) / 255.0), grid, hair,
                     meta["melanosome_fraction"], meta["blood_fraction"], meta.get("params", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
