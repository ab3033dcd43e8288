"""Image and mask measurements: skin tone, lesion shape, overlap, cropping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

D65_XYZ = np.array([0.95047, 1.0, 1.08883])
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)

# (label, lower edge); a value belongs to the first bin whose lower edge it exceeds
ITA_BINS = (
    ("very_light", 55.0),
    ("light", 41.0),
    ("intermediate", 28.0),
    ("tan2", 19.0),
)
ITA_LOWEST = "dark_tan1"
ITA_LABELS = tuple(b[0] for b in ITA_BINS) + (ITA_LOWEST,)

KULPA = math.pi * (1 + math.sqrt(2)) / 8


class MetricsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# colour


def _as_unit_rgb(image) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim < 1 or img.shape[-1] < 3:
        raise MetricsError("expected RGB values in the last axis")
    img = img[..., :3]
    if np.issubdtype(img.dtype, np.integer):
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


def _decode(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _encode(c):
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055)


def rgb_to_lab(rgb) -> np.ndarray:
    """Gamma-encoded sRGB in [0, 1] (or uint8) -> CIELAB under D65."""
    xyz = _decode(_as_unit_rgb(rgb)) @ SRGB_TO_XYZ.T
    t = xyz / D65_XYZ
    d = 6.0 / 29.0
    f = np.where(t > d ** 3, np.cbrt(t), t / (3 * d * d) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_to_rgb(lab) -> np.ndarray:
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    d = 6.0 / 29.0
    f = np.stack([fx, fy, fz], axis=-1)
    t = np.where(f > d, f ** 3, 3 * d * d * (f - 4.0 / 29.0))
    return _encode((t * D65_XYZ) @ XYZ_TO_SRGB.T)


def ita_from_lab(L, b) -> float:
    return float(np.degrees(np.arctan2(L - 50.0, b)))


def ita(image, mask=None) -> float:
    """Individual typology angle (degrees) of the non-lesion pixels."""
    lab = rgb_to_lab(_as_unit_rgb(image))
    keep = np.ones(lab.shape[:2], bool) if mask is None else ~np.asarray(mask).astype(bool)
    if keep.shape != lab.shape[:2]:
        raise MetricsError("mask and image shapes differ")
    if not keep.any():
        raise MetricsError("no non-lesion pixels to measure skin tone")
    return ita_from_lab(lab[..., 0][keep].mean(), lab[..., 2][keep].mean())


def ita_category(value: float) -> str:
    if not math.isfinite(value):
        raise MetricsError("ITA must be finite")
    for label, lower in ITA_BINS:
        if value > lower:
            return label
    return ITA_LOWEST


# ---------------------------------------------------------------------------
# shape

# clockwise neighbour offsets (row, col) starting west; even = edge moves
_OFFSETS = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))
_OFFSET_INDEX = {o: i for i, o in enumerate(_OFFSETS)}


def trace_boundary(component: np.ndarray) -> list[tuple[int, int]]:
    """Moore-neighbour trace of the outer boundary of one 8-connected blob.

    Returns boundary pixel centres in order, without repeating the start.
    """
    comp = np.pad(np.asarray(component, bool), 1)
    rows, cols = np.nonzero(comp)
    if len(rows) == 0:
        return []
    start = (int(rows[0]), int(cols[0]))
    cur = start
    back = 0  # west of the top-left pixel is background
    first = None
    chain = [start]
    while True:
        for k in range(1, 9):
            d = (back + k) % 8
            nr, nc = cur[0] + _OFFSETS[d][0], cur[1] + _OFFSETS[d][1]
            if comp[nr, nc]:
                break
        else:
            break  # isolated pixel
        if cur == start and first is not None and d == first:
            break
        if first is None:
            first = d
        prev = _OFFSETS[(d - 1) % 8]
        p = (cur[0] + prev[0] - nr, cur[1] + prev[1] - nc)
        back = _OFFSET_INDEX[p]
        cur = (nr, nc)
        chain.append(cur)
    if len(chain) > 1 and chain[-1] == start:
        chain.pop()
    return [(r - 1, c - 1) for r, c in chain]


def _chain_measures(chain):
    """(area, perimeter) of the pixel region outlined by a boundary chain."""
    if len(chain) < 2:
        n_even = n_odd = 0
        poly_area = 0.0
    else:
        pts = np.array(chain + chain[:1], dtype=np.float64)
        step = np.abs(np.diff(pts, axis=0)).sum(axis=1)
        n_even = int(np.count_nonzero(step == 1))
        n_odd = int(np.count_nonzero(step == 2))
        y, x = pts[:, 0], pts[:, 1]
        poly_area = 0.5 * abs(float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1])))
    # Kulpa's unbiased length for the centre chain, then grow by half a pixel
    p_chain = KULPA * (n_even + math.sqrt(2) * n_odd)
    area = poly_area + 0.5 * p_chain + math.pi / 4
    perimeter = p_chain + math.pi
    return area, perimeter


def _components(mask):
    filled = ndimage.binary_fill_holes(np.asarray(mask, bool))
    labels, n = ndimage.label(filled, structure=np.ones((3, 3), bool))
    return labels, n


def perimeter(mask) -> float:
    labels, n = _components(mask)
    return float(sum(_chain_measures(trace_boundary(labels == i))[1] for i in range(1, n + 1)))


def circularity(mask) -> float:
    """4 pi A / P^2 from the traced outer contours (holes filled)."""
    labels, n = _components(mask)
    if n == 0:
        raise MetricsError("circularity of an empty mask")
    area = per = 0.0
    for i in range(1, n + 1):
        sl = ndimage.find_objects((labels == i).astype(np.int32))[0]
        a, p = _chain_measures(trace_boundary(labels[sl] == i))
        area += a
        per += p
    return 4.0 * math.pi * area / (per * per)


def relative_area(mask) -> float:
    m = np.asarray(mask).astype(bool)
    return float(m.sum()) / m.size if m.size else 0.0


def dice(a, b) -> float:
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise MetricsError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


@dataclass(frozen=True)
class MaskStats:
    area: int
    perimeter: float
    circularity: float
    relative_area: float

    @classmethod
    def of(cls, mask) -> MaskStats:
        m = np.asarray(mask).astype(bool)
        if not m.any():
            return cls(0, 0.0, float("nan"), 0.0)
        return cls(int(m.sum()), perimeter(m), circularity(m), relative_area(m))


# ---------------------------------------------------------------------------
# augmentation


def crop_bounds(side: int, fraction: float) -> tuple[int, int]:
    """(offset, size) of a centred crop removing ``fraction`` of the side."""
    size = int(round(side * (1.0 - fraction)))
    return (side - size) // 2, size


def center_crop_random(image, mask, rng: np.random.Generator, max_fraction: float = 0.6,
                       min_side: int = 16, max_retries: int = 100, return_fraction: bool = False):
    image = np.asarray(image)
    mask = np.asarray(mask)
    h, w = image.shape[:2]
    if h != w or mask.shape[:2] != (h, w):
        raise MetricsError("crop needs a square image and a matching mask")
    if not 0.0 <= max_fraction < 1.0:
        raise MetricsError("max_fraction must lie in [0, 1)")
    for _ in range(max_retries):
        f = float(rng.uniform(0.0, max_fraction))
        off, size = crop_bounds(h, f)
        if size >= min_side:
            break
    else:
        raise MetricsError(f"could not draw a crop of at least {min_side} px")
    sl = (slice(off, off + size), slice(off, off + size))
    out = image[sl].copy(), mask[sl].copy()
    return (*out, f) if return_fraction else out


# ---------------------------------------------------------------------------
# folder ingestion

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
CSV_FIELDS = ("image", "mask", "ita", "category", "circularity", "relative_area")


def load_mask(path) -> np.ndarray:
    m = np.asarray(Image.open(path))
    if m.ndim == 3:
        m = m[..., :3].max(axis=-1)
    return (m != 0).astype(np.uint8)


def measure_pair(image, mask) -> dict:
    m = np.asarray(mask).astype(bool)
    value = ita(image, m) if not m.all() else float("nan")
    return {
        "ita": value,
        "category": ita_category(value) if math.isfinite(value) else "",
        "circularity": circularity(m) if m.any() else float("nan"),
        "relative_area": relative_area(m),
    }


def ingest_folder(images_dir, masks_dir, out_csv, plots_dir=None) -> list[dict]:
    """Measure every image that has a same-stem mask; write one CSV row per pair."""
    images_dir, masks_dir = Path(images_dir), Path(masks_dir)
    masks = {p.stem: p for p in masks_dir.iterdir() if p.suffix.lower() == ".png"}
    rows = []
    for img_path in sorted(images_dir.iterdir()):
        if img_path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        stem = img_path.stem
        mpath = masks.get(stem) or masks.get(stem + "_mask") or masks.get(stem + "_segmentation")
        if mpath is None:
            continue
        img = np.asarray(Image.open(img_path).convert("RGB"))
        m = load_mask(mpath)
        if m.shape != img.shape[:2]:
            raise MetricsError(f"{img_path.name}: mask shape {m.shape} differs from image")
        rows.append({"image": img_path.name, "mask": mpath.name, **measure_pair(img, m)})
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    write_rows(out_csv, rows, CSV_FIELDS)
    if plots_dir is not None:
        plot_distributions(rows, plots_dir)
    return rows


def write_rows(path, rows, fields) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=list(fields), quoting=csv.QUOTE_MINIMAL,
                           lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in fields})


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6g}"
    return v


def plot_distributions(rows, out_dir) -> list[Path]:
    """Histograms of ITA, circularity and relative area (needs matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for key in ("ita", "circularity", "relative_area"):
        vals = [r[key] for r in rows if isinstance(r[key], float) and math.isfinite(r[key])]
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.hist(vals, bins=20, color="0.35")
        ax.set_xlabel(key)
        ax.set_ylabel("count")
        fig.tight_layout()
        p = out_dir / f"{key}_hist.png"
        fig.savefig(p, dpi=100)
        plt.close(fig)
        paths.append(p)
    return paths
