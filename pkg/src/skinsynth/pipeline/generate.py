"""Batch dataset generation with deterministic, resumable output."""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing as mp
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..anatomy import BloodConfig, HairConfig, LayerConfig, SkinConfig, build_skin_model
from ..lesion import LesionParams, grow
from ..metrics import center_crop_random, circularity, ita, ita_category, relative_area
from ..render import Camera, RenderConfig, render, save_png
from ..render.envmap import load_envmap
from .config import GenerationConfig, echo_config
from .sweep import _CROP, _LESION, _RENDER, _SKIN, SampleSpec, stream_rng, stream_seed, sweep_expand

log = logging.getLogger(__name__)

MANIFEST_FIELDS = (
    "id", "index", "base_index", "seed", "split", "status",
    "melanosome_fraction", "blood_fraction", "lesion_cp", "lesion_timepoints",
    "hair", "hair_density_per_cm2", "env_map", "crop_fraction",
    "ita", "ita_category", "circularity", "relative_area", "lesion_voxels",
    "image", "mask", "error",
)
ROWS_DIR = ".rows"


def worker_limit(requested: int | None = None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("SSYNTH_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            log.warning("ignoring non-integer SSYNTH_THREADS=%r", cap)
    return max(1, n)


def _write_atomic(path: Path, write) -> None:
    tmp = path.with_name(path.name + ".tmp")
    write(tmp)
    os.replace(tmp, path)


def build_sample(spec: SampleSpec, config: GenerationConfig):
    """Lesion, skin model and render for one spec; returns (image, mask, info)."""
    master, base = config.seed, spec.base_index
    g = config.lesion_grid
    lesion_params = LesionParams(
        timepoints=spec.lesion_timepoints, cp=spec.lesion_cp,
        seed=stream_seed(master, base, _LESION) % (2**63),
        pitch_um=config.lesion_pitch_um, grid_shape=(g, g, g))
    lesion, _ = grow(lesion_params)
    h = config.hair
    hair = HairConfig(density_per_cm2=spec.hair_density_per_cm2 if spec.hair else 0.0,
                      length_mm=tuple(h.length_mm), thickness_um=h.thickness_um,
                      curvature_per_mm=h.curvature_per_mm)
    skin_cfg = SkinConfig(layers=LayerConfig(), blood=BloodConfig(), hair=hair,
                          melanosome_fraction=spec.melanosome_fraction,
                          blood_fraction=spec.blood_fraction)
    model = build_skin_model(skin_cfg, stream_rng(master, base, _SKIN), lesion)
    r = config.render
    camera = Camera(r.width, r.height, r.fov_deg, r.camera_height_mm)
    env = load_envmap(spec.env_map, r.env_scale)
    rcfg = RenderConfig(spp=r.spp, max_depth=r.max_depth, rr_depth=r.rr_depth,
                        seed=stream_seed(master, base, _RENDER), exposure=r.exposure, threads=1)
    out = render(model, camera, env, rcfg)
    image, mask = out.image, out.mask
    crop_f = 0.0
    if config.crop.enabled:
        image, mask, crop_f = center_crop_random(image, mask, stream_rng(master, base, _CROP),
                                                 config.crop.max_fraction, return_fraction=True)
    info = {"crop_fraction": crop_f, "lesion_voxels": lesion.n_occupied,
            "render_ms": out.metadata["render_ms"], "nonfinite": out.metadata["nonfinite_samples"]}
    return image, mask, info


def run_sample(spec: SampleSpec, config: GenerationConfig, out_dir: Path) -> dict:
    t0 = time.perf_counter()
    row = {k: "" for k in MANIFEST_FIELDS}
    row.update({k: v for k, v in spec.to_dict().items() if k in row})
    image_rel = f"images/{spec.id}.png"
    mask_rel = f"masks/{spec.id}.png"
    try:
        image, mask, info = build_sample(spec, config)
        m = mask.astype(bool)
        value = ita(image, m) if not m.all() else float("nan")
        row.update({
            "crop_fraction": info["crop_fraction"],
            "lesion_voxels": info["lesion_voxels"],
            "ita": value,
            "ita_category": ita_category(value) if np.isfinite(value) else "",
            "circularity": circularity(m) if m.any() else float("nan"),
            "relative_area": relative_area(m),
        })
        _write_atomic(out_dir / image_rel, lambda p: save_png(p, image))
        _write_atomic(out_dir / mask_rel, lambda p: save_png(p, mask.astype(np.uint8) * 255))
        row.update({"image": image_rel, "mask": mask_rel, "status": "ok"})
    except Exception as exc:  # reported per sample, the batch carries on
        log.error("sample %s failed: %s", spec.id, exc)
        row.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}"})
    elapsed = (time.perf_counter() - t0) * 1000.0
    _write_atomic(out_dir / ROWS_DIR / f"{spec.id}.json",
                  lambda p: p.write_text(json.dumps({"row": _clean(row), "wall_ms": elapsed})))
    return row


def _clean(row: dict) -> dict:
    return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in row.items()}


def _worker(args):
    spec, config_json, out_dir = args
    import numba

    numba.set_num_threads(1)
    config = GenerationConfig.model_validate_json(config_json)
    return run_sample(spec, config, Path(out_dir))


def _format(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "" if not np.isfinite(v) else repr(v)
    return v


# free-text columns are always quoted so spreadsheets keep them as text
_QUOTED = frozenset({"image", "mask", "env_map", "error"})


def _cell(key: str, v) -> str:
    text = str(_format(v))
    if key in _QUOTED or any(ch in text for ch in ',"\r\n'):
        return '"' + text.replace('"', '""') + '"'
    return text


def write_manifest(path: Path, rows: list[dict]) -> None:
    rows = sorted(rows, key=lambda r: r["id"])
    lines = [",".join(MANIFEST_FIELDS)]
    lines += [",".join(_cell(k, r.get(k)) for k in MANIFEST_FIELDS) for r in rows]
    _write_atomic(path, lambda p: p.write_text("\n".join(lines) + "\n", encoding="utf-8"))


def read_manifest(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _percentile(values, q):
    return float(np.percentile(values, q)) if len(values) else None


@dataclass
class GenerationResult:
    out_dir: Path
    manifest: Path
    rows: list[dict]
    generated: int
    skipped: int
    failed: int
    report: dict


def _completed(out_dir: Path, spec: SampleSpec) -> dict | None:
    p = out_dir / ROWS_DIR / f"{spec.id}.json"
    if not p.exists():
        return None
    try:
        row = json.loads(p.read_text())["row"]
    except (json.JSONDecodeError, KeyError):
        return None
    if row.get("status") != "ok":
        return None
    if not ((out_dir / row["image"]).exists() and (out_dir / row["mask"]).exists()):
        return None
    return row


def generate_dataset(config: GenerationConfig, out_dir, workers: int | None = None,
                     resume: bool = True, limit: int | None = None) -> GenerationResult:
    """Generate ``config.count`` samples (or the sweep, capped by count) under ``out_dir``."""
    out = Path(out_dir)
    for sub in ("images", "masks", ROWS_DIR):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "config.echo.json").write_text(echo_config(config) + "\n", encoding="utf-8")
    specs = sweep_expand(config, limit=config.count if limit is None else min(limit, config.count))

    rows: dict[str, dict] = {}
    todo = []
    for spec in specs:
        done = _completed(out, spec) if resume else None
        if done is not None:
            rows[spec.id] = done
        else:
            todo.append(spec)
    skipped = len(rows)

    n_workers = min(worker_limit(workers or config.workers), max(1, len(todo)))
    if n_workers <= 1 or len(todo) <= 1:
        for spec in todo:
            rows[spec.id] = run_sample(spec, config, out)
    else:
        ctx = mp.get_context("spawn")
        payload = config.model_dump_json()
        with ProcessPoolExecutor(max_workers=n_workers, mp_context=ctx) as pool:
            for spec, row in zip(todo, pool.map(_worker, [(s, payload, str(out)) for s in todo])):
                rows[spec.id] = row

    manifest = out / "manifest.csv"
    all_rows = [rows[s.id] for s in specs]
    write_manifest(manifest, all_rows)
    timings = {}
    for s in specs:
        p = out / ROWS_DIR / f"{s.id}.json"
        if p.exists():
            timings[s.id] = round(json.loads(p.read_text())["wall_ms"], 1)
    vals = list(timings.values())
    failed = sum(1 for r in all_rows if r.get("status") != "ok")
    report = {
        "count": len(specs),
        "generated": len(todo),
        "skipped": skipped,
        "failed": failed,
        "workers": n_workers,
        "wall_ms": {"p50": _percentile(vals, 50), "p95": _percentile(vals, 95),
                    "mean": float(np.mean(vals)) if vals else None},
        "per_sample_ms": timings,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return GenerationResult(out, manifest, all_rows, len(todo), skipped, failed, report)


def merge_manifests(paths, out_path) -> list[dict]:
    """Union of manifests keyed by id; conflicting duplicates are an error."""
    merged: dict[str, dict] = {}
    for p in paths:
        for row in read_manifest(p):
            prev = merged.get(row["id"])
            if prev is not None and prev != row:
                raise ValueError(f"manifest rows for id {row['id']} disagree ({p})")
            merged[row["id"]] = row
    rows = [merged[k] for k in sorted(merged)]
    write_manifest(Path(out_path), rows)
    return rows
