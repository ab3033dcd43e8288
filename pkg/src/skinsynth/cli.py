"""Command line entry points.

Every subcommand exits 0 on success.  Failures print a one-line JSON object
(``{"error": ..., "type": ...}``) on stderr and exit 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np


def _cmd_grow_lesion(args) -> dict:
    from .lesion import CP_REGULAR, LesionParams, export_snapshots, grow

    g = args.grid
    params = LesionParams(timepoints=args.timepoints, cp=CP_REGULAR if args.cp is None else args.cp,
                          seed=args.seed, pitch_um=args.pitch_um, grid_shape=(g, g, g))
    final, snaps = grow(params, snapshots=range(1, params.timepoints + 1))
    paths = export_snapshots(final, snaps, params, args.out)
    return {"snapshots": [str(p) for p in paths], "occupied": final.n_occupied}


def _cmd_build_skin(args) -> dict:
    from .anatomy import HairConfig, SkinConfig, build_skin_model, save_skin_model
    from .lesion import LesionVolume

    lesion = LesionVolume.load(args.lesion) if args.lesion else None
    cfg = SkinConfig(hair=HairConfig(density_per_cm2=args.hair_density),
                     melanosome_fraction=args.melanosome, blood_fraction=args.blood)
    model = build_skin_model(cfg, np.random.default_rng(args.seed), lesion)
    out = save_skin_model(model, args.out)
    return {"model": str(out), "n_hairs": len(model.hair)}


def _cmd_render(args) -> dict:
    from .anatomy import load_skin_model
    from .render import Camera, RenderConfig, render
    from .render.envmap import load_envmap

    model = load_skin_model(args.model) if args.model else None
    camera = Camera(args.width, args.height, args.fov, args.camera_height)
    config = RenderConfig(spp=args.spp, seed=args.seed, threads=args.threads, exposure=args.exposure)
    out = render(model, camera, load_envmap(args.env, args.env_scale), config)
    paths = out.save(args.out, args.stem, pfm=args.pfm)
    return {k: str(v) for k, v in paths.items()} | {"render_ms": out.metadata["render_ms"]}


def _cmd_generate(args) -> dict:
    from .pipeline import generate_dataset, parse_config

    overrides = {"count": args.count, "seed": args.seed}
    if args.allow_custom_cp:
        overrides["allow_custom_cp"] = True
    config = parse_config(args.config, overrides)
    result = generate_dataset(config, args.out, workers=args.workers, resume=not args.no_resume)
    return {"manifest": str(result.manifest), "generated": result.generated,
            "skipped": result.skipped, "failed": result.failed}


def _cmd_metrics(args) -> dict:
    from .metrics import ingest_folder

    rows = ingest_folder(args.images, args.masks, args.out, args.plots)
    return {"csv": str(args.out), "rows": len(rows)}


def _cmd_manifest_merge(args) -> dict:
    from .pipeline import merge_manifests

    rows = merge_manifests(args.manifests, args.out)
    return {"manifest": str(args.out), "rows": len(rows)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skinsynth", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("grow-lesion", help="grow a lesion and write one .vox per time point")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--timepoints", type=int, default=20)
    s.add_argument("--cp", type=float, default=None, help="irregularity probability (default 1e-4)")
    s.add_argument("--grid", type=int, default=128, help="cubic grid side in voxels")
    s.add_argument("--pitch-um", type=float, default=50.0)
    s.add_argument("--out", type=Path, default=Path("lesion"))
    s.set_defaults(func=_cmd_grow_lesion)

    s = sub.add_parser("build-skin", help="build a skin model directory")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lesion", type=Path, default=None, help="lesion .vox to embed")
    s.add_argument("--melanosome", type=float, default=0.06)
    s.add_argument("--blood", type=float, default=0.02)
    s.add_argument("--hair-density", type=float, default=0.0, help="strands per cm^2")
    s.add_argument("--out", type=Path, default=Path("skin"))
    s.set_defaults(func=_cmd_build_skin)

    s = sub.add_parser("render", help="render a saved skin model (or an empty scene)")
    s.add_argument("--model", type=Path, default=None)
    s.add_argument("--env", default="sky-gradient", help="uniform(L), sky-gradient, .hdr or .pfm")
    s.add_argument("--env-scale", type=float, default=1.0)
    s.add_argument("--width", type=int, default=256)
    s.add_argument("--height", type=int, default=256)
    s.add_argument("--fov", type=float, default=75.0)
    s.add_argument("--camera-height", type=float, default=15.0, help="mm above the skin")
    s.add_argument("--spp", type=int, default=124)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--exposure", type=float, default=1.0)
    s.add_argument("--pfm", action="store_true", help="also write linear radiance as .pfm")
    s.add_argument("--stem", default="render")
    s.add_argument("--out", type=Path, default=Path("."))
    s.set_defaults(func=_cmd_render)

    s = sub.add_parser("generate", help="generate a dataset from a JSON config")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--count", type=int, default=None, help="override config count")
    s.add_argument("--seed", type=int, default=None, help="override config seed")
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--allow-custom-cp", action="store_true")
    s.add_argument("--no-resume", action="store_true", help="regenerate completed samples")
    s.set_defaults(func=_cmd_generate)

    s = sub.add_parser("metrics", help="measure an image folder against a mask folder")
    s.add_argument("--images", type=Path, required=True)
    s.add_argument("--masks", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True, help="output CSV")
    s.add_argument("--plots", type=Path, default=None, help="directory for histograms")
    s.set_defaults(func=_cmd_metrics)

    s = sub.add_parser("manifest-merge", help="merge manifests by id")
    s.add_argument("manifests", nargs="+", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=_cmd_manifest_merge)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # numba falls back to another threading layer on its own
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except Exception as exc:
        err = {"error": str(exc), "type": type(exc).__name__, "command": args.command}
        errors = getattr(exc, "errors", None)
        if isinstance(errors, list):
            err["details"] = [{"key": k, "message": m} for k, m in errors]
        print(json.dumps(err), file=sys.stderr)
        return 1
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
