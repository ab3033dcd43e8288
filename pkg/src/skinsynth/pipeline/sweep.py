"""Expansion of a generation config into per-image parameter sets."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .config import GenerationConfig, sample_param

SWEEP_AXES = ("blood", "melanosome", "regularity", "hair")

# child stream keys under each base model's seed
_PARAMS, _LESION, _SKIN, _RENDER, _CROP, _SPLIT = range(6)


@dataclass(frozen=True)
class SampleSpec:
    id: str
    index: int
    base_index: int
    seed: int
    melanosome_fraction: float
    blood_fraction: float
    lesion_cp: float
    lesion_timepoints: int
    hair: bool
    hair_density_per_cm2: float
    env_map: str
    split: str

    def to_dict(self) -> dict:
        return asdict(self)


def stream_seed(master: int, base: int, key: int | None = None) -> int:
    spawn = (base,) if key is None else (base, key)
    return int(np.random.SeedSequence(master, spawn_key=spawn).generate_state(1, np.uint64)[0])


def stream_rng(master: int, base: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(base, key)))


def _pick_split(splits: dict[str, float], u: float) -> str:
    acc = 0.0
    names = list(splits)
    for name in names:
        acc += splits[name]
        if u < acc:
            return name
    return names[-1]


def _base_draw(config: GenerationConfig, base: int) -> dict:
    rng = stream_rng(config.seed, base, _PARAMS)
    mel = sample_param(config.melanosome_fraction, rng)
    blood = sample_param(config.blood_fraction, rng)
    cp = float(config.lesion_cp[int(rng.integers(len(config.lesion_cp)))])
    hair_on = bool(config.hair.enabled and rng.random() < config.hair.probability)
    density = sample_param(config.hair.density_per_cm2, rng)
    env = config.env_maps[int(rng.integers(len(config.env_maps)))]
    split = _pick_split(config.splits, float(stream_rng(config.seed, base, _SPLIT).random()))
    return {"melanosome_fraction": mel, "blood_fraction": blood, "lesion_cp": cp,
            "hair": hair_on, "hair_density_per_cm2": density, "env_map": env, "split": split}


def _axes(config: GenerationConfig):
    sw = config.sweep
    if sw is None:
        return []
    declared = [("blood", "blood_fraction", sw.blood), ("melanosome", "melanosome_fraction", sw.melanosome),
                ("regularity", "lesion_cp", sw.regularity), ("hair", "hair", sw.hair)]
    return [(field, values) for _, field, values in declared if values is not None]


def sweep_size(config: GenerationConfig) -> int:
    if config.sweep is None:
        return config.count
    n = config.sweep.base_models
    for _, values in _axes(config):
        n *= len(values)
    return n


def sweep_expand(config: GenerationConfig, limit: int | None = None) -> list[SampleSpec]:
    """Cartesian product of the declared axes over the base models.

    Without a sweep block every sample is its own base model.  ``limit``
    truncates the (deterministic) expansion.
    """
    axes = _axes(config)
    n_base = config.sweep.base_models if config.sweep is not None else config.count
    total = sweep_size(config)
    limit = total if limit is None else min(limit, total)
    specs = []
    combos = itertools.product(range(n_base), *[values for _, values in axes])
    for index, combo in enumerate(itertools.islice(combos, limit)):
        base = combo[0]
        draw = _base_draw(config, base)
        for (field, _), value in zip(axes, combo[1:]):
            draw[field] = bool(value) if field == "hair" else float(value)
        if draw["hair"] is False:
            draw["hair_density_per_cm2"] = 0.0
        specs.append(SampleSpec(
            id=f"{index:06d}", index=index, base_index=base, seed=stream_seed(config.seed, base),
            lesion_timepoints=config.lesion_timepoints, **draw))
    return specs
