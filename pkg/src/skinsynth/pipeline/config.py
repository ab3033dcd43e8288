"""Dataset generation config: strict JSON schema with documented defaults."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..lesion import CP_IRREGULAR, CP_REGULAR
from ..optics import BLOOD_PRESETS, MELANOSOME_PRESETS

CP_PRESETS = (CP_REGULAR, CP_IRREGULAR)
REQUIRED_KEYS = ("seed", "count")


class ConfigError(ValueError):
    """Invalid config; ``errors`` holds (key path, message) pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{k}: {m}" for k, m in errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Range(_Strict):
    min: float
    max: float

    @model_validator(mode="after")
    def _ordered(self):
        if self.max < self.min:
            raise ValueError("max must be >= min")
        return self


# a fixed value, a list to pick from uniformly, or a uniform range
Param = Union[float, list[float], Range]


def sample_param(p, rng: np.random.Generator) -> float:
    if isinstance(p, Range):
        return float(rng.uniform(p.min, p.max))
    if isinstance(p, list):
        return float(p[int(rng.integers(len(p)))])
    return float(p)


def _param_values(p) -> list[float]:
    if isinstance(p, Range):
        return [p.min, p.max]
    if isinstance(p, list):
        return list(p)
    return [p]


class HairSettings(_Strict):
    enabled: bool = True
    probability: float = Field(0.5, ge=0.0, le=1.0)
    density_per_cm2: Param = Range(min=5.0, max=40.0)
    length_mm: tuple[float, float] = (3.0, 8.0)
    thickness_um: float = Field(60.0, gt=0.0)
    curvature_per_mm: float = 0.15


class RenderSettings(_Strict):
    width: int = Field(256, ge=16)
    height: int = Field(256, ge=16)
    spp: int = Field(32, ge=1)
    max_depth: int = Field(100_000, ge=2)
    rr_depth: int = Field(256, ge=0)
    fov_deg: float = Field(75.0, gt=0.0, lt=180.0)
    camera_height_mm: float = Field(15.0, gt=0.0)
    exposure: float = Field(1.0, gt=0.0)
    env_scale: float = Field(1.0, ge=0.0)


class CropSettings(_Strict):
    enabled: bool = False
    max_fraction: float = Field(0.6, ge=0.0, lt=1.0)


class SweepSettings(_Strict):
    """Axes of a Cartesian sweep over shared base models."""

    base_models: int = Field(1, ge=1)
    blood: list[float] | None = None
    melanosome: list[float] | None = None
    regularity: list[float] | None = None
    hair: list[bool] | None = None

    @field_validator("blood", "melanosome", "regularity", "hair")
    @classmethod
    def _nonempty(cls, v):
        if v is not None and len(v) == 0:
            raise ValueError("sweep axis must not be empty")
        return v


class GenerationConfig(_Strict):
    seed: int = Field(ge=0)
    count: int = Field(ge=1)
    melanosome_fraction: Param = list(MELANOSOME_PRESETS)
    blood_fraction: Param = list(BLOOD_PRESETS)
    lesion_cp: list[float] = list(CP_PRESETS)
    lesion_timepoints: int = Field(20, ge=1, le=40)
    lesion_pitch_um: float = Field(50.0, gt=0.0)
    lesion_grid: int = Field(128, ge=16)
    allow_custom_cp: bool = False
    hair: HairSettings = HairSettings()
    env_maps: list[str] = ["sky-gradient", "uniform(1.0)"]
    render: RenderSettings = RenderSettings()
    crop: CropSettings = CropSettings()
    splits: dict[str, float] = {"train": 0.8, "val": 0.1, "test": 0.1}
    sweep: SweepSettings | None = None
    workers: int | None = Field(None, ge=1)

    @field_validator("melanosome_fraction", "blood_fraction")
    @classmethod
    def _fraction(cls, v):
        vals = _param_values(v)
        if not vals or any(not 0.0 <= x <= 1.0 for x in vals):
            raise ValueError("fractions must lie in [0, 1]")
        return v

    @field_validator("env_maps")
    @classmethod
    def _envs(cls, v):
        if not v:
            raise ValueError("at least one environment map is required")
        return v

    @field_validator("splits")
    @classmethod
    def _splits(cls, v):
        if not v or any(x < 0 for x in v.values()) or abs(sum(v.values()) - 1.0) > 1e-6:
            raise ValueError("split fractions must be non-negative and sum to 1")
        return v

    @model_validator(mode="after")
    def _cp_presets(self):
        cps = list(self.lesion_cp)
        if self.sweep is not None and self.sweep.regularity is not None:
            cps += self.sweep.regularity
        for cp in cps:
            if not 0.0 <= cp <= 1.0:
                raise ValueError(f"lesion_cp {cp} outside [0, 1]")
            if not self.allow_custom_cp and not any(np.isclose(cp, p, rtol=0, atol=1e-12)
                                                    for p in CP_PRESETS):
                raise ValueError(f"lesion_cp {cp} is not one of the presets {list(CP_PRESETS)}; "
                                 "set allow_custom_cp to use other values")
        if not self.lesion_cp:
            raise ValueError("lesion_cp must list at least one value")
        return self

    @model_validator(mode="after")
    def _grid_margin(self):
        # the seed sits at the grid centre and needs 2 voxels per time point
        margin = 2 * self.lesion_timepoints
        if self.lesion_grid - 1 - self.lesion_grid // 2 < margin:
            raise ValueError(f"lesion_grid {self.lesion_grid} is too small for "
                             f"{self.lesion_timepoints} time points (needs at least {2 * margin + 1})")
        return self


def _errors(exc: ValidationError) -> list[tuple[str, str]]:
    out = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append((loc, e["msg"]))
    return out


def validate_config(data: dict, overrides: dict | None = None) -> GenerationConfig:
    data = dict(data)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    missing = [k for k in REQUIRED_KEYS if k not in data]
    if missing:
        raise ConfigError([(k, "required key missing") for k in missing])
    try:
        return GenerationConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_errors(exc)) from None


def parse_config(path: str | Path, overrides: dict | None = None) -> GenerationConfig:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        data = {}
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([("<file>", f"invalid JSON at char {exc.pos}: {exc.msg}")]) from None
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "config must be a JSON object")])
    return validate_config(data, overrides)


def echo_config(config: GenerationConfig) -> str:
    """Fully resolved config as JSON; parse(echo(c)) == c."""
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True)
