"""Spectral optical properties of skin layers.

Absorption comes from linear mixing of tabulated chromophore curves,
scattering from a reduced-scattering power law plus the similarity relation.
All coefficients are in 1/mm, wavelengths in nm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

LAMBDA_MIN = 380.0
LAMBDA_MAX = 780.0
DEFAULT_K = 16

CHROMOPHORES = ("eumelanin", "oxyhemoglobin", "deoxyhemoglobin", "water", "fat")
LAYER_KINDS = ("epidermis", "papillary_dermis", "dermis", "hypodermis", "blood", "lesion")

# Melanosome-fraction sweep used for skin-tone series (light to dark).
MELANOSOME_PRESETS = (0.01, 0.06, 0.12, 0.22, 0.33)
BLOOD_PRESETS = (0.005, 0.02, 0.05)


def wavelength_grid(k: int = DEFAULT_K) -> np.ndarray:
    """Bin centres of ``k`` uniform bins spanning 380-780 nm."""
    width = (LAMBDA_MAX - LAMBDA_MIN) / k
    return LAMBDA_MIN + width * (np.arange(k) + 0.5)


@dataclass(frozen=True)
class Spectrum:
    wavelengths: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if wl.ndim != 1 or wl.shape != v.shape:
            raise ValueError("wavelengths and values must be matching 1D arrays")
        if np.any(np.diff(wl) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("spectrum values must be finite")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "values", v)

    def _check(self, other: Spectrum):
        if not np.array_equal(self.wavelengths, other.wavelengths):
            raise ValueError("spectra on different wavelength grids")

    def __add__(self, other):
        if isinstance(other, Spectrum):
            self._check(other)
            return Spectrum(self.wavelengths, self.values + other.values)
        return Spectrum(self.wavelengths, self.values + other)

    def __mul__(self, other):
        if isinstance(other, Spectrum):
            self._check(other)
            return Spectrum(self.wavelengths, self.values * other.values)
        return Spectrum(self.wavelengths, self.values * other)

    __radd__ = __add__
    __rmul__ = __mul__

    def __len__(self):
        return len(self.values)


class ChromophoreTable:
    """Absorption curves at unit concentration, linearly interpolated."""

    def __init__(self, curves: dict[str, tuple[np.ndarray, np.ndarray]]):
        missing = set(CHROMOPHORES) - set(curves)
        if missing:
            raise ValueError(f"missing chromophore curves: {sorted(missing)}")
        for name, (wl, mu) in curves.items():
            if np.any(mu <= 0):
                raise ValueError(f"chromophore {name} has non-positive absorption")
            if np.any(np.diff(wl) <= 0):
                raise ValueError(f"chromophore {name} wavelengths not increasing")
        self.curves = curves

    @classmethod
    def from_files(cls, paths: dict[str, str]) -> ChromophoreTable:
        return cls({name: load_two_column(p) for name, p in paths.items()})

    def __call__(self, name: str, wavelengths) -> np.ndarray:
        wl, mu = self.curves[name]
        return np.interp(np.asarray(wavelengths, dtype=np.float64), wl, mu)


def load_two_column(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, comments="#")
    return data[:, 0].copy(), data[:, 1].copy()


@lru_cache(maxsize=1)
def default_table() -> ChromophoreTable:
    root = resources.files("skinsynth") / "data"
    curves = {}
    for name in CHROMOPHORES:
        with resources.as_file(root / f"{name}.txt") as p:
            curves[name] = load_two_column(p)
    return ChromophoreTable(curves)


# ---------------------------------------------------------------------------


def reduced_scattering(wavelength, a, b):
    """Reduced scattering ``a * (wavelength / 500) ** -b`` in 1/mm."""
    return a * (np.asarray(wavelength, dtype=np.float64) / 500.0) ** (-b)


def scattering_from_reduced(mu_s_reduced, g):
    if not (0.0 <= g < 1.0):
        raise ValueError(f"anisotropy g={g} outside [0, 1)")
    return np.asarray(mu_s_reduced, dtype=np.float64) / (1.0 - g)


@dataclass(frozen=True)
class Fractions:
    melanosome: float = 0.0
    blood: float = 0.0
    oxygenation: float = 0.75
    water: float = 0.0
    fat: float = 0.0

    def __post_init__(self):
        for name in ("melanosome", "blood", "oxygenation", "water", "fat"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"fraction {name}={v} outside [0, 1]")


def blood_absorption(wavelength, oxygenation: float, table: ChromophoreTable):
    return (oxygenation * table("oxyhemoglobin", wavelength)
            + (1.0 - oxygenation) * table("deoxyhemoglobin", wavelength))


def layer_absorption(kind: str, wavelength, fractions: Fractions,
                     table: ChromophoreTable | None = None, baseline: float = 0.0):
    table = table or default_table()
    if kind == "epidermis":
        return fractions.melanosome * table("eumelanin", wavelength) + baseline
    if kind in ("dermis", "papillary_dermis"):
        return (fractions.blood * blood_absorption(wavelength, fractions.oxygenation, table)
                + fractions.water * table("water", wavelength) + baseline)
    if kind == "hypodermis":
        return (fractions.fat * table("fat", wavelength)
                + fractions.water * table("water", wavelength) + baseline)
    if kind == "blood":
        return blood_absorption(wavelength, fractions.oxygenation, table)
    raise ValueError(f"unknown layer kind {kind!r}")


@dataclass(frozen=True)
class OpticalMaterial:
    mu_a: Spectrum
    mu_s: Spectrum
    g: float
    ior: float
    roughness: float

    def __post_init__(self):
        if np.any(self.mu_a.values < 0) or np.any(self.mu_s.values < 0):
            raise ValueError("optical coefficients must be non-negative")
        if not -1.0 <= self.g <= 1.0:
            raise ValueError("g outside [-1, 1]")
        if self.ior < 1.0:
            raise ValueError("ior must be >= 1")
        if self.roughness <= 0:
            raise ValueError("roughness must be positive")

    @property
    def mu_t(self) -> np.ndarray:
        return self.mu_a.values + self.mu_s.values


def _default_scattering():
    return {
        "epidermis": (4.0, 1.2),
        "papillary_dermis": (3.0, 1.3),
        "dermis": (3.0, 1.3),
        "hypodermis": (2.0, 0.7),
        "lesion": (4.0, 1.2),
    }


@dataclass(frozen=True)
class OpticsConfig:
    scattering: dict = field(default_factory=_default_scattering)
    g: float = 0.9
    ior: float = 1.4
    roughness: float = 0.3
    baseline: float = 0.01
    oxygenation: float = 0.75
    dermis_water: float = 0.65
    hypodermis_water: float = 0.1
    hypodermis_fat: float = 0.7
    papillary_blood_scale: float = 1.5
    vessel_blood_fraction: float = 0.2
    lesion_melanin_multiplier: float = 20.0
    n_wavelengths: int = DEFAULT_K


@dataclass(frozen=True)
class TissueParams:
    """Per-model chromophore amounts that vary between samples."""

    melanosome_fraction: float = 0.06
    blood_fraction: float = 0.02


def material_for_layer(kind: str, tissue: TissueParams, config: OpticsConfig = OpticsConfig(),
                       table: ChromophoreTable | None = None) -> OpticalMaterial:
    """Optical material of one layer on the configured wavelength grid.

    Dermis absorption here uses the model's baseline blood fraction; the
    renderer raises it locally along the baked vessel field.
    """
    table = table or default_table()
    wl = wavelength_grid(config.n_wavelengths)
    if kind == "lesion":
        fr = Fractions(melanosome=min(1.0, tissue.melanosome_fraction))
        mu_a = (config.lesion_melanin_multiplier
                * layer_absorption("epidermis", wl, fr, table, 0.0) + config.baseline)
    elif kind == "epidermis":
        fr = Fractions(melanosome=tissue.melanosome_fraction)
        mu_a = layer_absorption(kind, wl, fr, table, config.baseline)
    elif kind in ("dermis", "papillary_dermis"):
        blood = tissue.blood_fraction
        if kind == "papillary_dermis":
            blood = min(1.0, blood * config.papillary_blood_scale)
        fr = Fractions(blood=blood, oxygenation=config.oxygenation, water=config.dermis_water)
        mu_a = layer_absorption(kind, wl, fr, table, config.baseline)
    elif kind == "hypodermis":
        fr = Fractions(water=config.hypodermis_water, fat=config.hypodermis_fat)
        mu_a = layer_absorption(kind, wl, fr, table, config.baseline)
    elif kind == "blood":
        mu_a = layer_absorption(kind, wl, Fractions(oxygenation=config.oxygenation), table)
    else:
        raise ValueError(f"unknown layer kind {kind!r}")
    a, b = config.scattering.get(kind, config.scattering["dermis"])
    mu_s = scattering_from_reduced(reduced_scattering(wl, a, b), config.g)
    return OpticalMaterial(
        mu_a=Spectrum(wl, mu_a),
        mu_s=Spectrum(wl, mu_s),
        g=config.g,
        ior=config.ior,
        roughness=config.roughness,
    )
