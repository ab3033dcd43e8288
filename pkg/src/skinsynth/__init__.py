"""Procedural skin models, spectral volumetric rendering and lesion metrics."""

__version__ = "0.1.0"
