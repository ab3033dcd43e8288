"""Config parsing, sweeps and batch dataset generation."""

from .config import ConfigError, GenerationConfig, echo_config, parse_config, validate_config
from .generate import generate_dataset, merge_manifests, read_manifest, write_manifest
from .sweep import SampleSpec, sweep_expand, sweep_size

__all__ = [
    "ConfigError", "GenerationConfig", "SampleSpec", "echo_config", "generate_dataset",
    "merge_manifests", "parse_config", "read_manifest", "sweep_expand", "sweep_size",
    "validate_config", "write_manifest",
]
