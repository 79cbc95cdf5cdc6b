"""Adaptive importance sampling with cheap emulators of a costly target."""
from .core import (Box, ConfigError, DegenerateWeightsError, SupportError, TargetDensity,
                   WeightedParticleSet, effective_sample_size, evidence_estimate,
                   normalize_log_weights, normalize_weights)
from .emulator_nn import NnEmulator, NodeSet, add_nodes, build_nn, eval_nn
from .emulator_gp import GpEmulator, GpKernel, eval_gp, fit_gp
from .driver import RadisConfig, RadisOutput, run_deep_radis, run_radis, run_radis_lais
from .records import RunRecord

__version__ = "0.1.0"

__all__ = [
    "Box", "ConfigError", "DegenerateWeightsError", "SupportError", "TargetDensity",
    "WeightedParticleSet", "effective_sample_size", "evidence_estimate",
    "normalize_log_weights", "normalize_weights", "NnEmulator", "NodeSet", "add_nodes",
    "build_nn", "eval_nn", "GpEmulator", "GpKernel", "eval_gp", "fit_gp", "RadisConfig",
    "RadisOutput", "run_deep_radis", "run_radis", "run_radis_lais", "RunRecord",
]
