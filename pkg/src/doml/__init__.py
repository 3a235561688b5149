"""Distributed online multitask learning with a master/worker protocol."""

from .core import CompoundInstance, CompoundWeight, HyperParams, InteractionMatrix, SparseGradient
from .experiment import ConfigError, ExperimentConfig, ExperimentResult, run_experiment

__all__ = [
    "CompoundInstance",
    "CompoundWeight",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "HyperParams",
    "InteractionMatrix",
    "SparseGradient",
    "run_experiment",
]
__version__ = "0.1.0"
