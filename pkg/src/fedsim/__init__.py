"""Deterministic simulator for sequential versus parallel federated training."""

from .objectives import (
    ConfigurationError,
    FederationSpec,
    NoiseModel,
    NoUniqueMinimizerError,
    QuadraticClient,
    global_minimizer,
    heterogeneity,
    preset,
)
from .algorithms import Algorithm, Averaging, RunConfig, RunResult, run

__version__ = "0.1.0"
