"""Regularized stochastic Allen-Cahn equation with a logarithmic potential.

Spectral Galerkin discretization, stabilized semi-implicit time stepping and a
Monte Carlo harness for convergence, energy and maximum-bound studies.
"""

__version__ = "0.1.0"

from .potential import PotentialParams, BoundFunctionalParams
from .spectral import Field, SpectralBasis
from .noise import NoisePath, NoiseSpec
from .solver import ConfigError, SolverConfig, run_trajectory
from .harness import ExperimentConfig, run_ensemble

__all__ = [
    "BoundFunctionalParams",
    "ConfigError",
    "ExperimentConfig",
    "Field",
    "NoisePath",
    "NoiseSpec",
    "PotentialParams",
    "SolverConfig",
    "SpectralBasis",
    "run_ensemble",
    "run_trajectory",
]
