"""Principal eigentriplets, Harris-type certificates and ergodic measurements
for discretized positive semigroups."""

__version__ = "0.1.0"

from .operators import PositiveGenerator, WeightedGrid, adjoint, bracket, pairing, weighted_norm
from .eigen import Eigentriplet, SolverConfig, dense_spectrum_oracle, principal_triplet
from .models import PRESETS, build

__all__ = [
    "PositiveGenerator",
    "WeightedGrid",
    "adjoint",
    "bracket",
    "pairing",
    "weighted_norm",
    "Eigentriplet",
    "SolverConfig",
    "dense_spectrum_oracle",
    "principal_triplet",
    "PRESETS",
    "build",
]
