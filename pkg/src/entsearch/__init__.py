"""Stochastic entanglement-configuration search for dressed variational quantum classifiers."""
from .entanglement import (
    Constrained,
    EntanglementMatrix,
    SemiConstrained,
    TopologyKind,
    Unconstrained,
)
from .kernels import active as _active_backend

__version__ = "0.1.0"

BACKEND = _active_backend.name

__all__ = [
    "BACKEND",
    "Constrained",
    "EntanglementMatrix",
    "SemiConstrained",
    "TopologyKind",
    "Unconstrained",
]
