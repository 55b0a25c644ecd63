"""Entropy-variable implicit Euler solver and verification harness for
reaction-cross-diffusion systems of Shigesada-Kawasaki-Teramoto type."""

__version__ = "0.1.0"

from .grid import Field, Grid
from .hypotheses import HypothesisReport, classify_hypotheses
from .model import DriftSpec, EntropyParams, Reaction, ReactionSpec, SystemSpec
from .scheme import NewtonControls, NonConvergence, SchemeParams, Trajectory, march

__all__ = [
    "DriftSpec",
    "EntropyParams",
    "Field",
    "Grid",
    "HypothesisReport",
    "NewtonControls",
    "NonConvergence",
    "Reaction",
    "ReactionSpec",
    "SchemeParams",
    "SystemSpec",
    "Trajectory",
    "classify_hypotheses",
    "march",
]
