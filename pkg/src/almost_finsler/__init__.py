"""Numerical toolkit for almost and partial Finsler norms.

The package evaluates Finsler norms with third-order forward-mode jets,
assembles the characteristic tensors built from them, and checks the
identities these tensors satisfy on Randers, a, b and general bipartite
spaces.
"""
from .errors import (AlignmentError, ConfigError, DimensionError, FiniteDifferenceError,
                     FinslerError, SingularKappaError, SlitProximityError, SpecError)
from .geometry import EvalPoint, Family, FiberNorm, Field, NormJets, NormSpec
from .jets import Jet3
from .tensors import TensorSet, compute_tensors

__version__ = "0.1.0"

__all__ = [
    "AlignmentError", "ConfigError", "DimensionError", "EvalPoint", "Family", "FiberNorm",
    "Field", "FiniteDifferenceError", "FinslerError", "Jet3", "NormJets", "NormSpec",
    "SingularKappaError", "SlitProximityError", "SpecError", "TensorSet", "compute_tensors",
]
