"""Conic programming layer: program container, rsoc embedding and an IPM solver."""

from .program import ConeBlock, ConicProgram, ConicSolution, in_rsoc, in_soc, rsoc_to_soc
from .solver import SolverOptions, solve

__all__ = [
    "ConeBlock",
    "ConicProgram",
    "ConicSolution",
    "SolverOptions",
    "in_rsoc",
    "in_soc",
    "rsoc_to_soc",
    "solve",
]
