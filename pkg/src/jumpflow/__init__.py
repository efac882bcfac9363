"""Backward equations driven by marked point processes, solved level by level."""

__version__ = "0.1.0"

from .bsde import (GeneratorSpec, LevelFunction, PathSolution, PicardError, Solver, SpecError,
                   TerminalSpec, bsde_residual, solve_bounded, solve_truncated, uniqueness_gap)
from .mpp import History, MarkKernel, ModelError, MppModel, Path, simulate_path

__all__ = [
    "__version__", "GeneratorSpec", "LevelFunction", "PathSolution", "PicardError", "Solver",
    "SpecError", "TerminalSpec", "bsde_residual", "solve_bounded", "solve_truncated",
    "uniqueness_gap", "History", "MarkKernel", "ModelError", "MppModel", "Path", "simulate_path",
]
