"""Time-marching LCU circuits for the 1-D advection-diffusion equation.

Modules: linalg (matrix helpers), fdmodel (finite-difference operators and
references), lcu (unitary decompositions and Neumann series), qsim
(statevector simulator with shot sampling and bit-flip noise), tmcqc (the six
circuit families), analysis (extrapolation, observables, fits), cli.
"""
__version__ = "0.1.0"

from ._backend import NAME as BACKEND
from .fdmodel import FlowProblem, StabilityError, analytical_solution, classical_march
from .lcu import (CeilingError, ConvergenceError, LcuDecomposition, TermSet, decompose,
                  decompose_four, decompose_two, neumann_termset, reconstruct)
from .tmcqc import MarchPlan, MarchResult, PlanError, Shots, run, run_richardson
from .analysis import ExtrapolationPair, FitResult, fit_power_law, mse, richardson

__all__ = [
    "BACKEND", "FlowProblem", "StabilityError", "analytical_solution", "classical_march",
    "CeilingError", "ConvergenceError", "LcuDecomposition", "TermSet", "decompose",
    "decompose_four", "decompose_two", "neumann_termset", "reconstruct",
    "MarchPlan", "MarchResult", "PlanError", "Shots", "run", "run_richardson",
    "ExtrapolationPair", "FitResult", "fit_power_law", "mse", "richardson",
]
