"""Bayesian dividend maximization with an unobservable two-point drift.

Numerical toolkit for the filtered control problem: drift filter, closed-form
full-information solution, policy iteration for the HJB equation on a
nonuniform grid, threshold strategies, Monte Carlo and finite-time ruin.
"""

from .model import ModelParams, ParameterError, State, validate
from .classical import (
    ClassicalSolution,
    classical_value,
    compute_classical,
    decay_rate_lambda,
    domain_bound,
)

__all__ = [
    "ModelParams",
    "ParameterError",
    "State",
    "validate",
    "ClassicalSolution",
    "classical_value",
    "compute_classical",
    "decay_rate_lambda",
    "domain_bound",
]

__version__ = "0.1.0"
