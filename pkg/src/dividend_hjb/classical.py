"""Full-information solution for a known, fixed drift.

For a fixed drift the optimal strategy pays at rate K above a level ``bbar``
and nothing below it; the value function is a sum of exponentials on each
side of ``bbar``.  These closed forms serve as boundary data on the edges
``vartheta = theta_i`` and as an analytic oracle for the numerical solvers.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .model import ModelParams, validate


@dataclass(frozen=True)
class ClassicalSolution:
    theta: float
    alpha1: float
    alpha2: float
    beta2: float
    a1: float
    a2: float
    bbar: float
    b2: float


def _drift(params: ModelParams, which) -> float:
    if which in (1, "theta1"):
        return params.theta1
    if which in (2, "theta2"):
        return params.theta2
    raise ValueError(f"drift selector must be 1 or 2, got {which!r}")


def compute_classical(params: ModelParams, which=1) -> ClassicalSolution:
    """Closed-form parameters for drift ``theta_which``.

    ``which`` selects theta1 (``1``) or theta2 (``2``).
    """
    validate(params)
    theta = _drift(params, which)
    s2 = params.sigma**2
    delta, k = params.delta, params.kmax

    root = math.sqrt(theta**2 + 2.0 * s2 * delta)
    alpha1 = (-theta + root) / s2
    alpha2 = (theta + root) / s2
    beta2 = (theta - k + math.sqrt((theta - k) ** 2 + 2.0 * s2 * delta)) / s2

    gap = k / delta - 1.0 / beta2
    a1 = (alpha2 * gap + 1.0) / (alpha1 + alpha2)
    a2 = (alpha1 * gap - 1.0) / (alpha1 + alpha2)

    # a2 >= 0 means -a1/a2 <= 0: the log is undefined and the level is clamped to 0.
    if a2 < 0.0:
        bbar = max(math.log(-a1 / a2) / (alpha1 + alpha2), 0.0)
    else:
        bbar = 0.0
    b2 = -1.0 / beta2 if bbar > 0.0 else -k / delta
    return ClassicalSolution(theta, alpha1, alpha2, beta2, a1, a2, bbar, b2)


def classical_value(sol: ClassicalSolution, params: ModelParams, x):
    """Value of the optimal full-information strategy at surplus ``x >= 0``.

    Accepts a scalar or an array; returns the same shape.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0.0):
        raise ValueError("classical_value is defined for x >= 0 only")
    d = xa - sol.bbar
    upper = sol.b2 * np.exp(-sol.beta2 * np.maximum(d, 0.0)) + params.payout_cap
    if sol.bbar > 0.0:
        dl = np.minimum(d, 0.0)
        lower = sol.a1 * np.exp(sol.alpha1 * dl) + sol.a2 * np.exp(-sol.alpha2 * dl)
        out = np.where(d < 0.0, lower, upper)
    else:
        out = upper
    return float(out) if np.ndim(out) == 0 else out


def classical_derivative(sol: ClassicalSolution, params: ModelParams, x):
    """dV/dx of :func:`classical_value` (right derivative at ``bbar``)."""
    xa = np.asarray(x, dtype=float)
    d = xa - sol.bbar
    upper = -sol.beta2 * sol.b2 * np.exp(-sol.beta2 * np.maximum(d, 0.0))
    if sol.bbar > 0.0:
        dl = np.minimum(d, 0.0)
        lower = sol.a1 * sol.alpha1 * np.exp(sol.alpha1 * dl) - sol.a2 * sol.alpha2 * np.exp(
            -sol.alpha2 * dl
        )
        out = np.where(d < 0.0, lower, upper)
    else:
        out = upper
    return float(out) if np.ndim(out) == 0 else out


def decay_rate_lambda(params: ModelParams) -> float:
    """Exponent lambda with E[exp(-delta * tau_min)] = exp(-lambda * x).

    ``tau_min`` is the ruin time when paying K under the worst drift theta1,
    so ``(K/delta) * (1 - exp(-lambda x))`` is a lower bound for the value.
    """
    validate(params)
    s2 = params.sigma**2
    m = params.theta1 - params.kmax
    return (m + math.sqrt(m * m + 2.0 * params.delta * s2)) / s2


def domain_bound(params: ModelParams, tail_tol: float = 0.01) -> float:
    """Truncation level B with exp(-lambda B) <= tail_tol, rounded up to cents."""
    if not 0.0 < tail_tol < 1.0:
        raise ValueError("tail_tol must lie in (0, 1)")
    raw = math.log(1.0 / tail_tol) / decay_rate_lambda(params)
    # guard against 7.4600000001 -> 7.47 from round-off
    return math.ceil(round(raw * 100.0, 9)) / 100.0


def classical_pair(params: ModelParams) -> tuple[ClassicalSolution, ClassicalSolution]:
    return compute_classical(params, 1), compute_classical(params, 2)
