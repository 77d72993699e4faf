"""Bayes filter for the hidden two-point drift.

Given the prior ``q = P(theta = theta1)`` and the uncontrolled surplus ``zbar``
observed at time ``t`` (started from ``z0``), the posterior odds of theta2
against theta1 are

    f = (1 - q)/q * exp((theta2 - theta1)(zbar - z0 - (theta1 + theta2) t / 2) / sigma^2)

and the drift estimate is ``theta1 + (theta2 - theta1) f / (1 + f)``.  All
evaluation happens on log-odds so long horizons do not overflow.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import expit

from .model import ModelParams


@dataclass(frozen=True)
class FilterState:
    t: float
    zbar: float
    z0: float = 0.0

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("t must be nonnegative")


def log_odds(params: ModelParams, fs: FilterState) -> float:
    """Natural log of :func:`posterior_odds`; ``-inf``/``+inf`` for q = 1/0."""
    q = params.prior_q
    if q == 1.0:
        return -math.inf
    if q == 0.0:
        return math.inf
    gap = params.theta2 - params.theta1
    mid = 0.5 * (params.theta1 + params.theta2)
    return math.log((1.0 - q) / q) + gap * (fs.zbar - fs.z0 - mid * fs.t) / params.sigma**2


def posterior_odds(params: ModelParams, fs: FilterState) -> float:
    """Posterior odds P(theta2 | Z_t) / P(theta1 | Z_t)."""
    lo = log_odds(params, fs)
    if lo > 709.0:
        return math.inf
    return math.exp(lo)


def drift_estimate(params: ModelParams, fs: FilterState) -> float:
    """Posterior mean of the drift, always inside [theta1, theta2]."""
    lo = log_odds(params, fs)
    if lo == math.inf:
        return params.theta2
    if lo == -math.inf:
        return params.theta1
    return params.theta1 + (params.theta2 - params.theta1) * float(expit(lo))


def drift_estimate_array(params: ModelParams, t, zbar, z0=0.0):
    """Vectorised :func:`drift_estimate` over arrays of ``t`` and ``zbar``."""
    q = params.prior_q
    if q in (0.0, 1.0):
        fill = params.theta2 if q == 0.0 else params.theta1
        return np.full(np.broadcast(np.asarray(t), np.asarray(zbar)).shape, fill)
    gap = params.theta2 - params.theta1
    mid = 0.5 * (params.theta1 + params.theta2)
    lo = math.log((1.0 - q) / q) + gap * (np.asarray(zbar) - z0 - mid * np.asarray(t)) / params.sigma**2
    return params.theta1 + gap * expit(lo)


def invert_estimate(params: ModelParams, t: float, vartheta: float, z0: float = 0.0) -> float:
    """Observation level ``zbar`` at which the filter reports ``vartheta`` at time ``t``."""
    q = params.prior_q
    th1, th2 = params.theta1, params.theta2
    if not 0.0 < q < 1.0:
        raise ValueError("inversion needs a non-degenerate prior 0 < q < 1")
    if not th1 < vartheta < th2:
        raise ValueError("vartheta must lie strictly inside (theta1, theta2)")
    ratio = math.log((vartheta - th1) / (th2 - vartheta)) + math.log(q / (1.0 - q))
    return params.sigma**2 * ratio / (th2 - th1) + z0 + 0.5 * (th1 + th2) * t


def posterior_q(params: ModelParams, fs: FilterState) -> float:
    """Posterior probability of theta1; usable as the prior of a later filter."""
    lo = log_odds(params, fs)
    if lo == math.inf:
        return 0.0
    if lo == -math.inf:
        return 1.0
    return float(expit(-lo))


def theta_diffusion(params: ModelParams, vartheta):
    """Diffusion coefficient (vartheta - theta1)(theta2 - vartheta)/sigma of the estimate."""
    v = np.asarray(vartheta, dtype=float)
    if np.any(v < params.theta1) or np.any(v > params.theta2):
        raise ValueError("vartheta outside [theta1, theta2]")
    out = (v - params.theta1) * (params.theta2 - v) / params.sigma
    return float(out) if np.ndim(out) == 0 else out


def prior_for_estimate(params: ModelParams, vartheta: float) -> float:
    """The prior q whose mean equals ``vartheta``."""
    return (params.theta2 - vartheta) / (params.theta2 - params.theta1)
