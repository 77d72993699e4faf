"""Problem constants and the shared state type."""

from __future__ import annotations

from dataclasses import dataclass
import math


class ParameterError(ValueError):
    """Raised when a parameter set violates a standing assumption."""


@dataclass(frozen=True)
class ModelParams:
    """Constants of the dividend problem.

    Attributes
    ----------
    theta1, theta2 : float
        The two possible drift values, ``theta1 < theta2``.
    sigma : float
        Volatility of the surplus.
    delta : float
        Discount rate.
    kmax : float
        Maximal dividend rate K.
    prior_q : float
        Prior probability that the drift equals ``theta1``.
    """

    theta1: float = 1.0
    theta2: float = 2.0
    sigma: float = 1.0
    delta: float = 0.5
    kmax: float = 1.5
    prior_q: float = 0.5

    @property
    def payout_cap(self) -> float:
        """K/delta, the value of paying K forever."""
        return self.kmax / self.delta

    @property
    def prior_mean(self) -> float:
        return self.prior_q * self.theta1 + (1.0 - self.prior_q) * self.theta2

    def replace(self, **changes) -> "ModelParams":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return ModelParams(**fields)


@dataclass(frozen=True)
class State:
    """Surplus ``x`` and filtered drift estimate ``vartheta``."""

    x: float
    vartheta: float


_CHECKS = (
    ("theta1 >= theta2", lambda p: p.theta1 < p.theta2),
    ("sigma must be positive", lambda p: p.sigma > 0),
    ("delta must be positive", lambda p: p.delta > 0),
    ("kmax must be positive", lambda p: p.kmax > 0),
    ("prior_q must lie in [0, 1]", lambda p: 0.0 <= p.prior_q <= 1.0),
)


def validate(params: ModelParams) -> ModelParams:
    """Return ``params`` unchanged if every standing assumption holds.

    Raises
    ------
    ParameterError
        Naming the first violated condition, e.g. ``"theta1 >= theta2"``.
    """
    for name in ("theta1", "theta2", "sigma", "delta", "kmax", "prior_q"):
        value = getattr(params, name)
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ParameterError(f"{name} must be a finite number")
    for message, ok in _CHECKS:
        if not ok(params):
            raise ParameterError(message)
    return params


def check_state(params: ModelParams, state: State) -> None:
    if not params.theta1 <= state.vartheta <= params.theta2:
        raise ParameterError(
            f"vartheta={state.vartheta} outside [{params.theta1}, {params.theta2}]"
        )
