"""Threshold strategies: representation, evaluation and optimality checks."""

from __future__ import annotations

from dataclasses import dataclass, field
import csv
import io
import logging

import numpy as np

from .classical import compute_classical
from .grid import Grid2D, GridField
from .hjb import (
    INTERIOR,
    PolicyField,
    SolverTolerances,
    effective_derivative,
    evaluate_policy,
    row_kinds,
)
from .model import ModelParams

log = logging.getLogger(__name__)


class NonThresholdPolicyError(ValueError):
    def __init__(self, rows):
        self.rows = list(rows)
        super().__init__(f"policy is not of threshold type in theta-rows {self.rows[:20]}")


@dataclass
class ThresholdCurve:
    """Samples ``(vartheta_j, b(vartheta_j))`` of a threshold level, linear in between."""

    thetas: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)
        self.levels = np.asarray(self.levels, dtype=float)
        if self.thetas.shape != self.levels.shape or self.thetas.ndim != 1:
            raise ValueError("thetas and levels must be 1-d arrays of equal length")
        if np.any(np.diff(self.thetas) <= 0.0):
            raise ValueError("curve abscissae must be strictly increasing")

    def __call__(self, vartheta):
        out = np.interp(vartheta, self.thetas, self.levels)
        return float(out) if np.ndim(out) == 0 else out

    @classmethod
    def constant(cls, grid: Grid2D, level: float) -> "ThresholdCurve":
        return cls(grid.thetas.copy(), np.full(len(grid.thetas), float(level)))

    def endpoint_error(self, params: ModelParams) -> float:
        b1 = compute_classical(params, 1).bbar
        b2 = compute_classical(params, 2).bbar
        return max(abs(self.levels[0] - b1), abs(self.levels[-1] - b2))

    def pinned(self, params: ModelParams) -> "ThresholdCurve":
        """Copy with the endpoints set to the classical thresholds."""
        levels = self.levels.copy()
        levels[0] = compute_classical(params, 1).bbar
        levels[-1] = compute_classical(params, 2).bbar
        return ThresholdCurve(self.thetas.copy(), levels)

    def to_csv(self, params: ModelParams, path=None) -> str:
        """Columns: vartheta, b(vartheta), and the classical levels interpolated linearly."""
        b1 = compute_classical(params, 1).bbar
        b2 = compute_classical(params, 2).bbar
        w = (self.thetas - params.theta1) / (params.theta2 - params.theta1)
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["vartheta [currency/time]", "b [currency]", "classical_interp [currency]"])
        for t, b, c in zip(self.thetas, self.levels, (1 - w) * b1 + w * b2):
            wr.writerow([repr(float(t)), repr(float(b)), repr(float(c))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def initial_curve(params: ModelParams, grid: Grid2D) -> ThresholdCurve:
    """Straight line from the classical level at theta1 to the one at theta2."""
    b1 = compute_classical(params, 1).bbar
    b2 = compute_classical(params, 2).bbar
    w = (grid.thetas - params.theta1) / (params.theta2 - params.theta1)
    return ThresholdCurve(grid.thetas.copy(), (1.0 - w) * b1 + w * b2)


def threshold_policy(grid: Grid2D, curve: ThresholdCurve, kmax: float) -> PolicyField:
    """Pay ``kmax`` at nodes with ``x >= b(vartheta)``, nothing below."""
    if curve.thetas.shape == grid.thetas.shape and np.array_equal(curve.thetas, grid.thetas):
        levels = curve.levels
    else:
        levels = curve(grid.thetas)
    pay = grid.xs[:, None] >= levels[None, :]
    return PolicyField(grid, np.where(pay, kmax, 0.0), kmax=kmax)


def extract_threshold(params: ModelParams, policy: GridField, grid: Grid2D, value: GridField,
                      scheme: str = "hybrid", pin_endpoints: bool = True) -> ThresholdCurve:
    """Threshold level per drift row of a single-switch policy.

    The level is placed where the greedy derivative ``D_eff`` of ``value``
    crosses 1 inside the switch cell (linear interpolation), so it always
    lies in ``(x_{i-1}, x_i]`` for first paying node ``i``.  Rows that pay
    everywhere get level 0, rows that never pay get ``B``.
    """
    pay = np.asarray(policy.values) > 0.0
    d = effective_derivative(params, grid, value.values, scheme)
    xs = grid.xs
    levels = np.empty(len(grid.thetas))
    bad = []
    for j in range(len(grid.thetas)):
        col = pay[:, j]
        if np.count_nonzero(np.diff(col.astype(np.int8)) != 0) > 1 or (col[0] and not col.all()):
            bad.append(j)
            continue
        if col.all():
            levels[j] = 0.0
            continue
        if not col.any():
            levels[j] = xs[-1]
            continue
        i = int(np.argmax(col))
        lo, hi = xs[i - 1], xs[i]
        dl, dh = d[i - 1, j], d[i, j]
        if dl > 1.0 >= dh:
            b = lo + (dl - 1.0) / (dl - dh) * (hi - lo)
        else:
            b = hi
        b = min(b, hi)
        if b <= lo:
            b = np.nextafter(lo, np.inf)
        levels[j] = b
    if bad:
        raise NonThresholdPolicyError(bad)
    curve = ThresholdCurve(grid.thetas.copy(), np.clip(levels, 0.0, xs[-1]))
    return curve.pinned(params) if pin_endpoints else curve


@dataclass
class AdmissibilityReport:
    admissible: bool
    min_gap: float
    flagged_thetas: list[float]
    continuous: bool
    max_jump: float
    nonnegative: bool
    endpoint_error: float
    smoothness_verified: bool = False
    caveats: list[str] = field(default_factory=list)


def forbidden_slope(params: ModelParams, vartheta):
    """Slope sigma^2 / ((theta2 - vartheta)(vartheta - theta1)) at which the diffusion
    runs parallel to the threshold curve."""
    v = np.asarray(vartheta, dtype=float)
    return params.sigma**2 / ((params.theta2 - v) * (v - params.theta1))


def check_admissible(params: ModelParams, curve: ThresholdCurve, tol: float = 1e-6,
                     jump_tol: float = 0.1) -> AdmissibilityReport:
    """Sampled check of the sufficient conditions for a threshold strategy to be admissible.

    Compares the finite-difference slope with the forbidden slope at interior
    samples where ``b > 0``.  Smoothness (C^5) cannot be decided from samples
    and is reported as unverified.
    """
    if len(curve.thetas) < 3:
        raise ValueError("need at least 3 samples")
    slope = np.gradient(curve.levels, curve.thetas)
    inner = np.zeros(len(curve.thetas), dtype=bool)
    inner[1:-1] = True
    active = inner & (curve.levels > 0.0)
    gap = np.full(len(curve.thetas), np.inf)
    gap[active] = np.abs(slope[active] - forbidden_slope(params, curve.thetas[active]))
    flagged = curve.thetas[gap < tol].tolist()
    min_gap = float(gap.min()) if active.any() else float("inf")
    max_jump = float(np.max(np.abs(np.diff(curve.levels))))
    nonneg = bool(np.all(curve.levels >= 0.0))
    continuous = max_jump <= jump_tol
    ep = curve.endpoint_error(params)
    caveats = ["C^5 smoothness not verifiable from samples"]
    if np.any(curve.levels[inner] == 0.0):
        caveats.append("curve touches b = 0; kinks there are tolerated (absorbed at ruin)")
    if ep > 1e-9:
        caveats.append(f"endpoints differ from classical thresholds by {ep:.3g}")
    return AdmissibilityReport(
        admissible=not flagged and continuous and nonneg,
        min_gap=min_gap,
        flagged_thetas=flagged,
        continuous=continuous,
        max_jump=max_jump,
        nonnegative=nonneg,
        endpoint_error=ep,
        caveats=caveats,
    )


def eval_policy(params: ModelParams, grid: Grid2D, curve: ThresholdCurve,
                tols: SolverTolerances = SolverTolerances()) -> GridField:
    """Value of the threshold strategy: one linear solve, no iteration."""
    value, _, _ = evaluate_policy(params, grid, threshold_policy(grid, curve, params.kmax), tols)
    return value


@dataclass
class OptimalityReport:
    violations: int
    worst_margin: float
    checked: int
    offending: list[tuple[float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.violations == 0


def check_optimality(params: ModelParams, grid: Grid2D, jfield: GridField,
                     curve: ThresholdCurve, tol: float = 1e-6,
                     scheme: str = "hybrid") -> OptimalityReport:
    """Node-wise check of ``D_x J <= 1  <=>  x >= b(vartheta)``.

    Paying nodes (``x >= b``) must have ``D_eff J <= 1 + tol``; nodes more
    than one cell below the level must have ``D_eff J >= 1 - tol``.  The
    cell just below the level is left unconstrained.  Only interior nodes
    are checked.  ``worst_margin`` is the largest signed excess (positive
    beyond ``tol`` means a violation).
    """
    d = effective_derivative(params, grid, jfield.values, scheme)
    xs = grid.xs[:, None]
    b = curve(grid.thetas)[None, :]
    cell = np.empty_like(grid.xs)
    cell[:-1] = np.diff(grid.xs)
    cell[-1] = cell[-2]
    interior = (row_kinds(grid) == INTERIOR).reshape(grid.shape)
    pay_side = interior & (xs >= b)
    wait_side = interior & (xs < b - cell[:, None])
    margin = np.full(grid.shape, -np.inf)
    margin[pay_side] = d[pay_side] - 1.0
    margin[wait_side] = 1.0 - d[wait_side]
    bad = margin > tol
    ii, jj = np.nonzero(bad)
    offending = [(float(grid.xs[i]), float(grid.thetas[j])) for i, j in zip(ii[:50], jj[:50])]
    checked = int(pay_side.sum() + wait_side.sum())
    worst = float(margin[pay_side | wait_side].max()) if checked else float("-inf")
    return OptimalityReport(int(bad.sum()), worst, checked, offending)


def shape_diagnostics(params: ModelParams, curve: ThresholdCurve) -> list[str]:
    """Warnings where the curve departs from the conjectured shape; never raises.

    Conjectured: the level lies between the two classical thresholds, and is
    increasing/concave (decreasing/convex) when the classical level at
    theta1 is below (above) the one at theta2.
    """
    b1 = compute_classical(params, 1).bbar
    b2 = compute_classical(params, 2).bbar
    lo, hi = min(b1, b2), max(b1, b2)
    lv = curve.levels
    out = []
    slack = 1e-9
    if np.any(lv < lo - slack) or np.any(lv > hi + slack):
        out.append(f"level leaves the classical bracket [{lo:.6g}, {hi:.6g}]: "
                   f"range [{lv.min():.6g}, {lv.max():.6g}]")
    slope = np.diff(lv) / np.diff(curve.thetas)
    curv = np.diff(slope)
    if 0.0 < b1 < b2:
        if np.any(slope <= 0.0):
            out.append("expected strictly increasing level")
        if np.any(curv >= 0.0):
            out.append("expected strictly concave level")
    elif b1 > b2 > 0.0:
        if np.any(slope >= 0.0):
            out.append("expected strictly decreasing level")
        if np.any(curv <= 0.0):
            out.append("expected strictly convex level")
    for msg in out:
        log.warning("threshold shape: %s", msg)
    return out
