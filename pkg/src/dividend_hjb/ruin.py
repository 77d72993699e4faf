"""Finite-time ruin and survival probabilities.

Closed form for a fixed drift (reflection principle), and implicit-Euler
solvers of the survival equation ``dPhi/dt = L Phi`` for the uncontrolled
surplus ``Z`` and for the surplus ``X`` under a threshold strategy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import csv
import io
import json
import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg as spla
from scipy.special import ndtr

from .grid import Grid2D, GridField
from .hjb import SolverError, SolverTolerances, generator_matrix
from .model import ModelParams, validate
from .policy import ThresholdCurve, threshold_policy


def ruin_closed_form(theta_bar: float, sigma: float, z: float, t: float) -> float:
    """P(inf_{s<=t} Z_s <= 0) for ``Z = z + theta_bar s + sigma W``.

    ``z <= 0`` is ruin at time zero and returns 1.
    """
    if z <= 0.0:
        return 1.0
    if t <= 0.0:
        raise ValueError("t must be positive")
    st = sigma * math.sqrt(t)
    first = ndtr(-(theta_bar * t + z) / st)
    expo = -2.0 * theta_bar * z / sigma**2
    second = math.exp(expo) * ndtr((theta_bar * t - z) / st) if expo < 700.0 else math.inf
    return float(min(first + second, 1.0))


def mixture_ruin(params: ModelParams, z: float, t: float, q: float | None = None) -> float:
    """Ruin probability of the uncontrolled surplus under prior ``q`` on theta1."""
    q = params.prior_q if q is None else q
    return (q * ruin_closed_form(params.theta1, params.sigma, z, t)
            + (1.0 - q) * ruin_closed_form(params.theta2, params.sigma, z, t))


@dataclass
class RuinSurface:
    """Survival probability Phi on the grid at increasing times."""

    times: np.ndarray
    fields: list[GridField] = field(repr=False)
    max_increase: float = 0.0
    controlled: bool = False

    def survival(self, k: int = -1) -> GridField:
        return self.fields[k]

    def ruin(self, k: int = -1) -> GridField:
        f = self.fields[k]
        return GridField(f.grid, 1.0 - f.values)

    def probe(self, points, k: int = -1) -> list[dict]:
        f = self.fields[k]
        return [{"x": float(x), "vartheta": float(t),
                 "ruin_probability": float(1.0 - f.interpolate(x, t))} for x, t in points]

    def to_csv(self, path=None) -> str:
        """Rows (t, x, vartheta, Phi) for every stored time slice."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t [time]", "x [currency]", "vartheta [currency/time]", "Phi [probability]"])
        for t, f in zip(self.times, self.fields):
            X, T = f.grid.mesh()
            for x, th, v in zip(X.ravel(), T.ravel(), f.values.ravel()):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(th)), repr(float(v))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def probes_json(self, points) -> str:
        return json.dumps({"t": float(self.times[-1]), "controlled": self.controlled,
                           "probes": self.probe(points)}, indent=2, sort_keys=True)


def solve_survival_pde(params: ModelParams, grid: Grid2D, t_end: float, nt: int,
                       controlled: ThresholdCurve | None = None,
                       tols: SolverTolerances = SolverTolerances(),
                       snapshots: int = 11, bound_tol: float = 1e-8) -> RuinSurface:
    """Backward-Euler solve of the survival equation up to ``t_end``.

    Initial data is 1 at every node with ``x > 0`` and 0 at ``x = 0``;
    ``Phi(t, 0, .) = 0`` and ``Phi(t, B, .) = 1``.  The edge rows
    ``vartheta = theta_i`` carry the one-dimensional operator of the fixed
    drift, so they are advanced by the same time discretisation without
    coupling to the interior.  With ``controlled`` the drift is
    ``vartheta - u^b`` for the threshold strategy ``b``.

    Raises :class:`SolverError` if a step leaves ``[-bound_tol, 1 + bound_tol]``.
    """
    validate(params)
    if t_end < 0.0 or nt < 1:
        raise ValueError("need t_end >= 0 and nt >= 1")
    drift = np.broadcast_to(grid.thetas[None, :], grid.shape).copy()
    if controlled is not None:
        drift = drift - threshold_policy(grid, controlled, params.kmax).values

    phi = np.ones(grid.shape)
    phi[0, :] = 0.0
    times = [0.0]
    fields = [GridField(grid, phi.copy())]
    if t_end == 0.0:
        return RuinSurface(np.array(times), fields, 0.0, controlled is not None)

    dt = t_end / nt
    gen = generator_matrix(params, grid, drift, tols.cross, tols.drift)
    dirichlet = np.zeros(grid.shape)
    dirichlet[0, :] = 1.0
    dirichlet[-1, :] = 1.0
    dmask = dirichlet.ravel()
    # Dirichlet rows of gen are empty, so they reduce to identity rows here.
    lhs = sp.identity(grid.size, format="csr") - dt * (sp.diags(1.0 - dmask) @ gen)
    lu = spla.splu(sp.csc_matrix(lhs))
    bvals = np.zeros(grid.shape)
    bvals[-1, :] = 1.0
    bvals = bvals.ravel()

    save_at = set(np.unique(np.linspace(0, nt, max(snapshots, 2)).round().astype(int)).tolist())
    cur = phi.ravel()
    max_inc = 0.0
    for k in range(1, nt + 1):
        rhs = np.where(dmask > 0, bvals, cur)
        nxt = lu.solve(rhs)
        if not np.all(np.isfinite(nxt)):
            raise SolverError("non-finite survival probability")
        lo, hi = nxt.min(), nxt.max()
        if lo < -bound_tol or hi > 1.0 + bound_tol:
            raise SolverError(f"step {k}: survival probability left [0, 1] "
                              f"(min {lo:.3e}, max {hi:.3e})")
        max_inc = max(max_inc, float(np.max(nxt - cur)))
        cur = nxt
        if k in save_at:
            times.append(k * dt)
            fields.append(GridField(grid, cur.copy()))
    return RuinSurface(np.array(times), fields, max_inc, controlled is not None)
