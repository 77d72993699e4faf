"""Finite-difference HJB solver by policy iteration.

The generator of the filtered system is

    L V = vartheta V_x + sigma^2/2 V_xx + c V_{x vartheta} + c^2/(2 sigma^2) V_{vartheta vartheta},
    c(vartheta) = (vartheta - theta1)(theta2 - vartheta),

and for a fixed bang-bang policy ``u`` each policy evaluation solves the
linear system ``(L^G - delta) V - u D_x V = -u`` with Dirichlet data on the
four sides of the rectangle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg as spla

from .classical import classical_value, compute_classical
from .grid import Grid2D, GridField
from .model import ModelParams, validate

log = logging.getLogger(__name__)

INTERIOR, DIRICHLET_X0, DIRICHLET_XB, DIRICHLET_THETA_LO, DIRICHLET_THETA_HI = range(5)
ROW_KIND_NAMES = ("interior", "dirichlet-x0", "dirichlet-xB", "dirichlet-theta-lo",
                  "dirichlet-theta-hi")
CROSS_MODES = ("central", "tilted")
DRIFT_SCHEMES = ("hybrid", "upwind")
BACKWARD, CENTRAL, FORWARD = -1, 0, 1


class SolverError(RuntimeError):
    """Linear solve failure or a singular assembly."""


@dataclass
class PolicyField(GridField):
    """Bang-bang dividend rate on the grid: every value is 0 or ``kmax``."""

    kmax: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        bad = (self.values != 0.0) & (self.values != self.kmax)
        if np.any(bad):
            raise ValueError(f"{int(bad.sum())} policy values are neither 0 nor kmax")

    def paying(self) -> np.ndarray:
        return self.values == self.kmax


@dataclass
class DiscreteOperator:
    """CSR coefficient table, right-hand side and per-row classification."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    row_kind: np.ndarray

    def residual(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ np.ravel(values) - self.rhs

    def interior_residual_norm(self, values: np.ndarray) -> float:
        r = self.residual(values)
        mask = self.row_kind == INTERIOR
        return float(np.max(np.abs(r[mask]))) if mask.any() else 0.0

    def relative_residual(self, values: np.ndarray) -> float:
        """Interior residual scaled by ``|A|_inf |V|_inf + |rhs|_inf``."""
        v = np.ravel(values)
        scale = spla.norm(self.matrix, np.inf) * np.max(np.abs(v)) + np.max(np.abs(self.rhs))
        return self.interior_residual_norm(v) / scale if scale > 0 else 0.0

    def solve(self, rtol: float = 1e-10, direct_limit: int = 100_000) -> np.ndarray:
        """Solve with the unit Dirichlet rows eliminated, so boundary values are exact."""
        inner = self.row_kind == INTERIOR
        v = np.where(inner, 0.0, self.rhs)
        rows = self.matrix[np.flatnonzero(inner)]
        a_ii = rows[:, np.flatnonzero(inner)]
        a_ib = rows[:, np.flatnonzero(~inner)]
        v[inner] = solve_linear(a_ii, self.rhs[inner] - a_ib @ v[~inner], rtol, direct_limit)
        return v

    def negative_offdiagonals(self) -> int:
        """Count of negative off-diagonal entries in interior rows (0 for a monotone scheme)."""
        coo = self.matrix.tocoo()
        sel = (coo.row != coo.col) & (self.row_kind[coo.row] == INTERIOR) & (coo.data < -1e-14)
        return int(sel.sum())


@dataclass(frozen=True)
class SolverTolerances:
    max_iter: int = 50
    linear_rtol: float = 1e-10
    direct_limit: int = 100_000
    cross: str = "central"
    drift: str = "hybrid"


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    policy: PolicyField
    value: GridField
    residual: float
    policy_changes: list[int] = field(default_factory=list)
    relative_residual: float = 0.0

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "residual": self.residual,
            "relative_residual": self.relative_residual,
            "policy_changes": list(self.policy_changes),
            "n": len(self.value.grid.xs) - 1,
            "m": len(self.value.grid.thetas) - 1,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def cross_coefficient(params: ModelParams, thetas) -> np.ndarray:
    """c(vartheta) = (vartheta - theta1)(theta2 - vartheta), clipped at 0 on the edges."""
    t = np.asarray(thetas, dtype=float)
    return np.maximum((t - params.theta1) * (params.theta2 - t), 0.0)


def row_kinds(grid: Grid2D) -> np.ndarray:
    n1, m1 = grid.shape
    kind = np.full(grid.shape, INTERIOR, dtype=np.int8)
    kind[:, 0] = DIRICHLET_THETA_LO
    kind[:, -1] = DIRICHLET_THETA_HI
    kind[0, :] = DIRICHLET_X0
    kind[-1, :] = DIRICHLET_XB
    return kind.ravel()


def drift_stencil_choice(params: ModelParams, grid: Grid2D, drift: np.ndarray,
                         scheme: str = "hybrid") -> np.ndarray:
    """Per-node x-difference used for the drift term: BACKWARD, CENTRAL or FORWARD.

    ``upwind`` picks the one-sided difference by the sign of the drift.
    ``hybrid`` uses the second-order central difference wherever the two
    x-neighbour coefficients of ``b V_x + sigma^2/2 V_xx`` stay nonnegative
    (``b h+ <= sigma^2`` and ``-b h- <= sigma^2``) and falls back to upwind
    elsewhere.  End columns have no central stencil.
    """
    if scheme not in DRIFT_SCHEMES:
        raise ValueError(f"drift scheme must be one of {DRIFT_SCHEMES}")
    b = np.asarray(drift, dtype=float)
    choice = np.where(b >= 0.0, FORWARD, BACKWARD).astype(np.int8)
    choice[0] = FORWARD
    choice[-1] = BACKWARD
    if scheme == "hybrid":
        s2 = params.sigma**2
        hp = np.diff(grid.xs)[1:, None]
        hm = np.diff(grid.xs)[:-1, None]
        inner = b[1:-1]
        ok = (inner * hp <= s2) & (-inner * hm <= s2)
        choice[1:-1][ok] = CENTRAL
    return choice


def generator_matrix(params: ModelParams, grid: Grid2D, drift: np.ndarray,
                     cross: str = "central", scheme: str = "hybrid") -> sp.csr_matrix:
    """Discrete generator for rows ``0 < i < n`` (all drift nodes, edges included).

    ``drift`` has the grid's shape; its x-difference is chosen by
    :func:`drift_stencil_choice`.  On the edges ``vartheta = theta_i`` the
    mixed and drift-estimate terms vanish, leaving the one-dimensional
    operator.  Rows with ``i = 0`` or ``i = n`` are empty.
    """
    if cross not in CROSS_MODES:
        raise ValueError(f"cross mode must be one of {CROSS_MODES}")
    n1, m1 = grid.shape
    I, J = np.meshgrid(np.arange(1, n1 - 1), np.arange(m1), indexing="ij")
    I, J = I.ravel(), J.ravel()
    row = grid.index(I, J)
    b = np.asarray(drift, dtype=float)[I, J]
    choice = drift_stencil_choice(params, grid, drift, scheme)[I, J]
    s2 = params.sigma**2
    c = cross_coefficient(params, grid.thetas)[J]
    xs = grid.xst

    rows, cols, vals = [], [], []

    def put(di, dj, w):
        keep = w != 0.0
        rows.append(row[keep])
        cols.append(grid.index(I[keep] + di, J[keep] + dj))
        vals.append(w[keep])

    for k, di in enumerate((-1, 0, 1)):
        first = np.select(
            [choice == FORWARD, choice == BACKWARD],
            [xs.forward[I, k], xs.backward[I, k]],
            xs.central[I, k],
        )
        put(di, 0, b * first + 0.5 * s2 * xs.second[I, k])

    inner = (J > 0) & (J < m1 - 1)
    Ii, Ji = I[inner], J[inner]
    ci = c[inner]
    ts = grid.tst
    rows_i = row[inner]

    def put_inner(di, dj, w):
        keep = w != 0.0
        rows.append(rows_i[keep])
        cols.append(grid.index(Ii[keep] + di, Ji[keep] + dj))
        vals.append(w[keep])

    for k, dj in enumerate((-1, 0, 1)):
        put_inner(0, dj, 0.5 * ci**2 / s2 * ts.second[Ji, k])

    if cross == "central":
        for a, di in enumerate((-1, 0, 1)):
            for bb, dj in enumerate((-1, 0, 1)):
                put_inner(di, dj, ci * xs.central[Ii, a] * ts.central[Ji, bb])
    else:
        # (1/2)[forward-forward + backward-backward]: keeps the diagonal
        # neighbours along the positively correlated direction positive.
        hp = grid.xs[Ii + 1] - grid.xs[Ii]
        hm = grid.xs[Ii] - grid.xs[Ii - 1]
        kp = grid.thetas[Ji + 1] - grid.thetas[Ji]
        km = grid.thetas[Ji] - grid.thetas[Ji - 1]
        ff = 0.5 * ci / (hp * kp)
        bk = 0.5 * ci / (hm * km)
        put_inner(1, 1, ff)
        put_inner(1, 0, -ff)
        put_inner(0, 1, -ff)
        put_inner(-1, -1, bk)
        put_inner(-1, 0, -bk)
        put_inner(0, -1, -bk)
        put_inner(0, 0, ff + bk)

    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    )
    return mat.tocsr()


def boundary_values(params: ModelParams, grid: Grid2D) -> np.ndarray:
    """Dirichlet data: 0 at x=0, classical rows on the edges, interpolated classical at x=B."""
    sol1 = compute_classical(params, 1)
    sol2 = compute_classical(params, 2)
    v1 = classical_value(sol1, params, grid.xs)
    v2 = classical_value(sol2, params, grid.xs)
    out = np.zeros(grid.shape)
    out[:, 0] = v1
    out[:, -1] = v2
    w = (grid.thetas - params.theta1) / (params.theta2 - params.theta1)
    out[-1, :] = (1.0 - w) * v1[-1] + w * v2[-1]
    out[0, :] = 0.0
    return out


def assemble(params: ModelParams, grid: Grid2D, policy: GridField,
             cross: str = "central", drift: str = "hybrid") -> DiscreteOperator:
    """Discrete system for evaluating a fixed bang-bang ``policy``.

    Interior rows encode ``(L^G - delta) V - u D_x V = -u``; the remaining
    rows are unit-diagonal Dirichlet rows.
    """
    validate(params)
    if policy.values.shape != grid.shape:
        raise ValueError("policy is not defined on this grid")
    u = policy.values
    gen = generator_matrix(params, grid, grid.thetas[None, :] - u, cross, drift)
    kind = row_kinds(grid)
    interior = (kind == INTERIOR).astype(float)
    mat = sp.diags(interior) @ gen - sp.diags(params.delta * interior) + sp.diags(1.0 - interior)
    mat = mat.tocsr()
    mat.eliminate_zeros()
    rhs = np.where(kind == INTERIOR, -u.ravel(), boundary_values(params, grid).ravel())
    diag = mat.diagonal()
    if np.any(diag == 0.0):
        bad = np.flatnonzero(diag == 0.0)
        raise SolverError(f"singular assembly: zero diagonal in rows {bad[:10].tolist()}")
    return DiscreteOperator(mat, rhs, kind)


def solve_linear(matrix: sp.spmatrix, rhs: np.ndarray, rtol: float = 1e-10,
                 direct_limit: int = 100_000) -> np.ndarray:
    """Sparse LU up to ``direct_limit`` unknowns, ILU-preconditioned GMRES above."""
    A = sp.csc_matrix(matrix)
    if A.shape[0] <= direct_limit:
        try:
            x = spla.splu(A).solve(rhs)
        except RuntimeError as exc:
            raise SolverError(f"sparse LU failed: {exc}") from exc
    else:
        ilu = spla.spilu(A, drop_tol=1e-6, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)
        x, info = spla.gmres(A, rhs, M=M, rtol=rtol, restart=100, maxiter=2000)
        if info != 0:
            raise SolverError(f"GMRES did not converge (info={info})")
    if not np.all(np.isfinite(x)):
        raise SolverError("linear solve produced non-finite values")
    return x


def x_derivatives(grid: Grid2D, values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward, backward and central x-differences of a nodal field.

    End columns reuse their only neighbour; the central difference there
    equals the available one-sided difference.
    """
    v = np.asarray(values, dtype=float).reshape(grid.shape)
    slope = np.diff(v, axis=0) / np.diff(grid.xs)[:, None]
    fwd = np.empty_like(v)
    bwd = np.empty_like(v)
    fwd[:-1] = slope
    fwd[-1] = slope[-1]
    bwd[1:] = slope
    bwd[0] = slope[0]
    cen = grid.xst.apply("central", v, axis=0)
    cen[0] = fwd[0]
    cen[-1] = bwd[-1]
    return fwd, bwd, cen


def _pick(choice, fwd, bwd, cen):
    return np.select([choice == FORWARD, choice == BACKWARD], [fwd, bwd], cen)


def effective_derivative(params: ModelParams, grid: Grid2D, values: np.ndarray,
                         scheme: str = "hybrid") -> np.ndarray:
    """x-derivative seen by the greedy step, consistent with the drift differencing.

    Paying (drift vartheta - K) beats not paying (drift vartheta) iff
    ``K + (vartheta - K) D_K V >= vartheta D_0 V``, where each D is the
    difference the assembly would use for that drift; rearranged this reads
    ``D_eff <= 1`` with ``D_eff = (vartheta D_0 - (vartheta - K) D_K) / K``.
    """
    kmax = params.kmax
    fwd, bwd, cen = x_derivatives(grid, values)
    th = np.broadcast_to(grid.thetas[None, :], grid.shape)
    d0 = _pick(drift_stencil_choice(params, grid, th, scheme), fwd, bwd, cen)
    dk = _pick(drift_stencil_choice(params, grid, th - kmax, scheme), fwd, bwd, cen)
    return (th * d0 - (th - kmax) * dk) / kmax


def policy_improve(params: ModelParams, grid: Grid2D, value: GridField,
                   scheme: str = "hybrid") -> PolicyField:
    """Greedy bang-bang policy: pay ``kmax`` where ``D_eff V <= 1`` (ties pay)."""
    d = effective_derivative(params, grid, value.values, scheme)
    return PolicyField(grid, np.where(d <= 1.0, params.kmax, 0.0), kmax=params.kmax)


def evaluate_policy(params: ModelParams, grid: Grid2D, policy: GridField,
                    tols: SolverTolerances = SolverTolerances()) -> tuple[GridField, float, float]:
    """One policy evaluation: value field, absolute and relative interior residual."""
    op = assemble(params, grid, policy, tols.cross, tols.drift)
    v = op.solve(tols.linear_rtol, tols.direct_limit)
    return GridField(grid, v), op.interior_residual_norm(v), op.relative_residual(v)


def solve_policy_iteration(params: ModelParams, grid: Grid2D, init: GridField,
                           tols: SolverTolerances = SolverTolerances()) -> SolveReport:
    """Alternate policy evaluation and greedy improvement until the policy is fixed."""
    validate(params)
    kmax = params.kmax
    policy = PolicyField(grid, init.values, kmax=kmax)
    changes: list[int] = []
    value = None
    residual = rel = np.inf
    converged = False
    for it in range(1, tols.max_iter + 1):
        value, residual, rel = evaluate_policy(params, grid, policy, tols)
        new = policy_improve(params, grid, value, tols.drift)
        diff = int(np.count_nonzero(new.values != policy.values))
        changes.append(diff)
        log.info("policy iteration %d: %d nodes changed, residual %.3e", it, diff, residual)
        if diff == 0:
            converged = True
            break
        policy = new
    if not converged:
        log.warning("policy iteration did not converge within %d steps", tols.max_iter)
    return SolveReport(it, converged, policy, value, residual, changes, rel)
