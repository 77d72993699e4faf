import json

import numpy as np
import pytest

from conftest import solve_preset
from dividend_hjb.classical import classical_value, compute_classical
from dividend_hjb.config import BASE_MODEL, preset_params
from dividend_hjb.grid import GridField, build_grid, default_spec
from dividend_hjb.hjb import (INTERIOR, PolicyField, SolverTolerances, assemble,
                              boundary_values, drift_stencil_choice, effective_derivative,
                              generator_matrix, policy_improve, row_kinds,
                              solve_policy_iteration)
from dividend_hjb.policy import initial_curve, threshold_policy

P = preset_params("k15")


@pytest.fixture(scope="module")
def small():
    return build_grid(P, default_spec(P, n=40, m=12))


def _interior(g):
    return (row_kinds(g) == INTERIOR).reshape(g.shape)


@pytest.mark.parametrize("cross", ["central", "tilted"])
@pytest.mark.parametrize("scheme", ["hybrid", "upwind"])
def test_generator_on_polynomials(small, cross, scheme):
    g = small
    X, T = g.mesh()
    gen = generator_matrix(P, g, T, cross, scheme)
    apply = lambda f: (gen @ f.ravel()).reshape(g.shape)  # noqa: E731
    inner = slice(1, -1)
    c = (T - P.theta1) * (P.theta2 - T)
    np.testing.assert_allclose(apply(np.ones(g.shape))[inner], 0.0, atol=1e-9)
    np.testing.assert_allclose(apply(X)[inner], T[inner], atol=1e-9)
    np.testing.assert_allclose(apply(T)[inner], 0.0, atol=1e-9)
    np.testing.assert_allclose(apply(X * T)[inner], (T**2 + c)[inner], atol=1e-8)


def test_constant_field_gives_minus_delta(small):
    g = small
    op = assemble(P, g, PolicyField(g, np.zeros(g.shape), kmax=P.kmax))
    r = (op.matrix @ np.full(g.size, 3.0)).reshape(g.shape)
    np.testing.assert_allclose(r[_interior(g)], -P.delta * 3.0, atol=1e-9)


def test_dirichlet_rows_are_exact(small):
    g = small
    pol = threshold_policy(g, initial_curve(P, g), P.kmax)
    rep = solve_policy_iteration(P, g, pol)
    v = rep.value.values
    bnd = boundary_values(P, g)
    edge = ~_interior(g)
    assert np.array_equal(v[edge], bnd[edge])
    np.testing.assert_allclose(bnd[:, 0], classical_value(compute_classical(P, 1), P, g.xs))


def test_row_kinds_counts(small):
    g = small
    kinds = row_kinds(g)
    n1, m1 = g.shape
    assert np.count_nonzero(kinds == INTERIOR) == (n1 - 2) * (m1 - 2)
    assert len(kinds) == g.size


def test_hybrid_uses_central_where_monotone(small):
    g = small
    _, T = g.mesh()
    hyb = drift_stencil_choice(P, g, T, "hybrid")
    up = drift_stencil_choice(P, g, T, "upwind")
    assert np.all(up[1:-1] == 1)
    assert np.any(hyb[1:-1] == 0)
    assert hyb[0].tolist() == [1] * g.shape[1] and hyb[-1].tolist() == [-1] * g.shape[1]


def test_greedy_step_on_linear_fields(small):
    g = small
    X, _ = g.mesh()
    steep = policy_improve(P, g, GridField(g, 2.0 * X))
    flat = policy_improve(P, g, GridField(g, np.zeros(g.shape)))
    assert not steep.paying().any()
    assert flat.paying().all()
    np.testing.assert_allclose(effective_derivative(P, g, 0.7 * X), 0.7, atol=1e-12)


def test_greedy_step_on_classical_row_switches_near_classical_level():
    g = build_grid(P, default_spec(P))
    sol = compute_classical(P, 1)
    v = np.repeat(classical_value(sol, P, g.xs)[:, None], g.shape[1], axis=1)
    pay = policy_improve(P, g, GridField(g, v)).paying()[:, 0]
    first = int(np.argmax(pay))
    assert pay[first:].all() and not pay[:first].any()
    assert g.xs[first - 1] <= sol.bbar <= g.xs[first]


def test_policy_field_rejects_non_bang_bang(small):
    with pytest.raises(ValueError):
        PolicyField(small, np.full(small.shape, 0.5), kmax=P.kmax)


def test_assemble_rejects_foreign_policy(small):
    other = build_grid(P, default_spec(P, n=10, m=4))
    with pytest.raises(ValueError):
        assemble(P, small, PolicyField(other, np.zeros(other.shape), kmax=P.kmax))


@pytest.mark.parametrize("name", ["k02", "k067", "k09", "k15", "r2", "r4"])
def test_presets_converge_quickly(name):
    p, g, rep = solve_preset(name, n=100, m=25)
    assert rep.converged and rep.iterations <= 5
    assert rep.policy_changes[-1] == 0
    assert rep.relative_residual < 1e-10
    v = rep.value.values
    assert v.min() >= -1e-12 and v.max() <= p.kmax / p.delta + 1e-12


def test_small_cap_pays_everywhere():
    p = BASE_MODEL.replace(kmax=0.1)
    assert compute_classical(p, 1).bbar == 0.0 and compute_classical(p, 2).bbar == 0.0
    g = build_grid(p, default_spec(p, n=60, m=15))
    rep = solve_policy_iteration(p, g, threshold_policy(g, initial_curve(p, g), p.kmax))
    assert rep.converged
    assert rep.policy.paying()[_interior(g)].all()


def test_reference_solve(k15):
    p, g, rep, _ = k15
    assert rep.converged and rep.iterations <= 5
    d = json.loads(rep.to_json())
    assert d["n"] == 200 and d["m"] == 50 and d["policy_changes"][-1] == 0
    # value increases in x and in the drift estimate
    v = rep.value.values
    assert np.all(np.diff(v, axis=0) >= -1e-12)
    assert np.all(np.diff(v, axis=1) >= -1e-8)


def test_refinement_converges():
    """Differences between successive refinements shrink at an interior probe point."""
    vals = []
    for n, m in ((50, 12), (100, 25), (200, 50)):
        _, _, rep = solve_preset("k15", n=n, m=m)
        vals.append(rep.value.interpolate(1.0, 1.5))
    d1, d2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
    assert d2 < d1
    assert d2 < 5e-3


def test_iteration_cap_reports_nonconvergence(small):
    g = small
    init = PolicyField(g, np.zeros(g.shape), kmax=P.kmax)
    rep = solve_policy_iteration(P, g, init, SolverTolerances(max_iter=1))
    assert not rep.converged and rep.iterations == 1
