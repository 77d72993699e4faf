import logging

import numpy as np
import pytest

from dividend_hjb.classical import classical_value, compute_classical
from dividend_hjb.config import preset_params
from dividend_hjb.grid import GridField, build_grid, default_spec
from dividend_hjb.hjb import INTERIOR, PolicyField, row_kinds
from dividend_hjb.policy import (NonThresholdPolicyError, ThresholdCurve, check_admissible,
                                 check_optimality, eval_policy, extract_threshold,
                                 forbidden_slope, initial_curve, shape_diagnostics,
                                 threshold_policy)

P = preset_params("k15")


@pytest.fixture(scope="module")
def grid():
    return build_grid(P, default_spec(P, n=60, m=15))


def test_threshold_policy_extremes(grid):
    g = grid
    assert threshold_policy(g, ThresholdCurve.constant(g, 0.0), P.kmax).paying().all()
    never = threshold_policy(g, ThresholdCurve.constant(g, g.xs[-1] + 1.0), P.kmax)
    assert not never.paying().any()


def test_initial_curve_joins_classical_levels(grid):
    c = initial_curve(P, grid)
    assert c.levels[0] == pytest.approx(compute_classical(P, 1).bbar)
    assert c.levels[-1] == pytest.approx(compute_classical(P, 2).bbar)
    assert np.all(np.diff(np.diff(c.levels) / np.diff(c.thetas)) == pytest.approx(0.0, abs=1e-9))


def test_curve_validation():
    with pytest.raises(ValueError):
        ThresholdCurve(np.array([1.0, 1.0, 2.0]), np.zeros(3))
    with pytest.raises(ValueError):
        ThresholdCurve(np.array([1.0, 2.0]), np.zeros(3))


def test_extract_rows_without_switch(grid):
    g = grid
    v = GridField(g, np.zeros(g.shape))
    all_pay = PolicyField(g, np.full(g.shape, P.kmax), kmax=P.kmax)
    c = extract_threshold(P, all_pay, g, v, pin_endpoints=False)
    assert np.all(c.levels == 0.0)
    none = PolicyField(g, np.zeros(g.shape), kmax=P.kmax)
    c = extract_threshold(P, none, g, v, pin_endpoints=False)
    assert np.all(c.levels == g.xs[-1])


def test_extract_rejects_two_switches(grid):
    g = grid
    u = np.zeros(g.shape)
    u[10:20, 3] = P.kmax
    u[30:, 3] = P.kmax
    u[5:, 7] = P.kmax
    u[:5, 9] = P.kmax
    with pytest.raises(NonThresholdPolicyError) as err:
        extract_threshold(P, PolicyField(g, u, kmax=P.kmax), g, GridField(g, np.zeros(g.shape)))
    assert err.value.rows == [3, 9]


def test_extracted_level_lies_in_switch_cell(k15):
    p, g, rep, curve = k15
    pay = rep.policy.paying()
    raw = extract_threshold(p, rep.policy, g, rep.value, pin_endpoints=False)
    for j in range(len(g.thetas)):
        i = int(np.argmax(pay[:, j]))
        assert g.xs[i - 1] < raw.levels[j] <= g.xs[i]
    assert curve.endpoint_error(p) == 0.0
    assert raw.endpoint_error(p) < 0.05


def test_constant_curve_admissible(grid):
    rep = check_admissible(P, ThresholdCurve.constant(grid, 1.0))
    assert rep.admissible and rep.flagged_thetas == []
    assert not rep.smoothness_verified


def test_forbidden_slope_flagged():
    thetas = np.linspace(1.0, 2.0, 11)
    # a step of 0.8 across vartheta = 1.5 gives central slope 4 = sigma^2 / c(1.5) there
    levels = np.where(thetas > 1.55, 1.8, 1.0)
    assert np.gradient(levels, thetas)[5] == pytest.approx(forbidden_slope(P, 1.5))
    rep = check_admissible(P, ThresholdCurve(thetas, levels), jump_tol=1.0)
    assert rep.flagged_thetas == [pytest.approx(1.5)]
    assert not rep.admissible


def test_optimal_curve_is_admissible(k15):
    p, _, _, curve = k15
    rep = check_admissible(p, curve)
    assert rep.admissible
    assert rep.endpoint_error == 0.0


def test_optimal_curve_reproduces_value(k15):
    p, g, rep, curve = k15
    j = eval_policy(p, g, curve)
    assert np.max(np.abs(j.values - rep.value.values)) <= 1e-6 * p.kmax / p.delta
    assert check_optimality(p, g, j, curve).ok


@pytest.mark.parametrize("shift", [-0.3, 0.25, 0.5])
def test_other_curves_are_dominated(k15, shift):
    p, g, rep, curve = k15
    other = ThresholdCurve(curve.thetas, np.clip(curve.levels + shift, 0.0, None))
    j = eval_policy(p, g, other)
    assert np.all(j.values <= rep.value.values + 1e-9)
    assert not check_optimality(p, g, j, other).ok


def test_never_paying_is_dominated(k15):
    p, g, rep, _ = k15
    j = eval_policy(p, g, ThresholdCurve.constant(g, g.xs[-1] + 1.0))
    inner = (row_kinds(g) == INTERIOR).reshape(g.shape)
    assert np.all(j.values[inner] >= 0.0)
    assert np.all(j.values <= rep.value.values + 1e-12)
    # value only enters from the boundary data, so interior nodes fall short of the optimum
    assert np.all(j.values[inner] < rep.value.values[inner])


def test_edge_row_matches_classical(k15):
    p, g, rep, curve = k15
    j = eval_policy(p, g, curve)
    np.testing.assert_allclose(j.values[:, 0], classical_value(compute_classical(p, 1), p, g.xs),
                               atol=1e-12)


def test_shape_diagnostics(caplog):
    p = preset_params("k067")
    thetas = np.linspace(1.0, 2.0, 11)
    b1, b2 = compute_classical(p, 1).bbar, compute_classical(p, 2).bbar
    w = (thetas - 1.0)
    concave = ThresholdCurve(thetas, b1 + (b2 - b1) * np.sqrt(w))
    assert b1 < b2
    assert shape_diagnostics(p, concave) == []
    with caplog.at_level(logging.WARNING, logger="dividend_hjb"):
        msgs = shape_diagnostics(p, ThresholdCurve(thetas, b1 + (b2 - b1) * w**2))
    assert msgs == ["expected strictly concave level"]
    assert "threshold shape" in caplog.text
    out = shape_diagnostics(p, ThresholdCurve(thetas, np.full(11, 10.0)))
    assert any("bracket" in m for m in out)
