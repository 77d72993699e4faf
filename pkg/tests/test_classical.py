import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from dividend_hjb.classical import (classical_derivative, classical_value, compute_classical,
                                    decay_rate_lambda, domain_bound)
from dividend_hjb.config import preset_params
from dividend_hjb.model import ModelParams

mp.mp.dps = 40


def oracle(theta, sigma, delta, k):
    """The closed-form parameters in 40-digit arithmetic, written out independently."""
    th, s2, d, k = mp.mpf(theta), mp.mpf(sigma) ** 2, mp.mpf(delta), mp.mpf(k)
    r = mp.sqrt(th**2 + 2 * s2 * d)
    al1, al2 = (-th + r) / s2, (th + r) / s2
    be2 = ((th - k) + mp.sqrt((th - k) ** 2 + 2 * s2 * d)) / s2
    g = k / d - 1 / be2
    a1 = (al2 * g + 1) / (al1 + al2)
    a2 = (al1 * g - 1) / (al1 + al2)
    arg = -a1 / a2
    bbar = max(mp.log(arg) / (al1 + al2), 0) if arg > 0 else mp.mpf(0)
    b2 = -1 / be2 if bbar > 0 else -k / d
    return dict(alpha1=al1, alpha2=al2, beta2=be2, a1=a1, a2=a2, bbar=bbar, b2=b2)


@pytest.mark.parametrize("name", ["k02", "k067", "k09", "k15", "r4"])
@pytest.mark.parametrize("which", [1, 2])
def test_parameters_match_high_precision_oracle(name, which):
    p = preset_params(name)
    s = compute_classical(p, which)
    ref = oracle(s.theta, p.sigma, p.delta, p.kmax)
    for key, val in ref.items():
        assert getattr(s, key) == pytest.approx(float(val), rel=1e-12, abs=1e-14), key


def test_reference_values():
    s = compute_classical(ModelParams(), 1)
    assert s.alpha1 == pytest.approx(math.sqrt(2) - 1, abs=1e-12)
    assert s.alpha2 == pytest.approx(math.sqrt(2) + 1, abs=1e-12)
    assert s.beta2 == pytest.approx((math.sqrt(5) - 1) / 2, abs=1e-12)
    assert s.bbar == pytest.approx(0.8190667, abs=1e-7)
    assert s.b2 == pytest.approx(-1.618034, abs=1e-6)
    assert s.a2 == pytest.approx(-0.151169, abs=1e-6)
    # a1 is 1.5331352 to 7 digits (a value of 1.533137 would break V(0) = 0)
    assert s.a1 == pytest.approx(1.5331352, abs=1e-7)
    assert s.a1 + s.a2 * math.exp(0.0) == pytest.approx(s.b2 + 3.0, abs=1e-12)


def test_value_at_bbar_and_limits():
    p = ModelParams()
    s = compute_classical(p, 1)
    assert classical_value(s, p, s.bbar) == pytest.approx(3.0 - 1.618034, abs=1e-6)
    assert classical_value(s, p, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert classical_value(s, p, 200.0) == pytest.approx(p.payout_cap, abs=1e-12)
    with pytest.raises(ValueError):
        classical_value(s, p, -0.1)


def test_positive_part_gives_zero_level():
    # small K: paying at the maximal rate from the start is optimal under theta1
    p = preset_params("k02")
    s = compute_classical(p, 1)
    assert s.a2 >= 0.0 or -s.a1 / s.a2 <= 1.0
    assert s.bbar == 0.0
    assert s.b2 == -p.payout_cap
    assert classical_value(s, p, 0.0) == 0.0


@pytest.mark.parametrize("name", ["k02", "k067", "k09", "k15"])
@pytest.mark.parametrize("which", [1, 2])
def test_value_solves_the_ode_on_each_side(name, which):
    p = preset_params(name)
    s = compute_classical(p, which)
    f = lambda x: mp.mpf(classical_value(s, p, float(x)))  # noqa: E731
    for x in np.linspace(0.05, 6.0, 13):
        if abs(x - s.bbar) < 1e-2:
            continue
        u = p.kmax if x > s.bbar else 0.0
        d1 = mp.diff(f, x, 1, h=mp.mpf("1e-4"))
        d2 = mp.diff(f, x, 2, h=mp.mpf("1e-4"))
        res = 0.5 * p.sigma**2 * d2 + (s.theta - u) * d1 - p.delta * f(x) + u
        assert abs(res) < 1e-6


@pytest.mark.parametrize("name", ["k067", "k09", "k15"])
def test_smooth_pasting(name):
    p = preset_params(name)
    for which in (1, 2):
        s = compute_classical(p, which)
        assert s.bbar > 0
        h = 1e-7
        left = classical_value(s, p, s.bbar - h)
        right = classical_value(s, p, s.bbar)
        assert left == pytest.approx(right, abs=1e-6)
        assert classical_derivative(s, p, s.bbar) == pytest.approx(1.0, abs=1e-10)
        assert classical_derivative(s, p, s.bbar - 1e-12) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("k, lam", [(1.5, -0.5 + math.sqrt(1.25)), (0.9, 1.104988)])
def test_decay_rate(k, lam):
    assert decay_rate_lambda(ModelParams(kmax=k)) == pytest.approx(lam, abs=1e-6)


def test_decay_rate_solves_its_characteristic_equation():
    # E[exp(-delta tau)] = exp(-lambda x) for drift theta1 - K
    p = ModelParams(kmax=1.5, sigma=0.7, delta=0.3)
    lam = decay_rate_lambda(p)
    m = p.theta1 - p.kmax
    assert 0.5 * p.sigma**2 * lam**2 - m * lam - p.delta == pytest.approx(0.0, abs=1e-12)


def test_decay_rate_when_k_equals_theta1():
    p = ModelParams(kmax=1.0, sigma=1.3, delta=0.4)
    assert decay_rate_lambda(p) == pytest.approx(math.sqrt(2 * p.delta) / p.sigma, rel=1e-14)


@pytest.mark.parametrize("k, bigB", [(0.2, 2.22), (0.67, 3.33), (0.9, 4.17), (1.5, 7.46)])
def test_domain_bound_table(k, bigB):
    assert domain_bound(ModelParams(kmax=k), 0.01) == bigB


def test_domain_bound_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        domain_bound(ModelParams(), 1.5)


@given(s=st.floats(0.2, 5.0),
       theta=st.floats(0.1, 3.0), delta=st.floats(0.05, 2.0), k=st.floats(0.05, 3.0))
def test_scale_invariance(s, theta, delta, k):
    """Scaling (theta, delta, K) by s^2 and sigma by s leaves bbar unchanged and
    multiplies alpha, beta by 1 (they are rates per unit surplus measured in sigma^2 units)."""
    base = ModelParams(theta1=theta, theta2=theta + 1.0, sigma=1.0, delta=delta, kmax=k)
    scaled = ModelParams(theta1=theta * s * s, theta2=(theta + 1.0) * s * s, sigma=s,
                         delta=delta * s * s, kmax=k * s * s)
    a, b = compute_classical(base, 1), compute_classical(scaled, 1)
    assert b.bbar == pytest.approx(a.bbar, rel=1e-12, abs=1e-12)
    for key in ("alpha1", "alpha2", "beta2"):
        assert getattr(b, key) == pytest.approx(getattr(a, key), rel=1e-12)
    for key in ("a1", "a2", "b2"):
        # currency amounts K/delta are scale-free here
        assert getattr(b, key) == pytest.approx(getattr(a, key), rel=1e-11, abs=1e-12)


@given(theta=st.floats(0.1, 3.0), delta=st.floats(0.05, 2.0), k=st.floats(0.05, 3.0),
       x=st.floats(0.0, 30.0))
def test_value_bounds_and_origin(theta, delta, k, x):
    p = ModelParams(theta1=theta, theta2=theta + 1, delta=delta, kmax=k)
    s = compute_classical(p, 1)
    v = classical_value(s, p, x)
    assert -1e-10 <= v <= p.payout_cap + 1e-10
    assert abs(classical_value(s, p, 0.0)) <= 1e-10 * max(1.0, p.payout_cap)
    assert classical_derivative(s, p, x) >= -1e-12
