import pytest
from hypothesis import HealthCheck, settings

from dividend_hjb.config import preset_params
from dividend_hjb.grid import build_grid, default_spec
from dividend_hjb.hjb import solve_policy_iteration
from dividend_hjb.policy import extract_threshold, initial_curve, threshold_policy

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def solve_preset(name, **spec_kw):
    p = preset_params(name)
    g = build_grid(p, default_spec(p, **spec_kw))
    rep = solve_policy_iteration(p, g, threshold_policy(g, initial_curve(p, g), p.kmax))
    return p, g, rep


@pytest.fixture(scope="session")
def k15():
    """Preset k15 solved on the default 200 x 50 grid, plus its extracted threshold."""
    p, g, rep = solve_preset("k15")
    curve = extract_threshold(p, rep.policy, g, rep.value)
    return p, g, rep, curve
