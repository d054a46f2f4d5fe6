import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zbsde import (BilateralInfeasibleError, CompensatorSpec, Constant, EstimateCI,
                   ExpInverseDriver, InfeasibleError, InvalidConfigError, LinearDriver,
                   WienerIntegral, ZeroDriver, alpha_case1, alpha_case2, bilateral_alpha_search,
                   build_K, make_grid, malliavin_K_check, simulate_brownian)
from zbsde.compensator import helper_i_s
from zbsde.errors import DomainError


class _Bounds(ZeroDriver):
    """Zero generator with chosen derivative bounds (only the numbers matter)."""

    def __init__(self, supdY=0.0, infdY=0.0, supAbsdZ=0.0):
        self.supdY, self.infdY, self.supAbsdZ = supdY, infdY, supAbsdZ


def test_helper_zero_driver():
    i, s = helper_i_s(0.0, ZeroDriver(), 1.0)
    assert i == 1.0 and s == 1.0


def test_helper_sup_dy():
    _, s = helper_i_s(0.0, _Bounds(supdY=1.0, infdY=0.0), 1.0)
    assert s == pytest.approx(np.e - 1)


def test_helper_inf_dy():
    i, _ = helper_i_s(0.0, _Bounds(supdY=0.0, infdY=-1.0), 1.0)
    assert i == pytest.approx(1 - np.exp(-1))


def test_helper_near_zero_rate_uses_limit():
    i, s = helper_i_s(0.25, _Bounds(supdY=1e-13, infdY=-1e-13), 1.0)
    assert i == 0.75 and s == 0.75


def test_helper_domain():
    with pytest.raises(DomainError):
        helper_i_s(1.0, ZeroDriver(), 1.0)


def test_alpha_case1_example(paths_small, xi_a):
    res = alpha_case1(xi_a, ZeroDriver(), 0.0, paths_small)
    assert res.alpha == 1.0
    np.testing.assert_allclose(res.bracket, 1.0, rtol=1e-12)


def test_alpha_case1_slack_constraint(paths_small):
    assert alpha_case1(WienerIntegral(1.0), ZeroDriver(), 0.0, paths_small).alpha == 0.0


def test_alpha_case1_bracket_blows_up_near_T(paths_small):
    with pytest.raises(InfeasibleError):
        alpha_case1(Constant(0.0), ZeroDriver(), 0.5, paths_small)


def test_alpha_case1_cap(paths_small):
    # 0.5 / (1 - t) peaks at 10 on this grid
    nu = lambda t: 0.5 * (t < 1)
    assert alpha_case1(Constant(0.0), ZeroDriver(), nu, paths_small).alpha == pytest.approx(10.0)
    with pytest.raises(InfeasibleError):
        alpha_case1(Constant(0.0), ZeroDriver(), nu, paths_small, cap=5.0)


def test_alpha_case1_terminal_condition(paths_small):
    with pytest.raises(InfeasibleError) as info:
        alpha_case1(WienerIntegral(lambda t: 1.0 - 2.0 * t), ZeroDriver(), -0.5, paths_small)
    assert info.value.t == 1.0


def test_alpha_case1_needs_z_free_driver(paths_small, xi_a):
    with pytest.raises(InvalidConfigError):
        alpha_case1(xi_a, LinearDriver(0, 0.5, 0), 0.0, paths_small)


def test_alpha_case2_reduces_to_case1(paths_small, xi_a):
    res = alpha_case2(xi_a, ZeroDriver(), 0.0, paths_small, 2.0, 2.0, 2.0)
    assert res.alpha == pytest.approx(1.0, rel=1e-12)


def test_alpha_case2_negative_bracket(paths_small):
    assert alpha_case2(Constant(1.0), ZeroDriver(), -1.0, paths_small, 2.0, 2.0, 2.0).alpha == 0


def test_alpha_case2_rejects_q_one(paths_small, xi_a):
    with pytest.raises(InvalidConfigError):
        alpha_case2(xi_a, ZeroDriver(), 0.0, paths_small, 1.0, 2.0, 2.0)


def test_alpha_case2_z_dependent_is_larger(paths_small, xi_a):
    # the Hölder corrections only make the lower map smaller
    a0 = alpha_case2(xi_a, ZeroDriver(), 0.0, paths_small, 2.0, 2.0, 2.0).alpha
    a1 = alpha_case2(xi_a, LinearDriver(0, 0.5, 0), 0.0, paths_small, 2.0, 2.0, 2.0).alpha
    assert a1 > a0


@settings(max_examples=25, deadline=None)
@given(shift=st.floats(0.0, 2.0), base=st.floats(-2.0, 0.0))
def test_alpha_case1_monotone_in_nu(shift, base):
    paths = simulate_brownian(make_grid(1.0, 10), 10, 0)
    xi = WienerIntegral(lambda t: t - 1.0 + 3.0)
    lo = alpha_case1(xi, ZeroDriver(), base, paths).alpha
    hi = alpha_case1(xi, ZeroDriver(), base + shift, paths).alpha
    assert hi >= lo


def test_build_K_alpha_zero_is_time(paths_small):
    c = build_K(paths_small, CompensatorSpec(0.0, 1.0, "custom"))
    np.testing.assert_allclose(c.K, np.broadcast_to(paths_small.grid.times, c.K.shape),
                               atol=1e-12)


def test_build_K_mean_one(paths_mid, within):
    c = build_K(paths_mid, CompensatorSpec(1.0, 1.0, "case1"))
    within(EstimateCI.from_samples(c.K_T), 1.0)


def test_build_K_none_mode(paths_small):
    c = build_K(paths_small, CompensatorSpec(0.0, 1.0, "none"))
    assert np.all(c.K == 0)


@pytest.mark.parametrize("spec", [
    CompensatorSpec(1.0, 1.0, "case1"), CompensatorSpec(2.0, 2.0, "case2"),
    CompensatorSpec(lambda t: np.sin(5 * t), 1.0, "bilateral"), CompensatorSpec(0.0, 1.0, "none"),
])
def test_K_nondecreasing_from_zero(paths_small, spec):
    c = build_K(paths_small, spec)
    assert np.all(c.K[:, 0] == 0)
    assert np.all(np.diff(c.K, axis=1) >= 0)
    assert np.all(np.isfinite(c.K_T))


def test_K_square_sup_bound(paths_mid):
    # E[sup K^2] <= 4 T^2 E[k_T^2] = 4 e^{int alpha^2} for alpha = 1, T = 1
    c = build_K(paths_mid, CompensatorSpec(1.0, 1.0, "case1"))
    e = EstimateCI.from_samples(c.K.max(axis=1) ** 2)
    assert e.mean - 3 * e.stderr <= 4 * np.e


def test_spec_validation():
    with pytest.raises(InvalidConfigError):
        CompensatorSpec(1.0, 0.5, "case1")
    with pytest.raises(InvalidConfigError):
        CompensatorSpec(1.0, 1.0, "bogus")


def test_malliavin_check_zero_alpha(paths_tiny):
    r = malliavin_K_check(paths_tiny, CompensatorSpec(0.0, 1.0, "custom"), 0.5, 1.0)
    assert np.max(np.abs(r["fd"])) <= 1e-6
    assert r["chain_rule_matches"] and r["stated_form_matches"]


def test_malliavin_check_chain_rule(paths_tiny):
    r = malliavin_K_check(paths_tiny, CompensatorSpec(1.0, 1.0, "custom"), 0.5, 1.0, eps=1e-5)
    assert r["max_rel_err_chain_rule"] <= 1e-3
    assert r["chain_rule_matches"] and not r["stated_form_matches"]


def test_malliavin_check_after_t(paths_tiny):
    r = malliavin_K_check(paths_tiny, CompensatorSpec(1.0, 1.0, "custom"), 0.8, 0.4)
    assert np.all(r["fd"] == 0)


def test_bilateral_wide_band(paths_small):
    r = bilateral_alpha_search(WienerIntegral(0.0), ZeroDriver(), -10.0, 10.0, paths_small)
    assert np.all(r.alpha == 0)


def test_bilateral_pinned(paths_small, xi_a):
    r = bilateral_alpha_search(xi_a, ZeroDriver(), 0.0, 0.0, paths_small)
    np.testing.assert_allclose(r.alpha, 1.0, rtol=1e-12)


def test_bilateral_contradictory(paths_small, xi_a):
    with pytest.raises(BilateralInfeasibleError):
        bilateral_alpha_search(WienerIntegral(0.5), ZeroDriver(), 1.0, 0.0, paths_small)


def test_bilateral_needs_z_free(paths_small, xi_a):
    with pytest.raises(InvalidConfigError):
        bilateral_alpha_search(xi_a, LinearDriver(0, 1, 0), -1, 1, paths_small)


def test_exp_inverse_driver_has_infinite_d(paths_small):
    # infinite Malliavin bound makes the case-1 lower map -inf: bracket unbounded
    with pytest.raises(InfeasibleError):
        alpha_case1(WienerIntegral(1.0), ExpInverseDriver(), 0.0, paths_small)
