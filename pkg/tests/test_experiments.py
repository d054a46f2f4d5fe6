import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zbsde import (CaseBParams, ConcaveCheckParams, Constant, DegenerateFitError,
                   GeometricExponential, HedgingScenario, InvalidConfigError, LinearLower,
                   WienerIntegral, ZeroDriver, as_constraint_blowup, case_b_bound_t0,
                   concave_feasibility, hedging_demo, lemma1_bound_experiment, make_grid,
                   penalization_sweep, run_pipeline, simulate_brownian)
from zbsde.constraints import General


@pytest.fixture(scope="module")
def paths_e():
    return simulate_brownian(make_grid(1.0, 20), 20_000, seed=17)


@pytest.fixture(scope="module")
def one_step():
    return simulate_brownian(make_grid(1.0, 1), 1_000_000, seed=4)


# penalization

def test_penalization_slope_half(paths_e, xi_a):
    res = penalization_sweep(xi_a, ZeroDriver(), range(0, 101, 10), paths_e)
    # oracle: int_0^1 (1 - s) ds by the trapezoid rule on the grid (exact for a line)
    t = paths_e.grid.times
    oracle = float(np.sum(np.diff(t) * ((1 - t[:-1]) + (1 - t[1:])) / 2))
    assert res.slope == pytest.approx(oracle, rel=0.01)
    assert res.intercept == pytest.approx(0.0, abs=1e-9)
    assert res.diverges


def test_penalization_inactive(paths_e):
    res = penalization_sweep(WienerIntegral(lambda t: 1.0 + t), ZeroDriver(), [0, 50, 100], paths_e)
    assert res.slope == pytest.approx(0.0, abs=1e-12)
    assert not res.diverges


def test_penalization_degenerate(paths_e, xi_a):
    with pytest.raises(DegenerateFitError):
        penalization_sweep(xi_a, ZeroDriver(), [0], paths_e)
    with pytest.raises(DegenerateFitError):
        penalization_sweep(xi_a, ZeroDriver(), [5, 5.0], paths_e)


def test_penalization_rows(paths_e, xi_a):
    res = penalization_sweep(xi_a, ZeroDriver(), [0, 4], paths_e)
    rows = list(res.rows())
    assert [r["n"] for r in rows] == [0.0, 4.0]
    assert set(res.as_dict()) >= {"slope", "intercept", "diverges"}


# lemma 1

def test_lemma1_zero_sigma(paths_e):
    rows = lemma1_bound_experiment(0.0, [-1, 2, 3], 0.0, paths_e)
    for r in rows:
        assert r.estimate.mean == 1.0 and r.bound == 1.0 and r.within_bound and r.tight


def test_lemma1_constant_sigma_is_tight(one_step):
    (r,) = lemma1_bound_experiment(0.5, [2], 0.0, one_step)
    assert r.bound == pytest.approx(np.exp(0.125))
    assert abs(r.estimate.mean - np.exp(0.125)) <= 3 * r.estimate.stderr
    assert r.within_bound and r.tight


def test_lemma1_negative_power(one_step):
    (r,) = lemma1_bound_experiment(0.5, [-1], 0.0, one_step)
    assert r.bound == pytest.approx(np.exp(-0.25))
    assert r.estimate.mean >= np.exp(-0.25) * (1 - 3 * r.estimate.stderr / r.estimate.mean)
    assert r.within_bound


@pytest.mark.parametrize("sigma", [0.25, 0.5, 1.0])
def test_lemma1_no_violation(one_step, sigma):
    assert all(r.within_bound for r in lemma1_bound_experiment(sigma, [-1, 2, 3], 0.0, one_step))


def test_lemma1_clipped_sigma(paths_e):
    rows = lemma1_bound_experiment(lambda t, b: np.clip(b, -0.8, 0.8), [-1, 2, 3], 0.0, paths_e,
                                   sup_sigma=0.8)
    assert all(r.within_bound and r.tight is None for r in rows)


def test_lemma1_bad_inputs(paths_e):
    with pytest.raises(InvalidConfigError):
        lemma1_bound_experiment(0.5, [0.5], 0.0, paths_e)
    with pytest.raises(InvalidConfigError):
        lemma1_bound_experiment(lambda t, b: 0 * b, [2], 0.0, paths_e)


# case (b)

def test_case_b_witnessed(paths_e, xi_a):
    res = case_b_bound_t0(xi_a, ZeroDriver(), LinearLower(0.0), CaseBParams(1.0, 1.0, 0.0, 0.0),
                          paths_e)
    assert res.value.mean == pytest.approx(-1.0)
    assert res.witnessed and res.verdict == "case (b) witnessed at t=0"


@given(c=st.floats(0.01, 9.0), lam0=st.floats(-3.0, 3.0))
@settings(max_examples=25, deadline=None)
def test_case_b_collapses_to_affine(c, lam0):
    p = simulate_brownian(make_grid(1.0, 4), 50, seed=1)
    xi = WienerIntegral(lambda t: lam0 + 0 * t)
    res = case_b_bound_t0(xi, ZeroDriver(), LinearLower(0.0), CaseBParams(c, 1.0, 0.0, 0.0), p)
    assert res.value.mean == pytest.approx(np.sqrt(c) * lam0, abs=1e-9)


def test_case_b_boundary(paths_e, xi_a):
    res = case_b_bound_t0(xi_a, ZeroDriver(), LinearLower(-1.0), CaseBParams(1.0, 1.0, 0.0, 0.0),
                          paths_e)
    assert res.value.mean == pytest.approx(0.0, abs=1e-12)
    assert not res.witnessed


@pytest.mark.parametrize("c", [0.0, -1.0])
def test_case_b_bad_c(c):
    with pytest.raises(InvalidConfigError):
        CaseBParams(c, 1.0)


# concave

def test_concave_linear_matches_bracket(paths_e, xi_a):
    rep = concave_feasibility(xi_a, ZeroDriver(), LinearLower(0.0), ConcaveCheckParams(), paths_e)
    assert rep.condition == 1
    assert rep.max_value == pytest.approx(1.0)
    np.testing.assert_allclose(rep.values, 1.0)
    assert rep.bounded and rep.terminal_ok and rep.feasible


def test_concave_terminal_fails(paths_e):
    rep = concave_feasibility(Constant(0.0), ZeroDriver(), LinearLower(1.0), ConcaveCheckParams(),
                              paths_e)
    assert rep.terminal.mean == -1.0 and not rep.terminal_ok and not rep.feasible


def test_concave_constant_payoff(paths_e):
    rep = concave_feasibility(Constant(3.0), ZeroDriver(), LinearLower(0.0), ConcaveCheckParams(),
                              paths_e)
    np.testing.assert_array_equal(rep.values, 0.0)
    assert rep.bounded


def test_concave_rejects_convex(paths_e, xi_a):
    ell = General(lambda t, x: x + np.exp(x / 2) - 1, lambda t, x: 1 + np.exp(x / 2) / 2,
                  lambda t, x: np.exp(x / 2) / 4, "convex")
    with pytest.raises(InvalidConfigError):
        concave_feasibility(xi_a, ZeroDriver(), ell, ConcaveCheckParams(), paths_e)


# blow-up

def test_blowup_bounds(paths_e):
    res = as_constraint_blowup(Constant(0.0), ZeroDriver(), [0, 1, 100], paths_e)
    assert res.lower_bounds == [0.0, 1.0, 100.0]
    rows = list(res.rows())
    assert rows[0]["lower_bound"] == 0.0 and rows[2]["lower_bound"] >= 100


def test_blowup_needs_infimum(paths_e, xi_a):
    with pytest.raises(InvalidConfigError):
        as_constraint_blowup(xi_a, ZeroDriver(), [1], paths_e)


def test_blowup_grows(paths_e):
    res = as_constraint_blowup(GeometricExponential(1), ZeroDriver(), [1, 5], paths_e)
    assert res.nondecreasing


# hedging

def test_hedging_identity_frame_reproduces_pipeline(paths_e, xi_a):
    h = hedging_demo(HedgingScenario(0.0, 0.0, 1.0, xi_a, 0.0), paths_e)
    ref = run_pipeline(xi_a, ZeroDriver(), LinearLower(0.0), paths_e)
    assert h.price.mean == ref.solution.Y0.mean
    assert h.price.stderr == ref.solution.Y0.stderr
    np.testing.assert_array_equal(h.pipeline.solution.Z, ref.solution.Z)
    assert abs(h.price.mean - 1.0) <= 0.03


def test_hedging_slack_floor(paths_e, xi_a):
    h = hedging_demo(HedgingScenario(0.0, 0.0, 1.0, xi_a, -1e6), paths_e)
    assert h.pipeline.alpha.alpha == 0.0
    assert np.all(h.pipeline.compensator.K == 0)
    assert abs(h.price.mean) <= 3 * h.price.stderr + 1e-12


def test_hedging_sigma_floor(paths_e, xi_a):
    with pytest.raises(InvalidConfigError):
        hedging_demo(HedgingScenario(0.0, 0.0, 1e-10, xi_a, 0.0), paths_e)
    with pytest.raises(InvalidConfigError):
        hedging_demo(HedgingScenario(0.0, 0.0, lambda t: 1 - t, xi_a, 0.0), paths_e)
