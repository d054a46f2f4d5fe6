import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from zbsde import (Bilateral, CustomDriver, EstimateCI, ExpInverseDriver, General,
                   InvalidConfigError, LinearDriver, LinearLower, LinearUpper, OrderingError,
                   RootNotBracketedError, ZeroDriver, make_grid, simulate_brownian)
from zbsde.constraints import convex_reduction_threshold, eval_constraint, reduce_to_linear
from zbsde.drivers import eval_driver, gamma_weights


def _general(src_ell, d1, d2, curvature, **kw):
    return General(src_ell, d1, d2, curvature, **kw)


def test_zero_driver():
    assert eval_driver(ZeroDriver(), 0.3, np.array([1.0]), 2.0, 3.0)[0] == 0
    assert ZeroDriver().bounds() == {"supdY": 0, "infdY": 0, "supAbsdZ": 0, "d": 0}


def test_exp_inverse_at_origin():
    assert eval_driver(ExpInverseDriver(), 0.0, np.array([0.0]), 0.0, 0.0)[0] == 1.0


def test_linear_constant_term():
    f = LinearDriver(0.0, 0.0, 1.0)
    assert eval_driver(f, 0.5, np.zeros(3), 0.0, 0.0).tolist() == [1.0, 1.0, 1.0]


def test_linear_bounds_from_coefficients():
    f = LinearDriver(lambda t: -t, 0.5, 0.0)
    assert f.supdY == 0 and f.infdY == -1 and f.supAbsdZ == 0.5


def test_custom_driver_requires_callable():
    with pytest.raises(InvalidConfigError):
        CustomDriver(None, 0, 0, 0, 0)


def test_custom_driver_rejects_wrong_bounds():
    with pytest.raises(InvalidConfigError):
        CustomDriver(lambda t, b, y, z: 2 * y, supdY=1.0, infdY=0.0, supAbsdZ=0.0, d=0.0,
                     state_dependent=False)


def test_custom_driver_finite_difference_partials():
    f = CustomDriver(lambda t, b, y, z: np.sin(y) + 0.5 * z, 1.0, -1.0, 0.5, 0.0,
                     state_dependent=False)
    y = np.linspace(-1, 1, 5)
    np.testing.assert_allclose(f.dy(0.0, y, y, y), np.cos(y), atol=1e-8)


def test_gamma_zero_driver(paths_small):
    g, gt = gamma_weights(paths_small, ZeroDriver(), None, None, 0.2, 0.8)
    assert np.all(g == 1) and np.all(gt == 1)


def test_gamma_constant_dy_is_deterministic(paths_small):
    g, _ = gamma_weights(paths_small, LinearDriver(0.7, 0.0, 0.0), None, None, 0.2, 0.8)
    np.testing.assert_allclose(g, np.exp(0.7 * 0.6))


def test_gamma_constant_dz_is_martingale(paths_mid):
    _, gt = gamma_weights(paths_mid, LinearDriver(0.0, 0.8, 0.0), None, None, 0.0, 1.0)
    e = EstimateCI.from_samples(gt)
    assert abs(e.mean - 1) <= 3 * e.stderr


def test_gamma_same_time_is_one(paths_small):
    g, gt = gamma_weights(paths_small, LinearDriver(0.3, 0.4, 0.0), None, None, 0.5, 0.5)
    assert np.all(g == 1) and np.all(gt == 1)


def test_gamma_ordering(paths_small):
    with pytest.raises(OrderingError):
        gamma_weights(paths_small, ZeroDriver(), None, None, 0.8, 0.2)


def test_linear_lower_values():
    assert eval_constraint(LinearLower(0.0), 0.0, np.array([0.3]))[0] == pytest.approx(0.3)
    assert eval_constraint(LinearLower(1.0), 0.0, np.array([1.0]))[0] == 0


def test_linear_upper_sign():
    assert eval_constraint(LinearUpper(1.0), 0.0, np.array([0.25]))[0] == pytest.approx(0.75)


def test_bilateral_not_evaluable():
    with pytest.raises(InvalidConfigError):
        eval_constraint(Bilateral(-1.0, 1.0), 0.0, np.zeros(1))


def test_general_exp_constraint():
    ell = _general(lambda t, x: np.exp(x) - 1, lambda t, x: np.exp(x), lambda t, x: np.exp(x),
                   "convex", K_lower=np.exp(-5.0))
    assert eval_constraint(ell, 0.0, np.array([0.0]))[0] == 0


def test_general_rejects_wrong_curvature_flag():
    with pytest.raises(InvalidConfigError):
        _general(lambda t, x: np.exp(x), lambda t, x: np.exp(x), lambda t, x: np.exp(x),
                 "concave", K_lower=np.exp(-5.0))


def test_general_rejects_nonpositive_slope():
    with pytest.raises(InvalidConfigError):
        _general(lambda t, x: x ** 2, lambda t, x: 2 * x, lambda t, x: 2 + 0 * x, "convex")


def test_threshold_linear():
    assert convex_reduction_threshold(LinearLower(lambda t: 0.3 * t), 0.5) == pytest.approx(0.15)


def test_threshold_exp():
    ell = _general(lambda t, x: np.exp(x) - 1, lambda t, x: np.exp(x), lambda t, x: np.exp(x),
                   "convex", K_lower=np.exp(-5.0))
    assert abs(convex_reduction_threshold(ell, 0.0)) <= 1e-10


def test_threshold_cubic_against_brentq():
    ell = _general(lambda t, x: x ** 3 + x - 2, lambda t, x: 3 * x ** 2 + 1, lambda t, x: 6 * x,
                   "linear", check=False)
    root = convex_reduction_threshold(ell, 0.0)
    assert abs(root - brentq(lambda x: x ** 3 + x - 2, -10, 10, xtol=1e-14)) <= 1e-10
    assert abs(root - 1.0) <= 1e-10


def test_threshold_not_bracketed():
    ell = _general(lambda t, x: np.exp(x) + 1, lambda t, x: np.exp(x), lambda t, x: np.exp(x),
                   "convex", check=False)
    with pytest.raises(RootNotBracketedError):
        convex_reduction_threshold(ell, 0.0)


def test_reduce_to_linear_returns_lower():
    ell = _general(lambda t, x: x + np.exp(x / 2) - 1 - t, lambda t, x: 1 + np.exp(x / 2) / 2,
                   lambda t, x: np.exp(x / 2) / 4, "convex", K_lower=1.0)
    lin = reduce_to_linear(ell, make_grid(1.0, 4))
    assert isinstance(lin, LinearLower)
    for t in (0.0, 0.5, 1.0):
        x = float(lin.nu(t))
        assert abs(x + np.exp(x / 2) - 1 - t) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.1, 5), c=st.floats(-5, 5))
def test_threshold_zero_of_family(a, c):
    # l(x) = a x + exp(x) - exp(c) is convex, increasing, root is not trivial
    ell = _general(lambda t, x: a * x + np.exp(x) - np.exp(c), lambda t, x: a + np.exp(x),
                   lambda t, x: np.exp(x), "convex", check=False)
    x = convex_reduction_threshold(ell, 0.0)
    assert abs(a * x + np.exp(x) - np.exp(c)) <= 1e-9 * max(1.0, np.exp(c))
