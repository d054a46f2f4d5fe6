import numpy as np
import pytest

from zbsde import _backend, _pykernels
from zbsde.regression import RegressionBasis  # noqa: F401  (import check)

pytestmark = pytest.mark.skipif("cython" not in _backend.available(),
                                reason="compiled kernels not built")


@pytest.fixture
def data():
    rng = np.random.default_rng(0)
    V = np.ascontiguousarray(rng.standard_normal((10_000, 2)))
    powers = np.array([[i, j] for i in range(4) for j in range(4) if i + j <= 3], dtype=np.int32)
    Y = np.ascontiguousarray(rng.standard_normal((10_000, 2)))
    return V, powers, Y


def _ck():
    from zbsde import _ckernels
    return _ckernels


@pytest.mark.parametrize("threads", [1, 4])
def test_gram_agrees(data, threads):
    V, powers, Y = data
    Gc, Rc = _ck().gram(V, powers, Y, True, threads)
    Gp, Rp = _pykernels.gram(V, powers, Y, True, 1)
    np.testing.assert_allclose(Gc, Gp, rtol=1e-10)
    np.testing.assert_allclose(Rc, Rp, rtol=1e-10, atol=1e-9)


def test_gram_thread_invariant(data):
    V, powers, Y = data
    a = _ck().gram(V, powers, Y, True, 1)
    b = _ck().gram(V, powers, Y, True, 8)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_predict_agrees(data):
    V, powers, _ = data
    coef = np.ascontiguousarray(np.random.default_rng(1).standard_normal((powers.shape[0], 2)))
    np.testing.assert_allclose(_ck().predict(V, powers, coef, 2),
                               _pykernels.predict(V, powers, coef), rtol=1e-10, atol=1e-10)


def test_stoch_exp_agrees():
    rng = np.random.default_rng(2)
    n = 30
    dB = np.ascontiguousarray(rng.standard_normal((500, n)) * 0.1)
    slope = np.full(n, 0.7)
    drift = 0.5 * slope ** 2 * 0.01
    dt = np.full(n, 0.01)
    kc, Kc = _ck().stoch_exp(dB, slope, drift, dt, 3)
    kp, Kp = _pykernels.stoch_exp(dB, slope, drift, dt)
    np.testing.assert_allclose(kc, kp, rtol=1e-12)
    np.testing.assert_allclose(Kc, Kp, rtol=1e-12)


def test_use_backend_switches():
    prev = _backend.use_backend("python")
    try:
        assert _backend.backend_name() == "python"
    finally:
        _backend.use_backend(prev)
    with pytest.raises(ValueError):
        _backend.use_backend("fortran")
