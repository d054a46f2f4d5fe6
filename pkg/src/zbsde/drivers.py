"""BSDE generators f(t, B_t, y, z) with their declared derivative bounds.

Every driver carries sup dY, inf dY, sup |dZ| and the Malliavin bound ``d``;
the feasibility formulas only ever see these four numbers. Markovian drivers
depend on the path through B_t alone, so D_r f(s, .) = df/db(s, .) 1_{r <= s}.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidConfigError, OrderingError, ShapeError
from .paths import PathEnsemble

__all__ = [
    "Driver",
    "ZeroDriver",
    "ExpInverseDriver",
    "LinearDriver",
    "CustomDriver",
    "ShiftedDriver",
    "PenaltyDriver",
    "eval_driver",
    "gamma_weights",
    "log_gamma_running",
    "check_declared_bounds",
]

BOUND_TOL = 1e-6


def _full(x, like):
    return np.broadcast_to(np.asarray(x, dtype=float), np.shape(like)).astype(float)


class Driver:
    """Base generator. Arrays ``b, y, z`` share one shape; ``t`` is a scalar."""

    kind = "driver"
    supdY = 0.0
    infdY = 0.0
    supAbsdZ = 0.0
    d = 0.0
    #: value depends on B_t
    state_dependent = False
    #: dY, dZ do not depend on (y, z)
    derivatives_free_of_yz = True
    #: lower bound of f, or None
    infimum: float | None = None

    def value(self, t, b, y, z):
        raise NotImplementedError

    def dy(self, t, b, y, z):
        return _full(0.0, b)

    def dz(self, t, b, y, z):
        return _full(0.0, b)

    def db(self, t, b, y, z):
        """df/db, the Malliavin derivative of f for r <= s; None if unknown."""
        return _full(0.0, b)

    @property
    def is_zero(self) -> bool:
        return False

    @property
    def sup_abs_dY(self) -> float:
        return max(abs(self.supdY), abs(self.infdY))

    def bounds(self) -> dict:
        return {"supdY": self.supdY, "infdY": self.infdY,
                "supAbsdZ": self.supAbsdZ, "d": self.d}

    def _check_invariants(self):
        if not self.infdY <= self.supdY:
            raise InvalidConfigError("driver.infdY must be <= driver.supdY")
        if self.supAbsdZ < 0:
            raise InvalidConfigError("driver.supAbsdZ must be >= 0")
        if not self.d >= 0:
            raise InvalidConfigError("driver.d must be >= 0")


class ZeroDriver(Driver):
    kind = "zero"
    infimum = 0.0

    def value(self, t, b, y, z):
        return _full(0.0, b)

    @property
    def is_zero(self):
        return True


class ExpInverseDriver(Driver):
    """f = exp(-B_t - t/2).

    Its Malliavin derivative -f is unbounded, so ``d`` is infinite.
    """

    kind = "exp_inverse"
    state_dependent = True
    d = float("inf")
    infimum = 0.0

    def value(self, t, b, y, z):
        return np.exp(-np.asarray(b, dtype=float) - t / 2)

    def db(self, t, b, y, z):
        return -self.value(t, b, y, z)


def _time_fn(v):
    if callable(v):
        return v
    c = float(v)
    return lambda t: c


class LinearDriver(Driver):
    """f = a(t) y + b(t) z + c(t) with deterministic coefficients.

    Coefficients are floats or vectorized callables of t. Bounds are taken
    over ``horizon`` by sampling when not declared.
    """

    kind = "linear"

    def __init__(self, a=0.0, b=0.0, c=0.0, horizon: float = 1.0, n_samples: int = 1001):
        self.a, self.b, self.c = _time_fn(a), _time_fn(b), _time_fn(c)
        ts = np.linspace(0.0, horizon, n_samples)
        av = np.broadcast_to(np.asarray(self.a(ts), float), ts.shape)
        bv = np.broadcast_to(np.asarray(self.b(ts), float), ts.shape)
        cv = np.broadcast_to(np.asarray(self.c(ts), float), ts.shape)
        if not (np.all(np.isfinite(av)) and np.all(np.isfinite(bv)) and np.all(np.isfinite(cv))):
            raise InvalidConfigError("driver coefficients must be finite on [0, T]")
        self.supdY, self.infdY = float(av.max()), float(av.min())
        self.supAbsdZ = float(np.abs(bv).max())
        self.d = 0.0
        self._zero = not (av.any() or bv.any() or cv.any())
        self.infimum = float(cv.min()) if not (av.any() or bv.any()) else None
        self._check_invariants()

    def value(self, t, b, y, z):
        return _full(float(self.a(t)) * np.asarray(y, float)
                     + float(self.b(t)) * np.asarray(z, float) + float(self.c(t)), b)

    def dy(self, t, b, y, z):
        return _full(float(self.a(t)), b)

    def dz(self, t, b, y, z):
        return _full(float(self.b(t)), b)

    @property
    def is_zero(self):
        return self._zero


class CustomDriver(Driver):
    """User generator f(t, b, y, z) with declared bounds.

    Parameters
    ----------
    f : callable
        Vectorized generator.
    dfdy, dfdz, dfdb : callable, optional
        Partial derivatives; central differences are used when missing
        (``dfdb`` missing means the Malliavin derivative is unavailable
        unless ``state_dependent`` is False).
    supdY, infdY, supAbsdZ, d : float
        Declared bounds, spot-checked on a lattice at construction.
    """

    kind = "custom"

    def __init__(self, f, supdY, infdY, supAbsdZ, d, dfdy=None, dfdz=None, dfdb=None,
                 state_dependent=True, derivatives_free_of_yz=False, infimum=None,
                 horizon: float = 1.0, check: bool = True):
        if f is None or not callable(f):
            raise InvalidConfigError("custom driver needs a callable f")
        self.f = f
        self._dfdy, self._dfdz, self._dfdb = dfdy, dfdz, dfdb
        self.supdY, self.infdY = float(supdY), float(infdY)
        self.supAbsdZ, self.d = float(supAbsdZ), float(d)
        self.state_dependent = bool(state_dependent)
        self.derivatives_free_of_yz = bool(derivatives_free_of_yz)
        self.infimum = infimum
        self._check_invariants()
        if check:
            check_declared_bounds(self, horizon)

    def value(self, t, b, y, z):
        b = np.asarray(b, float)
        return _full(self.f(t, b, np.asarray(y, float), np.asarray(z, float)), b)

    def _fd(self, t, b, y, z, which):
        b, y, z = (np.asarray(v, float) for v in (b, y, z))
        h = 1e-5
        args_up = [b, y, z]
        args_dn = [b, y, z]
        args_up[which] = args_up[which] + h
        args_dn[which] = args_dn[which] - h
        return (self.value(t, *args_up) - self.value(t, *args_dn)) / (2 * h)

    def dy(self, t, b, y, z):
        if self._dfdy is not None:
            return _full(self._dfdy(t, b, y, z), b)
        return self._fd(t, b, y, z, 1)

    def dz(self, t, b, y, z):
        if self._dfdz is not None:
            return _full(self._dfdz(t, b, y, z), b)
        return self._fd(t, b, y, z, 2)

    def db(self, t, b, y, z):
        if self._dfdb is not None:
            return _full(self._dfdb(t, b, y, z), b)
        if not self.state_dependent:
            return _full(0.0, b)
        return None


class ShiftedDriver(Driver):
    """base + shift(t) with a deterministic shift given on grid times."""

    kind = "shifted"

    def __init__(self, base: Driver, times, shift):
        self.base = base
        self.times = np.asarray(times, float)
        self.shift = np.asarray(shift, float)
        if self.shift.shape != self.times.shape:
            raise ShapeError("shift must be given on the grid")
        for name in ("supdY", "infdY", "supAbsdZ", "d", "state_dependent",
                     "derivatives_free_of_yz"):
            setattr(self, name, getattr(base, name))
        self.infimum = None if base.infimum is None else base.infimum + float(self.shift.min())

    def value(self, t, b, y, z):
        return self.base.value(t, b, y, z) + float(np.interp(t, self.times, self.shift))

    def dy(self, t, b, y, z):
        return self.base.dy(t, b, y, z)

    def dz(self, t, b, y, z):
        return self.base.dz(t, b, y, z)

    def db(self, t, b, y, z):
        return self.base.db(t, b, y, z)


class PenaltyDriver(Driver):
    """base + n (1 - z)^+, the almost-sure penalty for the constraint Z >= 1."""

    kind = "penalty"

    def __init__(self, base: Driver, n: float, level: float = 1.0):
        self.base, self.n, self.level = base, float(n), float(level)
        for name in ("supdY", "infdY", "d", "state_dependent"):
            setattr(self, name, getattr(base, name))
        self.supAbsdZ = base.supAbsdZ + abs(self.n)
        self.derivatives_free_of_yz = False
        self.infimum = base.infimum

    def value(self, t, b, y, z):
        return self.base.value(t, b, y, z) + self.n * np.maximum(self.level - np.asarray(z, float), 0.0)

    def dy(self, t, b, y, z):
        return self.base.dy(t, b, y, z)

    def dz(self, t, b, y, z):
        return self.base.dz(t, b, y, z) - self.n * (np.asarray(z, float) < self.level)

    def db(self, t, b, y, z):
        return self.base.db(t, b, y, z)


def check_declared_bounds(f: Driver, horizon: float = 1.0, n_t: int = 5, n_x: int = 9) -> None:
    """Sample derivatives on a lattice and reject bounds violated by > 1e-6."""
    ts = np.linspace(0.0, horizon, n_t)
    axis = np.linspace(-3.0, 3.0, n_x)
    b, y, z = (v.ravel() for v in np.meshgrid(axis, axis, axis, indexing="ij"))
    for t in ts:
        dy = f.dy(t, b, y, z)
        dz = f.dz(t, b, y, z)
        if np.any(dy > f.supdY + BOUND_TOL) or np.any(dy < f.infdY - BOUND_TOL):
            raise InvalidConfigError(
                f"driver dY sampled in [{dy.min():.6g}, {dy.max():.6g}] violates declared "
                f"[{f.infdY:.6g}, {f.supdY:.6g}] at t={t:.6g}")
        if np.any(np.abs(dz) > f.supAbsdZ + BOUND_TOL):
            raise InvalidConfigError(
                f"driver |dZ| sampled up to {np.abs(dz).max():.6g} exceeds declared "
                f"supAbsdZ={f.supAbsdZ:.6g} at t={t:.6g}")
        db = f.db(t, b, y, z)
        if db is not None and np.any(np.abs(db) > f.d + BOUND_TOL):
            raise InvalidConfigError(
                f"driver Malliavin derivative sampled up to {np.abs(db).max():.6g} exceeds "
                f"declared d={f.d:.6g} at t={t:.6g}")


def eval_driver(f: Driver, t: float, b, y, z) -> np.ndarray:
    """Pathwise generator value f(t, B_t, y, z)."""
    if f is None:
        raise InvalidConfigError("driver is missing")
    return f.value(t, np.asarray(b, float), y, z)


def _yz(arr, paths, k):
    if arr is None:
        return np.zeros(paths.n_paths)
    return arr[:, k]


def log_gamma_running(paths: PathEnsemble, f: Driver, Y=None, Z=None, start: int = 0,
                      drift: bool = True) -> np.ndarray:
    """log Gamma_{t_start}^{t_s} for s = start..n, shape (n_paths, n - start + 1).

    Left-point rule for the dB term. ``drift=False`` drops the dY part
    (the tilde weight).
    """
    grid = paths.grid
    n = grid.n_steps
    out = np.zeros((paths.n_paths, n - start + 1))
    if f.is_zero:
        return out
    acc = np.zeros(paths.n_paths)
    B = paths.B
    for j in range(start, n):
        t = grid.times[j]
        y, z = _yz(Y, paths, j), _yz(Z, paths, j)
        dz = f.dz(t, B[:, j], y, z)
        step = dz * paths.increments[:, j] - 0.5 * dz * dz * grid.dt[j]
        if drift:
            step = step + f.dy(t, B[:, j], y, z) * grid.dt[j]
        acc = acc + step
        out[:, j - start + 1] = acc
    return out


def gamma_weights(paths: PathEnsemble, f: Driver, Y, Z, t: float, s: float):
    """Pathwise (Gamma_t^s, tilde Gamma_t^s).

    ``Y`` and ``Z`` are (n_paths, n_steps + 1) arrays or None when the
    driver derivatives do not depend on them.
    """
    grid = paths.grid
    kt, ks = grid.index_of(t), grid.index_of(s)
    if kt > ks:
        raise OrderingError(f"gamma weights need t <= s, got t={t}, s={s}")
    if not f.derivatives_free_of_yz and (Y is None or Z is None):
        raise InvalidConfigError("this driver needs Y and Z to evaluate gamma weights")
    full = log_gamma_running(paths, f, Y, Z, kt, drift=True)[:, ks - kt]
    tilde = log_gamma_running(paths, f, Y, Z, kt, drift=False)[:, ks - kt]
    return np.exp(full), np.exp(tilde)
