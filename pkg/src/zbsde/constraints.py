"""Constraint functions l(t, x) for E[l(t, Z_t)] >= 0."""
from __future__ import annotations

import numpy as np
from scipy.optimize import bisect

from .errors import InvalidConfigError, RootNotBracketedError

__all__ = [
    "Constraint",
    "LinearLower",
    "LinearUpper",
    "Bilateral",
    "General",
    "eval_constraint",
    "convex_reduction_threshold",
    "reduce_to_linear",
]

CURVATURES = ("convex", "concave", "linear")


def _time_fn(v):
    if callable(v):
        return v
    c = float(v)
    return lambda t: np.full(np.shape(t), c) if np.ndim(t) else c


def _scalar(v):
    return float(np.asarray(v, dtype=float))


class Constraint:
    kind = "constraint"
    curvature = "linear"

    def value(self, t, z):
        raise NotImplementedError

    def dx(self, t, z):
        raise NotImplementedError

    def dxx(self, t, z):
        return np.zeros_like(np.asarray(z, float))


class LinearLower(Constraint):
    """l(t, x) = x - nu(t)."""

    kind = "linear_lower"

    def __init__(self, nu=0.0):
        self.nu = _time_fn(nu)

    def value(self, t, z):
        return np.asarray(z, float) - _scalar(self.nu(t))

    def dx(self, t, z):
        return np.ones_like(np.asarray(z, float))


class LinearUpper(Constraint):
    """l(t, x) = nu(t) - x, i.e. E[Z_t] <= nu(t)."""

    kind = "linear_upper"

    def __init__(self, nu=0.0):
        self.nu = _time_fn(nu)

    def value(self, t, z):
        return _scalar(self.nu(t)) - np.asarray(z, float)

    def dx(self, t, z):
        return -np.ones_like(np.asarray(z, float))


class Bilateral(Constraint):
    """nu_low(t) <= E[Z_t] <= nu_high(t), reported as two one-sided constraints."""

    kind = "bilateral"

    def __init__(self, nu_low, nu_high):
        self.nu_low = _time_fn(nu_low)
        self.nu_high = _time_fn(nu_high)
        self.lower = LinearLower(self.nu_low)
        self.upper = LinearUpper(self.nu_high)

    def value(self, t, z):
        raise InvalidConfigError("bilateral constraints are evaluated through their two sides")

    dx = value


class General(Constraint):
    """Nonlinear constraint with declared derivative bounds.

    Parameters
    ----------
    ell, dx, dxx : callable
        l(t, x) and its first two x-derivatives (vectorized in x).
    curvature : {"convex", "concave", "linear"}
    dt : callable, optional
        Partial derivative in t.
    K_lower : float, optional
        Declared lower bound of dl/dx (> 0). Sampled minimum when omitted.
    C, C_lower : float, optional
        Bounds with -C_lower <= dxx / dx**2 <= C.
    M_bar : float, optional
        Bound on |dl/dt|.
    K_bar : float, optional
        Upper bound of dl/dx.
    """

    kind = "general"

    def __init__(self, ell, dx, dxx, curvature, dt=None, K_lower=None, C=None, C_lower=None,
                 M_bar=None, K_bar=None, horizon: float = 1.0, check: bool = True):
        if curvature not in CURVATURES:
            raise InvalidConfigError(f"constraint.curvature must be one of {CURVATURES}")
        self.ell, self._dx, self._dxx, self._dt = ell, dx, dxx, dt
        self.curvature = curvature
        self.K_lower, self.C, self.C_lower = K_lower, C, C_lower
        self.M_bar, self.K_bar = M_bar, K_bar
        if check:
            self._check_lattice(horizon)

    def _arr(self, fn, t, z):
        z = np.asarray(z, float)
        return np.broadcast_to(np.asarray(fn(t, z), float), z.shape).astype(float)

    def value(self, t, z):
        return self._arr(self.ell, t, z)

    def dx(self, t, z):
        return self._arr(self._dx, t, z)

    def dxx(self, t, z):
        return self._arr(self._dxx, t, z)

    def dt(self, t, z):
        if self._dt is None:
            return None
        return self._arr(self._dt, t, z)

    def _check_lattice(self, horizon):
        xs = np.linspace(-5.0, 5.0, 201)
        mins = []
        for t in np.linspace(0.0, horizon, 5):
            d1, d2 = self.dx(t, xs), self.dxx(t, xs)
            mins.append(np.min(d1))
            if self.curvature == "convex" and np.any(d2 < -1e-9):
                raise InvalidConfigError("constraint flagged convex but d2l/dx2 < 0 on the lattice")
            if self.curvature == "concave" and np.any(d2 > 1e-9):
                raise InvalidConfigError("constraint flagged concave but d2l/dx2 > 0 on the lattice")
            if self.curvature == "linear" and np.any(np.abs(d2) > 1e-9):
                raise InvalidConfigError("constraint flagged linear but d2l/dx2 != 0 on the lattice")
        lo = float(min(mins))
        if self.K_lower is None:
            if lo <= 0:
                raise InvalidConfigError("dl/dx must be bounded below by a positive constant")
            self.K_lower = lo
        elif self.K_lower <= 0:
            raise InvalidConfigError("constraint.K_lower must be > 0")
        elif lo < self.K_lower - 1e-9:
            raise InvalidConfigError(
                f"dl/dx sampled down to {lo:.6g}, below declared K_lower={self.K_lower:.6g}")


def eval_constraint(ell: Constraint, t: float, z):
    """l(t, z)."""
    if isinstance(ell, Bilateral):
        raise InvalidConfigError("use the two sides of a bilateral constraint")
    return ell.value(t, z)


def convex_reduction_threshold(ell: Constraint, t: float, xtol: float = 1e-10,
                               limit: float = 1e6) -> float:
    """Root x* of l(t, x) = 0 so that E[Z_t] >= x* implies E[l(t, Z_t)] >= 0.

    The bracket starts at [-1, 1] and grows tenfold up to [-limit, limit].
    """
    if isinstance(ell, LinearLower):
        return _scalar(ell.nu(t))
    if ell.curvature == "concave":
        raise InvalidConfigError("convex reduction needs a convex (or linear) constraint")
    def g(x):
        with np.errstate(over="ignore"):
            return float(ell.value(t, np.array([x]))[0])
    width = 1.0
    while True:
        lo, hi = g(-width), g(width)
        if np.sign(lo) != np.sign(hi) or lo == 0 or hi == 0:
            break
        if width >= limit:
            raise RootNotBracketedError(
                f"no sign change of l(t, .) on [-{limit:g}, {limit:g}] at t={t:g}")
        width = min(width * 10.0, limit)
    if lo == 0:
        return -width
    if hi == 0:
        return width
    return float(bisect(g, -width, width, xtol=xtol, maxiter=500))


def reduce_to_linear(ell: Constraint, grid) -> LinearLower:
    """LinearLower constraint with nu(t_k) = x*(t_k) on the grid."""
    roots = np.array([convex_reduction_threshold(ell, t) for t in grid.times])
    times = grid.times.copy()
    return LinearLower(lambda t: np.interp(t, times, roots))
