"""Terminal payoffs with exact Malliavin derivatives and their moment estimators."""
from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, ShapeError
from .paths import EstimateCI, PathEnsemble, as_grid_values, ito_integral

__all__ = [
    "Payoff",
    "WienerIntegral",
    "GeometricExponential",
    "Cylinder",
    "Constant",
    "DxiMoments",
    "eval_payoff",
    "malliavin_payoff",
    "dxi_moments",
    "malliavin_fd_oracle",
    "lp_moment",
]


class Payoff:
    """Base class. Subclasses evaluate xi and D_t xi on a whole ensemble."""

    kind = "payoff"
    #: D_t xi is the same on every path
    deterministic_derivative = False
    #: lower bound of xi, or None when unbounded below
    infimum: float | None = None

    def evaluate(self, paths: PathEnsemble) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, paths: PathEnsemble, k: int) -> np.ndarray:
        """D_{t_k} xi per path (length n_paths)."""
        raise NotImplementedError

    def exact_mean(self, T: float) -> float | None:
        """E[xi] when known in closed form."""
        return None

    def increment_derivative(self, paths: PathEnsemble, j: int) -> np.ndarray:
        """d xi / d(dB_j) divided by dt_j: D_s xi for s inside step j."""
        return self.derivative(paths, j)

    def state_features(self, paths: PathEnsemble, k: int) -> list[np.ndarray]:
        """Adapted quantities at t_k that the payoff depends on (regression aids)."""
        return []

    def validate(self, grid) -> None:
        pass


class WienerIntegral(Payoff):
    """xi = int_0^T lambda(t) dB_t for a deterministic lambda."""

    kind = "wiener_integral"
    deterministic_derivative = True

    def __init__(self, lam):
        self.lam = lam
        self._cache = None

    def values(self, grid) -> np.ndarray:
        lv = as_grid_values(self.lam, grid, "payoff.lambda")
        if not np.all(np.isfinite(lv)):
            raise InvalidConfigError("payoff.lambda must be finite on the grid")
        return lv

    def running(self, paths: PathEnsemble) -> np.ndarray:
        """I_t = int_0^t lambda dB, shape (n_paths, n_steps + 1)."""
        if self._cache is None or self._cache[0]() is not paths.increments:
            run = ito_integral(paths, self.values(paths.grid), cumulative=True)
            self._cache = (weakref.ref(paths.increments), run)
        return self._cache[1]

    def evaluate(self, paths):
        return self.running(paths)[:, -1].copy()

    def derivative(self, paths, k):
        return np.full(paths.n_paths, self.values(paths.grid)[k])

    def exact_mean(self, T):
        return 0.0

    def state_features(self, paths, k):
        return [self.running(paths)[:, k]]

    def validate(self, grid):
        self.values(grid)


class GeometricExponential(Payoff):
    """xi = exp(sign * B_T - T/2) with sign = +1 or -1."""

    kind = "geometric"
    infimum = 0.0

    def __init__(self, sign: int = 1):
        if sign not in (1, -1):
            raise InvalidConfigError(f"payoff.sign must be +1 or -1, got {sign!r}")
        self.sign = int(sign)

    def martingale(self, paths: PathEnsemble, k: int) -> np.ndarray:
        """E_{t_k}[xi] = exp(sign * B_{t_k} - t_k/2)."""
        return np.exp(self.sign * paths.B[:, k] - paths.grid.times[k] / 2)

    def evaluate(self, paths):
        return self.martingale(paths, paths.grid.n_steps)

    def derivative(self, paths, k):
        return self.sign * self.evaluate(paths)

    def exact_mean(self, T):
        return 1.0

    def state_features(self, paths, k):
        return [self.martingale(paths, k)]


class Cylinder(Payoff):
    """xi = g(B_{t_1}, ..., B_{t_m}) for a smooth function g of m reals.

    Parameters
    ----------
    g : callable
        ``g(X)`` with X of shape (n_paths, m), returns (n_paths,).
    times : sequence of float
        Observation times, on the grid.
    grad : callable, optional
        ``grad(X)`` returning (n_paths, m) partial derivatives. Central finite
        differences with a magnitude-scaled step are used otherwise.
    """

    kind = "cylinder"

    def __init__(self, g, times, grad=None, infimum=None):
        self.g = g
        self.times = tuple(float(t) for t in times)
        if not self.times:
            raise InvalidConfigError("payoff.times must not be empty")
        self.grad = grad
        self.infimum = infimum

    def _indices(self, grid):
        return [grid.index_of(t) for t in self.times]

    def validate(self, grid):
        self._indices(grid)

    def observations(self, paths):
        return paths.B[:, self._indices(paths.grid)]

    def _call(self, X):
        out = np.asarray(self.g(X), dtype=float)
        if out.ndim == 0:
            out = np.full(X.shape[0], float(out))
        if out.shape != (X.shape[0],):
            raise ShapeError(f"cylinder g returned shape {out.shape}")
        return out

    def evaluate(self, paths):
        return self._call(self.observations(paths))

    def partials(self, X):
        if self.grad is not None:
            G = np.asarray(self.grad(X), dtype=float)
            return np.broadcast_to(G, X.shape).copy()
        G = np.empty_like(X)
        for i in range(X.shape[1]):
            h = 1e-5 * np.maximum(1.0, np.abs(X[:, i]))
            up, dn = X.copy(), X.copy()
            up[:, i] += h
            dn[:, i] -= h
            G[:, i] = (self._call(up) - self._call(dn)) / (2 * h)
        return G

    def derivative(self, paths, k):
        t = paths.grid.times[k]
        G = self.partials(self.observations(paths))
        active = np.array([t <= ti + 1e-12 for ti in self.times])
        return G[:, active].sum(axis=1) if active.any() else np.zeros(paths.n_paths)

    def increment_derivative(self, paths, j):
        # step j lies inside [0, t_i] only when t_j < t_i
        t = paths.grid.times[j]
        G = self.partials(self.observations(paths))
        active = np.array([t < ti - 1e-12 for ti in self.times])
        return G[:, active].sum(axis=1) if active.any() else np.zeros(paths.n_paths)

    def state_features(self, paths, k):
        # frozen observations B_{t_i ^ t} and g evaluated on them
        idx = [min(i, k) for i in self._indices(paths.grid)]
        X = paths.B[:, idx]
        return [X[:, j] for j in range(X.shape[1])] + [self._call(X)]


class Constant(Payoff):
    """xi = c."""

    kind = "constant"
    deterministic_derivative = True

    def __init__(self, c: float):
        self.c = float(c)
        self.infimum = self.c

    def evaluate(self, paths):
        return np.full(paths.n_paths, self.c)

    def derivative(self, paths, k):
        return np.zeros(paths.n_paths)

    def exact_mean(self, T):
        return self.c


def eval_payoff(xi: Payoff, paths: PathEnsemble) -> np.ndarray:
    """Pathwise value of xi on every path of the ensemble."""
    xi.validate(paths.grid)
    return xi.evaluate(paths)


def malliavin_payoff(xi: Payoff, t: float, paths: PathEnsemble) -> np.ndarray:
    """Exact D_t xi per path; ``t`` must be a grid time."""
    k = paths.grid.index_of(t)
    xi.validate(paths.grid)
    return xi.derivative(paths, k)


def lp_moment(x: np.ndarray, power: float) -> EstimateCI:
    """E[x**power]**(1/power) for x >= 0, delta-method standard error."""
    m = EstimateCI.from_samples(np.power(x, power))
    if m.mean <= 0:
        return EstimateCI(0.0, 0.0, m.n_samples)
    est = m.mean ** (1.0 / power)
    if m.stderr == 0.0:
        # a constant sample is exact; avoid the pow round trip
        return EstimateCI(float(x.flat[0]) if np.all(x == x.flat[0]) else est, 0.0, m.n_samples)
    se = abs(1.0 / power) * m.mean ** (1.0 / power - 1.0) * m.stderr
    return EstimateCI(est, se, m.n_samples)


@dataclass(frozen=True)
class DxiMoments:
    """Moments of the positive and negative parts of D_t xi.

    ``lp_pos`` estimates E[|D_t xi^+|^(1/q+)]^(q+) and ``lp_neg`` estimates
    E[|D_t xi^-|^(q-)]^(1/q-).
    """

    t: float
    mean_pos: EstimateCI
    mean_neg: EstimateCI
    lp_pos: EstimateCI
    lp_neg: EstimateCI
    q_pos: float
    q_neg: float

    @property
    def mean(self) -> EstimateCI:
        """E[D_t xi] from the two sign parts (stderr combined conservatively)."""
        return EstimateCI(self.mean_pos.mean - self.mean_neg.mean,
                          self.mean_pos.stderr + self.mean_neg.stderr,
                          self.mean_pos.n_samples)


def split_signs(D: np.ndarray):
    return np.maximum(D, 0.0), np.maximum(-D, 0.0)


def moments_from_derivative(D: np.ndarray, t: float, q_neg: float = 2.0, q_pos: float = 2.0) -> DxiMoments:
    if not (q_neg > 1 and q_pos > 1):
        raise InvalidConfigError(f"moment exponents must be > 1, got q-={q_neg!r}, q+={q_pos!r}")
    pos, neg = split_signs(D)
    return DxiMoments(
        t=float(t),
        mean_pos=EstimateCI.from_samples(pos),
        mean_neg=EstimateCI.from_samples(neg),
        lp_pos=lp_moment(pos, 1.0 / q_pos),
        lp_neg=lp_moment(neg, q_neg),
        q_pos=float(q_pos),
        q_neg=float(q_neg),
    )


def dxi_moments(xi: Payoff, t: float, paths: PathEnsemble, q_neg: float = 2.0,
                q_pos: float = 2.0) -> DxiMoments:
    """Monte Carlo moments of D_t xi^+ and D_t xi^- at grid time ``t``."""
    return moments_from_derivative(malliavin_payoff(xi, t, paths), t, q_neg, q_pos)


def malliavin_fd_oracle(xi: Payoff, t: float, paths: PathEnsemble, eps: float = 1e-5) -> np.ndarray:
    """Finite-difference directional derivative of xi along 1_[t,T].

    Each increment over a step starting at or after ``t`` is bumped by
    ``eps * dt_k``; the difference quotient is normalized by ``T - t`` so the
    result is the average of D_s xi over [t, T] (on the grid).
    """
    if eps <= 0:
        raise InvalidConfigError("eps must be > 0")
    grid = paths.grid
    k = grid.index_of(t)
    if k >= grid.n_steps:
        raise InvalidConfigError("the oracle needs t < T")
    bump = np.zeros(grid.n_steps)
    bump[k:] = eps * grid.dt[k:]
    bumped = paths.with_increments(paths.increments + bump)
    span = grid.T - grid.times[k]
    return (xi.evaluate(bumped) - xi.evaluate(paths)) / (eps * span)


def grid_average_derivative(xi: Payoff, t: float, paths: PathEnsemble) -> np.ndarray:
    """Average of the exact D_s xi over grid steps s >= t, weighted by dt."""
    grid = paths.grid
    k = grid.index_of(t)
    acc = np.zeros(paths.n_paths)
    for j in range(k, grid.n_steps):
        acc += xi.increment_derivative(paths, j) * grid.dt[j]
    return acc / (grid.T - grid.times[k])
