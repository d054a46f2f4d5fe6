"""Time grids, reproducible Brownian ensembles and pathwise stochastic calculus.

Paths are generated in blocks of ``BLOCK`` rows. Block ``b`` draws from a
Philox generator keyed by the seed with counter ``b``, so the increments of a
given path never depend on how many paths are requested in total or on how
many threads fill the blocks.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import InvalidConfigError, ShapeError

__all__ = [
    "TimeGrid",
    "PathEnsemble",
    "EstimateCI",
    "make_grid",
    "simulate_brownian",
    "coarsen",
    "ito_integral",
    "stochastic_exponential",
    "as_grid_values",
]

BLOCK = 256
GRID_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Discretization of [0, T].

    Attributes
    ----------
    T : float
        Horizon.
    n_steps : int
        Number of steps.
    times : ndarray, shape (n_steps + 1,)
        Strictly increasing, ``times[0] == 0`` and ``times[-1] == T``.
    """

    T: float
    n_steps: int
    times: np.ndarray = field(repr=False)

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def index_of(self, t: float) -> int:
        """Index of grid time ``t``; off-grid times raise InvalidConfigError."""
        k = int(np.searchsorted(self.times, t - GRID_TOL * max(1.0, self.T)))
        if k > self.n_steps or abs(self.times[k] - t) > GRID_TOL * max(1.0, self.T):
            raise InvalidConfigError(f"time {t!r} is not on the grid")
        return k

    def tau(self) -> np.ndarray:
        """Time to maturity T - t_k on the grid."""
        return self.T - self.times


def make_grid(T: float, n_steps: int) -> TimeGrid:
    """Uniform grid with spacing T / n_steps.

    Examples
    --------
    >>> make_grid(1.0, 4).times
    array([0.  , 0.25, 0.5 , 0.75, 1.  ])
    """
    if not np.isfinite(T) or T <= 0:
        raise InvalidConfigError(f"grid.T must be > 0, got {T!r}")
    if int(n_steps) != n_steps or n_steps < 1:
        raise InvalidConfigError(f"grid.n_steps must be an integer >= 1, got {n_steps!r}")
    n_steps = int(n_steps)
    times = np.arange(n_steps + 1, dtype=float) * (float(T) / n_steps)
    times[-1] = float(T)
    times.flags.writeable = False
    return TimeGrid(float(T), n_steps, times)


@dataclass
class PathEnsemble:
    """Brownian increments on a shared grid.

    ``increments[i, k]`` is B_{t_{k+1}} - B_{t_k} on path i. ``B`` (with the
    leading zero column) is built lazily.
    """

    grid: TimeGrid
    increments: np.ndarray = field(repr=False)
    seed: int
    workers: int = 1
    _B: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def B(self) -> np.ndarray:
        if self._B is None:
            B = np.zeros((self.n_paths, self.grid.n_steps + 1))
            np.cumsum(self.increments, axis=1, out=B[:, 1:])
            self._B = B
        return self._B

    def with_increments(self, increments: np.ndarray) -> "PathEnsemble":
        """Copy of the ensemble with modified increments (bump oracles)."""
        return PathEnsemble(self.grid, increments, self.seed, self.workers)

    def subset(self, rows) -> "PathEnsemble":
        """Ensemble restricted to the given path rows (a slice or index array)."""
        sub = PathEnsemble(self.grid, self.increments[rows], self.seed, self.workers)
        if self._B is not None:
            sub._B = self._B[rows]
        return sub


def _block(seed: int, block: int, rows: int, n_steps: int) -> np.ndarray:
    bitgen = np.random.Philox(key=seed, counter=[0, 0, 0, block])
    return np.random.Generator(bitgen).standard_normal((rows, n_steps))


def simulate_brownian(grid: TimeGrid, n_paths: int, seed: int, workers: int = 1) -> PathEnsemble:
    """Simulate ``n_paths`` Brownian paths on ``grid``.

    Parameters
    ----------
    grid : TimeGrid
    n_paths : int
        Number of paths (>= 1).
    seed : int
        Non-negative key of the counter-based generator (< 2**64).
    workers : int
        Threads used to fill blocks; the output does not depend on it.
    """
    if int(n_paths) != n_paths or n_paths < 1:
        raise InvalidConfigError(f"mc.n_paths must be an integer >= 1, got {n_paths!r}")
    if int(seed) != seed or not 0 <= seed < 2**64:
        raise InvalidConfigError(f"mc.seed must be an integer in [0, 2**64), got {seed!r}")
    n_paths, seed, workers = int(n_paths), int(seed), max(1, int(workers))
    n = grid.n_steps
    out = np.empty((n_paths, n))
    starts = range(0, n_paths, BLOCK)

    def fill(start):
        rows = min(BLOCK, n_paths - start)
        out[start:start + rows] = _block(seed, start // BLOCK, rows, n)

    if workers == 1:
        for s in starts:
            fill(s)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, starts))
    out *= np.sqrt(grid.dt)
    return PathEnsemble(grid, out, seed, workers)


def coarsen(paths: PathEnsemble, factor: int) -> PathEnsemble:
    """Same Brownian paths observed on every ``factor``-th grid point."""
    n = paths.grid.n_steps
    if factor < 1 or n % factor:
        raise InvalidConfigError(f"coarsening factor {factor} does not divide {n} steps")
    grid = make_grid(paths.grid.T, n // factor)
    inc = paths.increments.reshape(paths.n_paths, n // factor, factor).sum(axis=2)
    return PathEnsemble(grid, inc, paths.seed, paths.workers)


def as_grid_values(values, grid: TimeGrid, name: str = "function") -> np.ndarray:
    """Evaluate a constant, callable of t, or grid array on the grid times."""
    n1 = grid.n_steps + 1
    if callable(values):
        out = np.asarray(values(grid.times), dtype=float)
    else:
        out = np.asarray(values, dtype=float)
    if out.ndim == 0:
        out = np.full(n1, float(out))
    if out.shape != (n1,):
        raise ShapeError(f"{name} has shape {out.shape}, expected ({n1},)")
    return np.broadcast_to(out, (n1,)).astype(float)


def _integrand_matrix(paths: PathEnsemble, integrand) -> np.ndarray:
    n = paths.grid.n_steps
    arr = np.asarray(integrand, dtype=float)
    if arr.ndim == 0:
        return np.full((1, n), float(arr))
    if arr.ndim == 1:
        if arr.shape[0] in (n, n + 1):
            return arr[None, :n]
    elif arr.ndim == 2 and arr.shape[0] in (1, paths.n_paths) and arr.shape[1] in (n, n + 1):
        return arr[:, :n]
    raise ShapeError(
        f"integrand shape {arr.shape} incompatible with {paths.n_paths} paths x {n} steps")


def ito_integral(paths: PathEnsemble, integrand, cumulative: bool = False) -> np.ndarray:
    """Left-point Itô sum of an adapted integrand.

    Parameters
    ----------
    integrand : scalar, (n_steps[+1],) or (n_paths, n_steps[+1]) array
        Value at t_k multiplies the increment over [t_k, t_{k+1}].
    cumulative : bool
        Return the running integral, shape (n_paths, n_steps + 1), instead
        of the terminal value.
    """
    h = _integrand_matrix(paths, integrand)
    run = np.zeros((paths.n_paths, paths.grid.n_steps + 1))
    np.cumsum(h * paths.increments, axis=1, out=run[:, 1:])
    return run if cumulative else run[:, -1].copy()


def _exponent_arrays(paths, alpha, p):
    if p < 1:
        raise InvalidConfigError(f"compensator.p must be >= 1, got {p!r}")
    a = as_grid_values(alpha, paths.grid, "alpha")[:-1]
    if not np.all(np.isfinite(a)):
        raise InvalidConfigError("alpha must be finite on the grid")
    drift = a * a * paths.grid.dt / (2.0 * p)
    return np.ascontiguousarray(a), np.ascontiguousarray(drift)


def stochastic_exponential(paths: PathEnsemble, alpha, p: float = 1.0, with_integral: bool = False):
    """k_s = exp(int_0^s alpha dB - (1/2p) int_0^s alpha^2 du) on the grid.

    Accumulated in log-space. With ``with_integral`` also returns the
    right-rectangle time integral K_{t_{j+1}} = K_{t_j} + k_{t_{j+1}} dt_j.
    """
    a, drift = _exponent_arrays(paths, alpha, p)
    k, K = _backend.kernels().stoch_exp(
        np.ascontiguousarray(paths.increments), a, drift,
        np.ascontiguousarray(paths.grid.dt), paths.workers)
    return (k, K) if with_integral else k


@dataclass(frozen=True)
class EstimateCI:
    """Sample mean with its standard error."""

    mean: float
    stderr: float
    n_samples: int

    @classmethod
    def from_samples(cls, x) -> "EstimateCI":
        x = np.asarray(x, dtype=float).ravel()
        n = x.size
        if n == 0:
            return cls(float("nan"), float("nan"), 0)
        if np.all(x == x[0]):
            # deterministic quantity: exact value, no sampling error
            return cls(float(x[0]), 0.0, n)
        se = float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(float(np.mean(x)), se, n)

    def within(self, value: float, n_se: float = 3.0, floor: float = 0.0) -> bool:
        return abs(self.mean - value) <= max(n_se * self.stderr, floor)

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_samples": self.n_samples}
