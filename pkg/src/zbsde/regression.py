"""Least-squares conditional expectations on a per-step polynomial basis.

Variables are standardized, near-constant and duplicated ones are dropped,
then the normal equations are assembled by the active kernel backend with a
fixed chunking so that sums never depend on the thread count.
"""
from __future__ import annotations

from dataclasses import dataclass
import warnings
from itertools import product

import numpy as np
from scipy.linalg import LinAlgWarning, solve
from scipy.linalg.lapack import dpstrf

from . import _backend
from .errors import InvalidConfigError, RegressionSingularError

__all__ = ["RegressionBasis", "StepRegressor", "monomial_powers"]

FAMILIES = ("poly_b", "poly_b_k")
# monomials whose residual variance falls below this fraction of the largest
# diagonal entry are treated as linearly dependent
PIVOT_TOL = 1e-11


@dataclass(frozen=True)
class RegressionBasis:
    """Polynomial family and total degree.

    ``poly_b`` uses B_t as core variable, ``poly_b_k`` adds k_t whenever the
    compensator is nontrivial. Payoff and driver state variables enter
    linearly when ``state_features`` is set.
    """

    family: str = "poly_b_k"
    degree: int = 3
    state_features: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidConfigError(f"solver.basis must be one of {FAMILIES}")
        if int(self.degree) != self.degree or self.degree < 1:
            raise InvalidConfigError(f"solver.degree must be an integer >= 1, got {self.degree!r}")


def monomial_powers(n_core: int, degree: int, n_linear: int = 0) -> np.ndarray:
    """Exponent rows: all core monomials of total degree <= degree, then one
    row per linear variable. The first row is the intercept."""
    rows = [e for e in product(range(degree + 1), repeat=n_core) if sum(e) <= degree]
    rows.sort(key=lambda e: (sum(e), tuple(-x for x in e)))
    out = [list(e) + [0] * n_linear for e in rows]
    for j in range(n_linear):
        r = [0] * (n_core + n_linear)
        r[n_core + j] = 1
        out.append(r)
    return np.asarray(out, dtype=np.int32).reshape(len(out), n_core + n_linear)


def _standardize(cols):
    """Standardized copies of informative, mutually distinct columns."""
    kept = []
    for c in cols:
        c = np.asarray(c, float)
        if not np.all(np.isfinite(c)):
            continue
        mu = float(np.mean(c))
        sd = float(np.std(c))
        if sd <= 1e-12 * max(1.0, abs(mu)):
            continue
        z = (c - mu) / sd
        if any(abs(float(np.mean(z * other))) > 1 - 1e-10 for other in kept):
            continue
        kept.append(z)
    return kept


class StepRegressor:
    """Projection onto the span of the basis at one time step."""

    def __init__(self, core, linear, degree: int, step: int, nthreads: int = 1):
        core_z = _standardize(core)
        lin_z = _standardize(list(core_z) + list(linear))[len(core_z):]
        self.step = step
        self.nthreads = nthreads
        self.n = core[0].shape[0] if core else linear[0].shape[0]
        cols = core_z + lin_z
        if cols:
            self.V = np.ascontiguousarray(np.column_stack(cols))
        else:
            self.V = np.zeros((self.n, 0))
        self.powers = monomial_powers(len(core_z), degree, len(lin_z))
        self._gram = None
        self._active = None

    @property
    def n_features(self) -> int:
        return self.powers.shape[0]

    def _active_set(self):
        """Numerically independent monomials via pivoted Cholesky of the Gram."""
        G = self._gram
        if self.n < self.n_features:
            raise RegressionSingularError(
                f"design matrix rank-deficient at step {self.step}: "
                f"{self.n} paths for {self.n_features} basis functions", step=self.step)
        scale = float(np.max(np.diag(G)))
        _, piv, rank, _ = dpstrf(G, tol=PIVOT_TOL * scale, lower=0)
        if rank < 1 or not np.isfinite(scale):
            raise RegressionSingularError(
                f"design matrix rank-deficient at step {self.step}", step=self.step)
        return np.sort(piv[:rank] - 1)

    def _solve(self, R):
        if self._active is None:
            self._active = self._active_set()
        S = self._active
        coef = np.zeros((self.n_features, R.shape[1]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)
            coef[S] = solve(self._gram[np.ix_(S, S)], R[S], assume_a="pos")
        return coef

    @property
    def rank(self) -> int:
        return self.n_features if self._active is None else int(self._active.size)

    def fit(self, targets: np.ndarray) -> np.ndarray:
        """Coefficients (n_features x q) for targets of shape (n,) or (n, q)."""
        Y = np.ascontiguousarray(np.atleast_2d(np.asarray(targets, float).T).T)
        kern = _backend.kernels()
        if self.n_features == 1:
            # intercept only: plain mean, no linear algebra
            return np.mean(Y, axis=0, keepdims=True)
        if self._gram is None:
            G, R = kern.gram(self.V, self.powers, Y, True, self.nthreads)
            self._gram = G / self.n
        else:
            _, R = kern.gram(self.V, self.powers, Y, False, self.nthreads)
        return self._solve(R / self.n)

    def predict(self, coef: np.ndarray) -> np.ndarray:
        if self.n_features == 1:
            return np.broadcast_to(coef, (self.n, coef.shape[1])).copy()
        return _backend.kernels().predict(self.V, self.powers, np.ascontiguousarray(coef),
                                          self.nthreads)
