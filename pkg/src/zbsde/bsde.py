"""Solvers for Y_t = xi + int_t^T f ds - int_t^T Z dB + K_T - K_t."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compensator import CompensatorPaths, CompensatorSpec, build_K
from .drivers import Driver, ExpInverseDriver, ShiftedDriver
from .errors import InvalidConfigError, NoClosedFormError, NonConvergenceError
from .paths import EstimateCI, PathEnsemble
from .payoffs import (Constant, GeometricExponential, Payoff, WienerIntegral,
                      moments_from_derivative)
from .regression import RegressionBasis, StepRegressor
from scipy.integrate import trapezoid

__all__ = [
    "BsdeSolution",
    "PenalizedResult",
    "solve_closed_form",
    "solve_regression",
    "solve_penalized",
    "null_compensator",
]

SCHEMES = ("explicit", "implicit")


@dataclass
class BsdeSolution:
    """Per-path Y, Z on the grid plus the compensator and diagnostics.

    ``z_resid_var[k]`` is the residual variance of the Z regression at step k
    (0 for closed forms); it feeds the standard error of E[Z_t] estimates.
    """

    Y: np.ndarray = field(repr=False)
    Z: np.ndarray = field(repr=False)
    compensator: CompensatorPaths = field(repr=False)
    terminal_residual: np.ndarray = field(repr=False)
    method: str
    times: np.ndarray = field(repr=False)
    z_resid_var: np.ndarray = field(repr=False)
    y0_stderr: float = 0.0
    z_mean_stderr: np.ndarray | None = field(default=None, repr=False)

    @property
    def Y0(self) -> EstimateCI:
        y0 = self.Y[:, 0]
        est = EstimateCI.from_samples(y0)
        if self.method == "regression":
            return EstimateCI(est.mean, self.y0_stderr, est.n_samples)
        return est

    def mean_Z(self) -> np.ndarray:
        return self.Z.mean(axis=0)

    def mean_Z_stderr(self) -> np.ndarray:
        """Standard error of each E[Z_t] estimate.

        Batch-based when available, otherwise from the path spread of Z and
        the Z-regression residual variance.
        """
        if self.z_mean_stderr is not None:
            return self.z_mean_stderr
        n = self.Z.shape[0]
        var = np.where(np.ptp(self.Z, axis=0) > 0, self.Z.var(axis=0, ddof=1 if n > 1 else 0), 0.0)
        return np.sqrt((var + self.z_resid_var) / n)

    def profile_rows(self):
        """Rows (t, mean/stderr of Y, Z, K) for CSV export."""
        z_ses = self.mean_Z_stderr()
        for k, t in enumerate(self.times):
            y = EstimateCI.from_samples(self.Y[:, k])
            z = EstimateCI.from_samples(self.Z[:, k])
            z_se = z_ses[k]
            kk = EstimateCI.from_samples(self.compensator.K[:, k])
            yield {"t": t, "mean_Y": y.mean, "stderr_Y": y.stderr, "mean_Z": z.mean,
                   "stderr_Z": float(z_se), "mean_K": kk.mean, "stderr_K": kk.stderr}


def null_compensator(paths: PathEnsemble) -> CompensatorPaths:
    return build_K(paths, CompensatorSpec(0.0, 1.0, "none"))


def _closed_form_alpha(comp: CompensatorPaths):
    if comp.null:
        return 0.0
    a = comp.spec.constant_alpha()
    if a is None or comp.spec.p != 1:
        raise NoClosedFormError("closed form needs a constant alpha with p = 1")
    return a


def solve_closed_form(xi: Payoff, f: Driver, comp: CompensatorPaths, paths: PathEnsemble) -> BsdeSolution:
    """Exact pathwise (Y, Z) when every ingredient has a known conditional mean.

    Supported: payoffs WienerIntegral, GeometricExponential and Constant;
    drivers Zero and ExpInverse; compensators null or with constant alpha
    and p = 1 (then E_t[k_s] = k_t). Raises NoClosedFormError otherwise.
    """
    grid = paths.grid
    tau = grid.tau()
    N = paths.n_paths
    if isinstance(xi, WienerIntegral):
        Y = xi.running(paths).copy()
        Z = np.broadcast_to(xi.values(grid), (N, grid.n_steps + 1)).copy()
    elif isinstance(xi, GeometricExponential):
        Y = np.exp(xi.sign * paths.B - grid.times / 2)
        Z = xi.sign * Y
    elif isinstance(xi, Constant):
        Y = np.full((N, grid.n_steps + 1), xi.c)
        Z = np.zeros_like(Y)
    else:
        raise NoClosedFormError(f"no closed form for payoff {xi.kind!r}")
    if isinstance(f, ExpInverseDriver):
        q = np.exp(-paths.B - grid.times / 2)
        Y += tau * q
        Z -= tau * q
    elif not f.is_zero:
        raise NoClosedFormError(f"no closed form for driver {f.kind!r}")
    a = _closed_form_alpha(comp)
    if not comp.null:
        Y += tau * comp.k
        Z += a * tau * comp.k
    xi_v = xi.evaluate(paths)
    return BsdeSolution(Y, Z, comp, Y[:, -1] - xi_v, "closed_form", grid.times.copy(),
                        np.zeros(grid.n_steps + 1))


def _driver_features(f: Driver, t, b):
    if not f.state_dependent:
        return []
    z0 = np.zeros_like(b)
    return [f.value(t, b, z0, z0)]


def _backward(xi, f, comp, paths, basis, scheme):
    grid = paths.grid
    n, N = grid.n_steps, paths.n_paths
    times, B, dB = grid.times, paths.B, paths.increments
    Y = np.empty((N, n + 1))
    Z = np.empty((N, n + 1))
    zvar = np.zeros(n + 1)
    Y[:, n] = xi.evaluate(paths)
    Z[:, n] = xi.derivative(paths, n)
    # pathwise xi + sum of driver and compensator increments; its mean is Y_0
    total = Y[:, n].copy()
    use_k = basis.family == "poly_b_k" and not comp.null
    for k in range(n - 1, -1, -1):
        dt = grid.dt[k]
        incr = np.zeros(N)
        if scheme == "explicit" and not f.is_zero:
            incr += dt * f.value(times[k + 1], B[:, k + 1], Y[:, k + 1], Z[:, k + 1])
        if not comp.null:
            incr += comp.K[:, k + 1] - comp.K[:, k]
        target = Y[:, k + 1] + incr
        total += incr
        if np.ptp(target) == 0:
            Ey = target
            Zk = np.zeros(N)
        else:
            core = [B[:, k]] + ([comp.k[:, k]] if use_k else [])
            linear = []
            if basis.state_features:
                linear = xi.state_features(paths, k) + _driver_features(f, times[k], B[:, k])
            reg = StepRegressor(core, linear, basis.degree, k, paths.workers)
            Ey = reg.predict(reg.fit(target))[:, 0]
            ztarget = (target - Ey) * dB[:, k] / dt
            Zk = reg.predict(reg.fit(ztarget))[:, 0]
            # control variate: Z_k (dB^2/dt - 1) has zero conditional mean
            ztarget = ztarget - Zk * (dB[:, k] ** 2 / dt - 1.0)
            Zk = reg.predict(reg.fit(ztarget))[:, 0]
            zvar[k] = float(np.var(ztarget - Zk))
        if scheme == "implicit" and not f.is_zero:
            y1 = Ey + dt * f.value(times[k], B[:, k], Ey, Zk)
            step = dt * f.value(times[k], B[:, k], y1, Zk)
            Ey = Ey + step
            total += step
        Y[:, k] = Ey
        Z[:, k] = Zk
    return Y, Z, zvar, total


def solve_regression(xi: Payoff, f: Driver, comp: CompensatorPaths, paths: PathEnsemble,
                     basis: RegressionBasis | None = None, scheme: str = "explicit",
                     stderr_batches: int = 16) -> BsdeSolution:
    """Backward least-squares Monte Carlo.

    ``explicit`` (default): with target = Y_{k+1} + dt f(t_{k+1}, Y_{k+1},
    Z_{k+1}) + (K_{k+1} - K_k), set Y_k = E_k[target] and
    Z_k = E_k[(target - Y_k) dB_k] / dt. ``implicit`` evaluates f at t_k with
    Z_k and one fixed-point pass for Y.

    Regression errors accumulate backwards, so the spread of Z across paths
    says little about the error of its mean. With ``stderr_batches`` >= 2 the
    scheme is rerun on that many disjoint path batches and the standard
    error of each E[Z_t] is the batch spread scaled to the full sample.
    """
    basis = basis or RegressionBasis()
    if scheme not in SCHEMES:
        raise InvalidConfigError(f"solver.scheme must be one of {SCHEMES}")
    xi.validate(paths.grid)
    Y, Z, zvar, total = _backward(xi, f, comp, paths, basis, scheme)
    N = paths.n_paths
    z_se = None
    M = int(stderr_batches)
    if M >= 2 and N // M >= 2 * basis.degree ** 2 + 8:
        bounds = np.linspace(0, N, M + 1).astype(int)
        means = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            rows = slice(a, b)
            _, Zb, _, _ = _backward(xi, f, comp.subset(rows), paths.subset(rows), basis, scheme)
            means.append(Zb.mean(axis=0))
        means = np.asarray(means)
        sizes = np.diff(bounds)
        # batch estimates scatter like sqrt(N / size) times the full one
        z_se = np.sqrt(np.var(means, axis=0, ddof=1) * np.mean(sizes) / N)
    resid = Y[:, -1] - xi.evaluate(paths)
    y0_se = EstimateCI.from_samples(total).stderr
    return BsdeSolution(Y, Z, comp, resid, "regression", paths.grid.times.copy(), zvar, y0_se,
                        z_se)


@dataclass
class PenalizedResult:
    n: float
    Y0: EstimateCI
    profile: np.ndarray
    times: np.ndarray
    iterations: int
    method: str


def solve_penalized(xi: Payoff, f: Driver, n: float, paths: PathEnsemble,
                    method: str = "closed_form_f0", basis: RegressionBasis | None = None,
                    tol: float = 1e-3, max_iter: int = 50) -> PenalizedResult:
    """Penalized BSDE with driver f + n E[Z_s]^-.

    ``closed_form_f0`` (f = 0): Y_0 = E[xi] + n int_0^T E[D_s xi]^- ds with
    trapezoidal quadrature. ``mean_field_iteration``: Picard iteration on
    the deterministic profile m(s) = E[Z_s], starting from m = 0.
    """
    grid = paths.grid
    if n < 0:
        raise InvalidConfigError("penalty level n must be >= 0")
    if method == "closed_form_f0":
        if not f.is_zero:
            raise InvalidConfigError("closed_form_f0 needs the zero driver")
        xi.validate(grid)
        m = np.array([moments_from_derivative(xi.derivative(paths, k), grid.times[k]).mean.mean
                      for k in range(grid.n_steps + 1)])
        integral = float(trapezoid(np.maximum(-m, 0.0), grid.times))
        exact = xi.exact_mean(grid.T)
        base = (EstimateCI(exact, 0.0, paths.n_paths) if exact is not None
                else EstimateCI.from_samples(xi.evaluate(paths)))
        y0 = EstimateCI(base.mean + n * integral, base.stderr, base.n_samples)
        return PenalizedResult(float(n), y0, m, grid.times.copy(), 0, method)
    if method != "mean_field_iteration":
        raise InvalidConfigError(f"unknown penalized method {method!r}")
    comp = null_compensator(paths)
    m = np.zeros(grid.n_steps + 1)
    for it in range(1, max_iter + 1):
        shifted = ShiftedDriver(f, grid.times, n * np.maximum(-m, 0.0))
        sol = solve_regression(xi, shifted, comp, paths, basis, stderr_batches=0)
        m_new = sol.mean_Z()
        delta = float(np.max(np.abs(m_new - m)))
        m = m_new
        if delta <= tol:
            return PenalizedResult(float(n), sol.Y0, m, grid.times.copy(), it, method)
    raise NonConvergenceError(
        f"Picard iteration did not converge in {max_iter} iterations (last change {delta:.3g})",
        profile=m)
