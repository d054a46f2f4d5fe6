"""Packaged numerical experiments and the end-to-end constrained pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .bsde import (BsdeSolution, PenalizedResult, null_compensator, solve_closed_form,
                   solve_penalized, solve_regression)
from .compensator import (AlphaResult, BilateralResult, CompensatorPaths, CompensatorSpec,
                          alpha_case1, alpha_case2, bilateral_alpha_search, build_K)
from .constraints import Bilateral, Constraint, General, LinearLower, reduce_to_linear
from .drivers import Driver, LinearDriver, PenaltyDriver, ZeroDriver
from .errors import DegenerateFitError, InvalidConfigError, NoClosedFormError
from .paths import EstimateCI, PathEnsemble, as_grid_values
from .payoffs import Payoff, lp_moment, split_signs
from .regression import RegressionBasis
from .verify import (ConstraintReport, MinimalityReport, minimality_report, verify_constraint)

__all__ = [
    "PenalizationResult",
    "penalization_sweep",
    "Lemma1Row",
    "lemma1_bound_experiment",
    "CaseBParams",
    "CaseBResult",
    "case_b_bound_t0",
    "ConcaveCheckParams",
    "ConcaveReport",
    "concave_feasibility",
    "BlowupResult",
    "as_constraint_blowup",
    "PipelineResult",
    "run_pipeline",
    "HedgingScenario",
    "HedgingResult",
    "hedging_demo",
]

N_SE = 3.0


# ---------------------------------------------------------------- penalization

@dataclass
class PenalizationResult:
    results: list
    slope: float
    intercept: float
    slope_stderr: float
    diverges: bool
    method: str

    def rows(self):
        for r in self.results:
            yield {"n": r.n, "Y0": r.Y0.mean, "stderr": r.Y0.stderr, "iterations": r.iterations}

    def as_dict(self) -> dict:
        return {"method": self.method, "slope": self.slope, "intercept": self.intercept,
                "slope_stderr": self.slope_stderr, "diverges": self.diverges}


def penalization_sweep(xi: Payoff, f: Driver, n_values, paths: PathEnsemble,
                       method: str = "closed_form_f0", basis: RegressionBasis | None = None,
                       tol: float = 1e-3, max_iter: int = 50) -> PenalizationResult:
    """Y_0^n of the mean-field penalized equation over ``n_values``.

    A least-squares line is fitted through (n, Y_0^n); divergence is declared
    when the slope exceeds 3 fit standard errors (or is positive with an
    exact fit).
    """
    ns = [float(n) for n in n_values]
    if len(set(ns)) < 2:
        raise DegenerateFitError("the slope fit needs at least two distinct n values")
    res = [solve_penalized(xi, f, n, paths, method, basis, tol, max_iter) for n in ns]
    y = np.array([r.Y0.mean for r in res])
    fit = stats.linregress(ns, y)
    se = float(fit.stderr) if np.isfinite(fit.stderr) else 0.0
    slope = float(fit.slope)
    diverges = bool(slope > N_SE * se and slope > 1e-12)
    return PenalizationResult(res, slope, float(fit.intercept), se, diverges, method)


# --------------------------------------------------------------------- lemma 1

@dataclass
class Lemma1Row:
    p: float
    estimate: EstimateCI
    bound: float
    within_bound: bool
    tight: bool | None

    def as_dict(self) -> dict:
        return {"p": self.p, "estimate": self.estimate.mean, "stderr": self.estimate.stderr,
                "bound": self.bound, "within_bound": self.within_bound, "tight": self.tight}


def _log_tilde_gamma(sigma, paths: PathEnsemble, k0: int) -> np.ndarray:
    grid = paths.grid
    B, dB = paths.B, paths.increments
    acc = np.zeros(paths.n_paths)
    for j in range(k0, grid.n_steps):
        s = sigma(grid.times[j], B[:, j]) if callable(sigma) else float(sigma)
        s = np.broadcast_to(np.asarray(s, float), acc.shape)
        acc = acc + s * dB[:, j] - 0.5 * s * s * grid.dt[j]
    return acc


def lemma1_bound_experiment(sigma, p_values, t: float, paths: PathEnsemble,
                            sup_sigma: float | None = None) -> list[Lemma1Row]:
    """E[|tilde Gamma_t^T|^p]^(1/p) against e^{(p-1) sup|sigma|^2 (T-t)/2}.

    ``sigma`` is a constant (the bound is then attained) or a callable
    sigma(t, b) with ``sup_sigma`` its declared bound. For p > 1 the bound is
    an upper bound, for p < 0 a lower bound.
    """
    grid = paths.grid
    k0 = grid.index_of(t)
    const = not callable(sigma)
    if const:
        sup_sigma = abs(float(sigma))
    elif sup_sigma is None:
        raise InvalidConfigError("a path-dependent sigma needs its bound sup_sigma")
    tau = grid.T - grid.times[k0]
    logg = _log_tilde_gamma(sigma, paths, k0)
    rows = []
    for p in p_values:
        p = float(p)
        if 0 <= p <= 1:
            raise InvalidConfigError(f"p must lie outside [0, 1], got {p!r}")
        bound = float(np.exp((p - 1.0) * sup_sigma ** 2 * tau / 2.0))
        if np.all(logg == 0):
            est = EstimateCI(1.0, 0.0, paths.n_paths)
        else:
            est = lp_moment(np.exp(logg), p)
        slack = N_SE * est.stderr
        within = est.mean <= bound + slack if p > 1 else est.mean >= bound - slack
        tight = abs(est.mean - bound) <= max(slack, 1e-12 * bound) if const else None
        rows.append(Lemma1Row(p, est, bound, bool(within), tight))
    return rows


# ---------------------------------------------------------------------- case b

@dataclass
class CaseBParams:
    """c: curvature exponent; m_lower: lower bound of dl/dx; m_bar: the bound
    entering the drift factor; d: Malliavin bound of f (driver's when None)."""

    c: float
    m_lower: float
    m_bar: float | None = None
    d: float | None = None

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidConfigError(f"case_b.c must be > 0, got {self.c!r}")
        if not self.m_lower > 0:
            raise InvalidConfigError(f"case_b.m_lower must be > 0, got {self.m_lower!r}")


@dataclass
class CaseBResult:
    value: EstimateCI
    witnessed: bool
    verdict: str
    drift_exponent: float

    def as_dict(self) -> dict:
        return {"value": self.value.mean, "stderr": self.value.stderr,
                "witnessed": self.witnessed, "verdict": self.verdict,
                "drift_exponent": self.drift_exponent}


def case_b_bound_t0(xi: Payoff, f: Driver, ell: Constraint, params: CaseBParams,
                    paths: PathEnsemble, sol: BsdeSolution | None = None) -> CaseBResult:
    """log E[exp(sqrt(c) l(T, e^{int dY f} D_0 xi) + drift + int dZ f dB - 1/2 int (dZ f)^2)].

    Evaluated at t = 0 only, where the inner conditional expectation is the
    plain mean. drift = int_0^T m_bar d sqrt(c) e^{s sup dY f} ds uses the
    declared bounds. A value below 0 beyond 3 stderr witnesses the case.
    """
    grid = paths.grid
    d = f.d if params.d is None else float(params.d)
    if not np.isfinite(d):
        raise InvalidConfigError("case_b needs a finite Malliavin bound d for the driver")
    if d > 0 and params.m_bar is None:
        raise InvalidConfigError("case_b.m_bar must be declared when d > 0")
    if not f.derivatives_free_of_yz and sol is None:
        raise InvalidConfigError("this driver needs (Y, Z) from a prior solve")
    N = paths.n_paths
    B, dB = paths.B, paths.increments
    int_dy = np.zeros(N)
    mart = np.zeros(N)
    if not f.is_zero:
        for j in range(grid.n_steps):
            y = np.zeros(N) if sol is None else sol.Y[:, j]
            z = np.zeros(N) if sol is None else sol.Z[:, j]
            t = grid.times[j]
            int_dy += f.dy(t, B[:, j], y, z) * grid.dt[j]
            dz = f.dz(t, B[:, j], y, z)
            mart += dz * dB[:, j] - 0.5 * dz * dz * grid.dt[j]
    xi.validate(grid)
    arg = np.exp(int_dy) * xi.derivative(paths, 0)
    T = grid.T
    dx = ell.dx(T, arg)
    if np.min(dx) < params.m_lower - 1e-9:
        raise InvalidConfigError(
            f"dl/dx sampled down to {np.min(dx):.6g}, below case_b.m_lower={params.m_lower:.6g}")
    curv = -ell.dxx(T, arg) / dx ** 2
    if np.max(curv) > params.c + 1e-9:
        raise InvalidConfigError(
            f"-l''/l'^2 sampled up to {np.max(curv):.6g}, above case_b.c={params.c:.6g}")
    rc = np.sqrt(params.c)
    drift = 0.0
    if d > 0:
        s = f.supdY
        factor = np.expm1(s * T) / s if abs(s) > 1e-12 else T
        drift = float(params.m_bar * d * rc * factor)
    log_w = rc * ell.value(T, arg) + drift + mart
    shift = float(np.max(log_w))
    w = np.exp(log_w - shift)
    m = EstimateCI.from_samples(w)
    value = float(np.log(m.mean) + shift)
    se = m.stderr / m.mean if m.mean > 0 else float("inf")
    est = EstimateCI(value, float(se), N)
    witnessed = bool(value + N_SE * est.stderr < 0)
    verdict = "case (b) witnessed at t=0" if witnessed else "case (b) not witnessed at t=0"
    return CaseBResult(est, witnessed, verdict, drift)


# ------------------------------------------------------------------- concave

@dataclass
class ConcaveCheckParams:
    """Exponent maps for the Z-dependent variant (floats or callables of t)."""

    q_neg: object = 2.0
    q_pos: object = 2.0
    cap: float = 1e6


@dataclass
class ConcaveReport:
    times: np.ndarray
    values: np.ndarray
    condition: int
    max_value: float
    bounded: bool
    terminal: EstimateCI
    terminal_ok: bool
    feasible: bool

    def rows(self):
        for t, v in zip(self.times, self.values):
            yield {"t": float(t), "map": float(v)}

    def as_dict(self) -> dict:
        return {"condition": self.condition, "max": self.max_value, "bounded": self.bounded,
                "terminal_mean": self.terminal.mean, "terminal_stderr": self.terminal.stderr,
                "terminal_ok": self.terminal_ok, "feasible": self.feasible}


def concave_feasibility(xi: Payoff, f: Driver, ell: Constraint, params: ConcaveCheckParams,
                        paths: PathEnsemble) -> ConcaveReport:
    """Boundedness of the concave-constraint map and the terminal check.

    With chi_t = l(T, -e^{tau sup dY} D_t xi^- + e^{tau inf dY} D_t xi^+) the map
    is -E[chi_t]/tau when f has no Z dependence, otherwise the Hölder form
    with exponents q_neg, q_pos.
    """
    if ell.curvature not in ("concave", "linear"):
        raise InvalidConfigError("concave_feasibility needs a concave (or linear) constraint")
    grid = paths.grid
    xi.validate(grid)
    T = grid.T
    qn = as_grid_values(params.q_neg, grid, "q_neg")
    qp = as_grid_values(params.q_pos, grid, "q_pos")
    if np.any(qn <= 1) or np.any(qp <= 1):
        raise InvalidConfigError("q_neg and q_pos must be > 1")
    cond = 1 if f.supAbsdZ == 0 else 2
    s2 = f.supAbsdZ ** 2 / 2.0
    vals = np.empty(grid.n_steps)
    for k in range(grid.n_steps):
        tau = T - grid.times[k]
        pos, neg = split_signs(xi.derivative(paths, k))
        chi = ell.value(T, -np.exp(tau * f.supdY) * neg + np.exp(tau * f.infdY) * pos)
        if cond == 1:
            vals[k] = -float(np.mean(chi)) / tau
        else:
            cp, cn = split_signs(chi)
            neg_m = lp_moment(cn, qn[k]).mean
            pos_m = lp_moment(cp, 1.0 / qp[k]).mean
            inner = (-np.exp(s2 * tau / (qn[k] - 1.0)) * neg_m
                     + np.exp(qp[k] / (1.0 - qp[k]) * s2 * tau) * pos_m)
            vals[k] = -inner / tau
    finite = bool(np.all(np.isfinite(vals)))
    top = float(np.max(vals)) if finite else float("inf")
    bounded = finite and top <= params.cap
    term = EstimateCI.from_samples(ell.value(T, xi.derivative(paths, grid.n_steps)))
    term_ok = bool(term.mean + N_SE * term.stderr >= 0)
    return ConcaveReport(grid.times[:-1].copy(), vals, cond, top, bounded, term, term_ok,
                         bounded and term_ok)


# -------------------------------------------------------------------- blow-up

@dataclass
class BlowupResult:
    n_values: list
    lower_bounds: list
    estimates: list
    nondecreasing: bool
    verdict: str

    @property
    def below_bound(self) -> list:
        """n values whose simulated Y_0^n sits below the analytic bound by
        more than 3 stderr (regression failure, not a counterexample)."""
        return [n for n, lb, e in zip(self.n_values, self.lower_bounds, self.estimates)
                if e.mean + N_SE * e.stderr < lb]

    def rows(self):
        for n, lb, e in zip(self.n_values, self.lower_bounds, self.estimates):
            yield {"n": n, "lower_bound": lb, "Y0": e.mean, "stderr": e.stderr}

    def as_dict(self) -> dict:
        return {"nondecreasing": self.nondecreasing, "verdict": self.verdict,
                "lower_bounds": list(self.lower_bounds),
                "simulated_below_bound_at_n": self.below_bound}


def as_constraint_blowup(xi: Payoff, f: Driver, n_values, paths: PathEnsemble, level: float = 1.0,
                         basis: RegressionBasis | None = None) -> BlowupResult:
    """Penalty n (level - Z)^+ for the almost-sure constraint Z >= level.

    Reports inf xi + (n + inf f) T next to the regression-solved Y_0^n.
    The penalized solution is driven by paths shifted by about n in B, far
    outside the simulated cloud, so for large n the regression values are
    unreliable; a quadratic basis (the default here) keeps them stable.
    """
    basis = basis or RegressionBasis("poly_b", 2)
    if xi.infimum is None or f.infimum is None:
        raise InvalidConfigError("blow-up bound needs declared infima of xi and f")
    T = paths.grid.T
    ns = [float(n) for n in n_values]
    lbs = [float(xi.infimum + (n + f.infimum) * T) for n in ns]
    comp = null_compensator(paths)
    ests = []
    for n in ns:
        sol = solve_regression(xi, PenaltyDriver(f, n, level), comp, paths, basis,
                               stderr_batches=0)
        ests.append(sol.Y0)
    order = np.argsort(ns)
    y = np.array([ests[i].mean for i in order])
    nondecreasing = bool(np.all(np.diff(y) >= 0))
    grows = nondecreasing and len(y) > 1 and (
        y[-1] - y[0] > N_SE * (ests[order[-1]].stderr + ests[order[0]].stderr))
    verdict = ("no a.s.-constrained supersolution" if grows
               else "growth not confirmed by simulation; lower bound still diverges")
    return BlowupResult(ns, lbs, ests, nondecreasing, verdict)


# -------------------------------------------------------------------- pipeline

@dataclass
class PipelineResult:
    alpha: AlphaResult | BilateralResult | None
    compensator: CompensatorPaths
    solution: BsdeSolution
    report: ConstraintReport
    minimality: MinimalityReport
    mode: str

    def alpha_summary(self):
        if self.alpha is None:
            spec = self.compensator.spec
            a = spec.constant_alpha()
            return a
        if isinstance(self.alpha, BilateralResult):
            return {"min": float(np.min(self.alpha.alpha)), "max": float(np.max(self.alpha.alpha))}
        return self.alpha.alpha


def _solve(xi, f, comp, paths, method, basis, scheme="explicit", stderr_batches=16):
    if method == "closed_form":
        return solve_closed_form(xi, f, comp, paths)
    if method == "auto":
        try:
            return solve_closed_form(xi, f, comp, paths)
        except NoClosedFormError:
            pass
    elif method != "regression":
        raise InvalidConfigError("solver.method must be regression, closed_form or auto")
    return solve_regression(xi, f, comp, paths, basis, scheme=scheme,
                            stderr_batches=stderr_batches)


def run_pipeline(xi: Payoff, f: Driver, ell: Constraint, paths: PathEnsemble,
                 mode: str = "auto", alpha=None, p: float = 2.0, q_neg=2.0, q_pos=2.0,
                 method: str = "regression", basis: RegressionBasis | None = None,
                 scheme: str = "explicit", stderr_batches: int = 16) -> PipelineResult:
    """Choose alpha, build K, solve for (Y, Z), verify the constraint.

    ``auto`` picks the bilateral search for two-sided constraints, case 1
    when f has no Z dependence and case 2 otherwise. Convex constraints are
    first reduced to E[Z_t] >= x*(t). When the formula gives alpha = 0 the
    constraint holds without help and K is taken identically zero.
    """
    grid = paths.grid
    target = ell
    if isinstance(ell, General):
        if ell.curvature == "concave" and mode not in ("none", "custom"):
            raise InvalidConfigError(
                "concave constraints are checked by the concave_feasibility experiment; "
                "use compensator.mode = custom or none")
        if ell.curvature != "concave":
            target = reduce_to_linear(ell, grid)
    if mode == "auto":
        if isinstance(ell, Bilateral):
            mode = "bilateral"
        elif f.supAbsdZ == 0:
            mode = "case1"
        else:
            mode = "case2"
    ares = None
    if mode == "none":
        spec = CompensatorSpec(0.0, 1.0, "none")
    elif mode == "custom":
        if alpha is None:
            raise InvalidConfigError("compensator.alpha is required in custom mode")
        spec = CompensatorSpec(alpha, float(p) if p else 1.0, "custom")
    elif mode in ("case1", "case2"):
        if not isinstance(target, LinearLower):
            raise InvalidConfigError(f"{mode} needs a lower (or convex) constraint")
        if mode == "case1":
            ares = alpha_case1(xi, f, target.nu, paths)
            spec = CompensatorSpec(ares.alpha, 1.0, "case1")
        else:
            ares = alpha_case2(xi, f, target.nu, paths, q_neg, q_pos, p)
            spec = CompensatorSpec(ares.alpha, float(p), "case2")
        if ares.alpha == 0.0:
            spec = CompensatorSpec(0.0, 1.0, "none")
    elif mode == "bilateral":
        if not isinstance(ell, Bilateral):
            raise InvalidConfigError("bilateral mode needs a bilateral constraint")
        ares = bilateral_alpha_search(xi, f, ell.nu_low, ell.nu_high, paths)
        spec = CompensatorSpec(ares.alpha, 1.0, "bilateral")
        if not np.any(ares.alpha):
            spec = CompensatorSpec(0.0, 1.0, "none")
    else:
        raise InvalidConfigError(f"unknown compensator mode {mode!r}")
    comp = build_K(paths, spec)
    sol = _solve(xi, f, comp, paths, method, basis, scheme, stderr_batches)
    report = verify_constraint(sol, ell, paths)
    return PipelineResult(ares, comp, sol, report, minimality_report(sol), mode)


# -------------------------------------------------------------------- hedging

@dataclass
class HedgingScenario:
    """Deterministic market coefficients (floats or callables of t), claim
    and portfolio floor beta(t)."""

    r: object
    mu: object
    sigma: object
    xi: Payoff
    beta: object = 0.0
    sigma_min: float = 1e-8


@dataclass
class HedgingResult:
    price: EstimateCI
    driver: Driver
    nu: np.ndarray
    pipeline: PipelineResult = field(repr=False)

    def as_dict(self) -> dict:
        return {"price": self.price.mean, "price_stderr": self.price.stderr,
                "alpha": self.pipeline.alpha_summary(), "mode": self.pipeline.mode,
                "constraint": self.pipeline.report.overall,
                "minimality": self.pipeline.minimality.verdict}


def hedging_demo(scenario: HedgingScenario, paths: PathEnsemble, method: str = "regression",
                 basis: RegressionBasis | None = None) -> HedgingResult:
    """Price a claim under E[pi_t] >= beta_t with Z_t = pi_t sigma_t.

    The wealth dynamics give f(t, y, z) = -r y - (mu - r) z / sigma and the
    floor becomes nu(t) = beta(t) sigma(t).
    """
    grid = paths.grid
    r = as_grid_values(scenario.r, grid, "hedging.r")
    mu = as_grid_values(scenario.mu, grid, "hedging.mu")
    sig = as_grid_values(scenario.sigma, grid, "hedging.sigma")
    if not scenario.sigma_min > 0:
        raise InvalidConfigError("hedging.sigma_min must be > 0")
    if np.any(sig < scenario.sigma_min):
        raise InvalidConfigError(
            f"hedging.sigma drops to {sig.min():.6g}, below sigma_min={scenario.sigma_min:.6g}")
    beta = as_grid_values(scenario.beta, grid, "hedging.beta")
    times = grid.times
    a = -r
    b = -(mu - r) / sig
    if not (np.any(a) or np.any(b)):
        f = ZeroDriver()
    else:
        f = LinearDriver(lambda t: np.interp(t, times, a), lambda t: np.interp(t, times, b),
                         0.0, horizon=grid.T)
    nu = beta * sig
    res = run_pipeline(scenario.xi, f, LinearLower(lambda t: np.interp(t, times, nu)), paths,
                       mode="auto", p=2.0, q_neg=2.0, q_pos=2.0, method=method, basis=basis)
    return HedgingResult(res.solution.Y0, f, nu, res)
