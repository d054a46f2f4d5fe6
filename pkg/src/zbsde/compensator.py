"""Compensators K_t = int_0^t k_s ds with k a stochastic exponential.

Also the explicit choices of the exponent alpha that make E[Z_t] >= nu(t),
and a bump check of the Malliavin derivative of K.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .drivers import Driver
from .errors import BilateralInfeasibleError, DomainError, InfeasibleError, InvalidConfigError
from .paths import PathEnsemble, as_grid_values, stochastic_exponential
from .payoffs import DxiMoments, Payoff, moments_from_derivative

__all__ = [
    "CompensatorSpec",
    "CompensatorPaths",
    "AlphaResult",
    "BilateralResult",
    "helper_i_s",
    "lower_map",
    "upper_map",
    "bracket_terms",
    "alpha_case1",
    "alpha_case2",
    "bilateral_alpha_search",
    "build_K",
    "malliavin_K_check",
]

MODES = ("none", "case1", "case2", "bilateral", "custom")
DEFAULT_CAP = 1e6


@dataclass
class CompensatorSpec:
    """alpha on the grid (or a constant), exponent normalization p >= 1, mode tag."""

    alpha: object = 0.0
    p: float = 1.0
    mode: str = "custom"

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfigError(f"compensator.mode must be one of {MODES}")
        if not self.p >= 1:
            raise InvalidConfigError(f"compensator.p must be >= 1, got {self.p!r}")

    def alpha_values(self, grid) -> np.ndarray:
        a = as_grid_values(self.alpha, grid, "compensator.alpha")
        if not np.all(np.isfinite(a)):
            raise InvalidConfigError("compensator.alpha must be finite on the grid")
        return a

    def is_null(self) -> bool:
        return self.mode == "none"

    def constant_alpha(self):
        """The constant alpha, or None when alpha varies in time."""
        if callable(self.alpha):
            return None
        a = np.asarray(self.alpha, float)
        if a.ndim == 0:
            return float(a)
        return float(a[0]) if np.all(a[:-1] == a[0]) else None


@dataclass
class CompensatorPaths:
    """k and K per path on the grid; ``null`` marks K identically zero."""

    k: np.ndarray = field(repr=False)
    K: np.ndarray = field(repr=False)
    spec: CompensatorSpec
    null: bool = False

    @property
    def K_T(self) -> np.ndarray:
        return self.K[:, -1]

    def subset(self, rows) -> "CompensatorPaths":
        return CompensatorPaths(self.k[rows], self.K[rows], self.spec, self.null)


@dataclass
class AlphaResult:
    alpha: float
    times: np.ndarray
    bracket: np.ndarray
    i_values: np.ndarray
    lower: np.ndarray
    nu: np.ndarray
    terminal_margin: float
    argmax_t: float

    def rows(self):
        for t, br, iv in zip(self.times, self.bracket, self.i_values):
            yield {"t": t, "bracket": br, "i": iv, "alpha": self.alpha}


@dataclass
class BilateralResult:
    alpha: np.ndarray
    times: np.ndarray
    pos_interval: np.ndarray
    neg_interval: np.ndarray

    def rows(self):
        for j, t in enumerate(self.times[:-1]):
            yield {"t": t, "pos_low": self.pos_interval[j, 0], "pos_high": self.pos_interval[j, 1],
                   "neg_low": self.neg_interval[j, 0], "neg_high": self.neg_interval[j, 1],
                   "alpha": self.alpha[j]}


def _integral_factor(rate: float, tau):
    """(e^{rate tau} - 1) / rate, or tau when the rate vanishes."""
    tau = np.asarray(tau, float)
    if abs(rate) <= 1e-12:
        return tau.copy() if tau.ndim else float(tau)
    return np.expm1(rate * tau) / rate


def helper_i_s(t, f: Driver, T: float, p: float | None = None):
    """Integral factors (i(t), s(t)).

    i uses inf dY, plus the Hölder term p/(1-p) supAbsdZ^2/2 when ``p`` is
    given (case 2); s uses sup dY.
    """
    t_arr = np.asarray(t, float)
    if np.any(t_arr >= T):
        raise DomainError(f"i(t), s(t) need t < T (T={T})")
    tau = T - t_arr
    rate_i = f.infdY
    if p is not None:
        if not p > 1:
            raise InvalidConfigError(f"case-2 exponent p must be > 1, got {p!r}")
        rate_i = p / (1.0 - p) * f.supAbsdZ ** 2 / 2.0 + f.infdY
    return _integral_factor(rate_i, tau), _integral_factor(f.supdY, tau)


def _drift_penalty(f: Driver, tau):
    if f.d == 0:
        return np.zeros_like(tau)
    with np.errstate(invalid="ignore"):
        return f.d * np.exp(tau * f.sup_abs_dY) * tau


def lower_map(f: Driver, mom_neg, mom_pos, tau, d_sign: float = 1.0,
              holder: tuple | None = None):
    """-e^{tau supdY} E[D^-] + e^{tau infdY} E[D^+] - d e^{tau sup|dY|} tau.

    ``holder=(q_neg, q_pos)`` adds the case-2 exponential corrections; the
    moments passed in are then the L^q-type moments.
    """
    neg_w = np.exp(tau * f.supdY)
    pos_w = np.exp(tau * f.infdY)
    if holder is not None:
        qn, qp = holder
        s2 = f.supAbsdZ ** 2 / 2.0
        neg_w = neg_w * np.exp(s2 * tau / (qn - 1.0))
        pos_w = pos_w * np.exp(qp / (1.0 - qp) * s2 * tau)
    return -neg_w * mom_neg + pos_w * mom_pos - d_sign * _drift_penalty(f, tau)


def upper_map(f: Driver, mom_neg, mom_pos, tau):
    """-e^{tau infdY} E[D^-] + e^{tau supdY} E[D^+] + d e^{tau sup|dY|} tau."""
    return -np.exp(tau * f.infdY) * mom_neg + np.exp(tau * f.supdY) * mom_pos + _drift_penalty(f, tau)


def _moments(xi: Payoff, paths: PathEnsemble, q_neg=None, q_pos=None) -> list[DxiMoments]:
    grid = paths.grid
    xi.validate(grid)
    qn = as_grid_values(2.0 if q_neg is None else q_neg, grid, "compensator.q_neg")
    qp = as_grid_values(2.0 if q_pos is None else q_pos, grid, "compensator.q_pos")
    if np.any(qn <= 1) or np.any(qp <= 1):
        raise InvalidConfigError("compensator.q_neg and compensator.q_pos must be > 1 on the grid")
    return [moments_from_derivative(xi.derivative(paths, k), grid.times[k], qn[k], qp[k])
            for k in range(grid.n_steps + 1)]


def _terminal_check(mom_T: DxiMoments, nu_T: float, n_se: float = 3.0) -> float:
    m = mom_T.mean
    margin = m.mean + n_se * m.stderr - nu_T
    if margin < 0:
        raise InfeasibleError(
            f"terminal condition fails: nu(T)={nu_T:.6g} > E[D_T xi]={m.mean:.6g} "
            f"(+{n_se:g} stderr)", t=float(mom_T.t))
    return float(margin)


def _finish_alpha(bracket, times, i_vals, lower, nu, margin, cap):
    finite = np.where(np.isnan(bracket), np.inf, bracket)
    j = int(np.argmax(finite))
    top = float(finite[j])
    if not top <= cap:
        raise InfeasibleError(
            f"bracket map exceeds the cap {cap:g} (value {top:.6g}) at t={times[j]:.6g}",
            t=float(times[j]))
    return AlphaResult(alpha=max(0.0, top), times=times, bracket=bracket, i_values=i_vals,
                       lower=lower, nu=nu, terminal_margin=margin, argmax_t=float(times[j]))


def bracket_terms(xi: Payoff, f: Driver, nu, paths: PathEnsemble, q_neg=None, q_pos=None,
                  p: float | None = None):
    """Grid pieces of the alpha formula without any feasibility decision.

    Returns ``(moments, nu_values, times, numerator, i_values, lower)`` where
    ``times`` excludes T and numerator = nu - lower. Passing ``p`` selects
    the Hölder-corrected (Z-dependent) variant.
    """
    grid = paths.grid
    nu_v = as_grid_values(nu, grid, "constraint.nu")
    moms = _moments(xi, paths, q_neg, q_pos)
    times = grid.times[:-1]
    tau = grid.T - times
    i_vals, _ = helper_i_s(times, f, grid.T, p=p)
    if p is None:
        neg = np.array([m.mean_neg.mean for m in moms[:-1]])
        pos = np.array([m.mean_pos.mean for m in moms[:-1]])
        low = lower_map(f, neg, pos, tau)
    else:
        neg = np.array([m.lp_neg.mean for m in moms[:-1]])
        pos = np.array([m.lp_pos.mean for m in moms[:-1]])
        qn = np.array([m.q_neg for m in moms[:-1]])
        qp = np.array([m.q_pos for m in moms[:-1]])
        low = lower_map(f, neg, pos, tau, holder=(qn, qp))
    with np.errstate(invalid="ignore"):
        numer = nu_v[:-1] - low
    return moms, nu_v, times, numer, i_vals, low


def alpha_case1(xi: Payoff, f: Driver, nu, paths: PathEnsemble, cap: float = DEFAULT_CAP) -> AlphaResult:
    """Constant alpha for a driver without Z dependence.

    alpha = (max over grid t < T of [nu(t) - lower_map(t)] / i(t))^+ with the
    sample means of D_t xi^+ and D_t xi^-.
    """
    if f.supAbsdZ != 0:
        raise InvalidConfigError("alpha_case1 needs a driver with supAbsdZ = 0")
    moms, nu_v, times, numer, i_vals, low = bracket_terms(xi, f, nu, paths)
    margin = _terminal_check(moms[-1], nu_v[-1])
    with np.errstate(invalid="ignore"):
        bracket = numer / i_vals
    return _finish_alpha(bracket, times, i_vals, low, nu_v, margin, cap)


def alpha_case2(xi: Payoff, f: Driver, nu, paths: PathEnsemble, q_neg, q_pos, p: float,
                cap: float = DEFAULT_CAP) -> AlphaResult:
    """Constant alpha for a Z-dependent driver via Hölder-corrected moments.

    Used with k_s normalized by 1/(2p). The positive part is taken so that
    alpha is admissible (nonnegative).
    """
    if not p > 1:
        raise InvalidConfigError(f"compensator.p must be > 1 in case 2, got {p!r}")
    moms, nu_v, times, numer, i_vals, low = bracket_terms(xi, f, nu, paths, q_neg, q_pos, p)
    margin = _terminal_check(moms[-1], nu_v[-1])
    with np.errstate(invalid="ignore"):
        bracket = numer / i_vals
    return _finish_alpha(bracket, times, i_vals, low, nu_v, margin, cap)


def bilateral_alpha_search(xi: Payoff, f: Driver, nu_low, nu_high, paths: PathEnsemble,
                           rel_tol: float = 1e-12) -> BilateralResult:
    """Time-varying alpha keeping nu_low <= E[Z_t] <= nu_high.

    For alpha >= 0 the admissible interval is
    [(nu_low - lower)/i, (nu_high - upper)/s]; for alpha <= 0 the roles of
    i and s swap. The feasible value of smallest magnitude is chosen.
    """
    if f.supAbsdZ != 0:
        raise InvalidConfigError("bilateral search needs a driver with supAbsdZ = 0")
    grid = paths.grid
    lo_v = as_grid_values(nu_low, grid, "constraint.nu_low")
    hi_v = as_grid_values(nu_high, grid, "constraint.nu_high")
    moms = _moments(xi, paths)
    mT = moms[-1].mean
    if lo_v[-1] > mT.mean + 3 * mT.stderr or hi_v[-1] < mT.mean - 3 * mT.stderr:
        raise BilateralInfeasibleError(
            f"terminal condition fails: need {lo_v[-1]:.6g} <= E[D_T xi]={mT.mean:.6g} "
            f"<= {hi_v[-1]:.6g}", times=(float(grid.T),))
    times = grid.times[:-1]
    tau = grid.T - times
    i_vals, s_vals = helper_i_s(times, f, grid.T)
    neg = np.array([m.mean_neg.mean for m in moms[:-1]])
    pos = np.array([m.mean_pos.mean for m in moms[:-1]])
    with np.errstate(invalid="ignore"):
        num_lo = lo_v[:-1] - lower_map(f, neg, pos, tau)
        num_hi = hi_v[:-1] - upper_map(f, neg, pos, tau)
        pos_iv = np.column_stack([num_lo / i_vals, num_hi / s_vals])
        neg_iv = np.column_stack([num_lo / s_vals, num_hi / i_vals])
    alpha = np.empty(grid.n_steps + 1)
    bad = []
    for j in range(times.size):
        cands = []
        lo, hi = max(pos_iv[j, 0], 0.0), pos_iv[j, 1]
        if lo <= hi + rel_tol * max(1.0, abs(lo)):
            cands.append(lo)
        lo, hi = neg_iv[j, 0], min(neg_iv[j, 1], 0.0)
        if lo <= hi + rel_tol * max(1.0, abs(hi)):
            cands.append(hi)
        if not cands:
            bad.append(float(times[j]))
            continue
        # ties go to the first (nonnegative) branch
        alpha[j] = min(cands, key=abs)
    if bad:
        shown = ", ".join(f"{t:.6g}" for t in bad[:10])
        raise BilateralInfeasibleError(
            f"no admissible alpha at {len(bad)} grid time(s): {shown}", times=tuple(bad))
    alpha[-1] = alpha[-2]
    return BilateralResult(alpha, grid.times.copy(), pos_iv, neg_iv)


def build_K(paths: PathEnsemble, spec: CompensatorSpec) -> CompensatorPaths:
    """k from the stochastic exponential and K_{t_{j+1}} = K_{t_j} + k_{t_{j+1}} dt_j.

    With the right endpoint the increment over [t_j, t_{j+1}] is correlated
    with dB_j, so the regression gives Z_j = alpha k_j (T - t_j) as in the
    closed form. The left endpoint would give alpha k_j (T - t_{j+1}), an
    O(dt) bias in E[Z_t].
    """
    n1 = paths.grid.n_steps + 1
    if spec.is_null():
        zeros = np.zeros((paths.n_paths, n1))
        return CompensatorPaths(zeros, zeros, spec, null=True)
    k, K = stochastic_exponential(paths, spec.alpha_values(paths.grid), spec.p, with_integral=True)
    return CompensatorPaths(k, K, spec)


def malliavin_K_check(paths: PathEnsemble, spec: CompensatorSpec, u: float, t: float,
                      eps: float = 1e-5, rel_tol: float = 1e-3) -> dict:
    """Bump the increment starting at ``u`` by ``eps`` and difference K_t.

    Compares, per path, against the chain-rule value alpha_u (K_t - K_u)
    and against the alternative form alpha_u K_t.
    """
    if eps <= 0:
        raise InvalidConfigError("eps must be > 0")
    grid = paths.grid
    ku, kt = grid.index_of(u), grid.index_of(t)
    comp = build_K(paths, spec)
    n = paths.n_paths
    if ku >= grid.n_steps or ku > kt:
        fd = np.zeros(n)
    else:
        inc = paths.increments.copy()
        inc[:, ku] += eps
        bumped = build_K(paths.with_increments(inc), spec)
        fd = (bumped.K[:, kt] - comp.K[:, kt]) / eps
    if ku > kt:
        chain = np.zeros(n)
        stated = np.zeros(n)
    else:
        a_u = 0.0 if spec.is_null() else float(spec.alpha_values(grid)[ku])
        chain = a_u * (comp.K[:, kt] - comp.K[:, ku])
        stated = a_u * comp.K[:, kt]

    def rel_err(ref):
        scale = np.maximum(np.abs(ref), np.abs(fd))
        with np.errstate(invalid="ignore", divide="ignore"):
            err = np.where(scale > 0, np.abs(fd - ref) / scale, 0.0)
        return err

    e_chain, e_stated = rel_err(chain), rel_err(stated)
    chain_ok = bool(np.all(e_chain <= rel_tol))
    stated_ok = bool(np.all(e_stated <= rel_tol))
    if chain_ok and stated_ok:
        outcome = "both forms agree"
    elif chain_ok:
        outcome = "chain-rule form alpha_u (K_t - K_u) matches; alpha_u K_t does not"
    elif stated_ok:
        outcome = "alpha_u K_t matches; chain-rule form does not"
    else:
        outcome = "neither form matches"
    return {
        "u": float(grid.times[ku]), "t": float(grid.times[kt]), "eps": eps,
        "fd": fd, "chain_rule": chain, "stated_form": stated,
        "max_rel_err_chain_rule": float(np.max(e_chain)) if n else 0.0,
        "max_rel_err_stated_form": float(np.max(e_stated)) if n else 0.0,
        "chain_rule_matches": chain_ok, "stated_form_matches": stated_ok,
        "outcome": outcome,
    }
