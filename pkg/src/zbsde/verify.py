"""Statistical checks of E[l(t, Z_t)] >= 0, feasibility pre-checks and the
minimality criterion K_T = 0."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsde import BsdeSolution
from .compensator import bracket_terms
from .constraints import Bilateral, Constraint, LinearLower
from .drivers import Driver, log_gamma_running
from .errors import InvalidConfigError, MissingDerivativeError
from .paths import EstimateCI, PathEnsemble, as_grid_values
from .payoffs import Payoff

__all__ = [
    "SATISFIED",
    "WITHIN_NOISE",
    "VIOLATED",
    "INCONCLUSIVE",
    "classify",
    "ConstraintReport",
    "InfeasibilityReport",
    "SufficientConditionReport",
    "MinimalityReport",
    "verify_constraint",
    "deterministic_K_infeasibility",
    "sufficient_condition_check",
    "minimality_report",
]

SATISFIED = "satisfied"
WITHIN_NOISE = "satisfied-within-noise"
VIOLATED = "violated"
INCONCLUSIVE = "inconclusive"
N_SE = 3.0
K_ZERO_TOL = 1e-12
GRID_CAVEAT = ("checked at grid times only; behaviour between grid points is not verified")


def classify(est: EstimateCI, n_se: float = N_SE) -> str:
    """Verdict for an estimate of E[l(t, Z_t)].

    Estimates within ``n_se`` standard errors of 0 are reported as
    satisfied-within-noise whatever their sign.
    """
    m, se = est.mean, est.stderr
    if not (np.isfinite(m) and np.isfinite(se)):
        return INCONCLUSIVE
    if m - n_se * se >= 0 and not abs(m) <= n_se * se:
        return SATISFIED
    if m + n_se * se < 0:
        return VIOLATED
    return WITHIN_NOISE


def _overall(verdicts) -> str:
    v = set(verdicts)
    for tag in (VIOLATED, INCONCLUSIVE, WITHIN_NOISE):
        if tag in v:
            return tag
    return SATISFIED


@dataclass
class ConstraintReport:
    """Per grid time estimate of E[l(t, Z_t)], the threshold and a verdict."""

    times: np.ndarray
    estimates: list
    nu: np.ndarray
    verdicts: list
    overall: str
    kind: str
    grid_caveat: str = GRID_CAVEAT
    sides: dict = field(default_factory=dict)

    def rows(self):
        if self.sides:
            for name, rep in self.sides.items():
                for r in rep.rows():
                    yield {"side": name, **r}
            return
        for t, e, nu, v in zip(self.times, self.estimates, self.nu, self.verdicts):
            yield {"t": float(t), "mean": e.mean, "stderr": e.stderr, "nu": float(nu),
                   "verdict": v}

    def as_dict(self) -> dict:
        out = {"kind": self.kind, "overall": self.overall, "grid_caveat": self.grid_caveat}
        if self.sides:
            out["sides"] = {k: v.as_dict() for k, v in self.sides.items()}
        else:
            counts = {}
            for v in self.verdicts:
                counts[v] = counts.get(v, 0) + 1
            out["verdict_counts"] = counts
            ratio = [abs(e.mean) / e.stderr for e in self.estimates if e.stderr > 0]
            out["max_abs_mean_over_stderr"] = float(max(ratio)) if ratio else 0.0
        return out


def _nu_values(ell: Constraint, times) -> np.ndarray:
    nu = getattr(ell, "nu", None)
    if nu is None:
        return np.full(len(times), np.nan)
    return np.array([float(np.asarray(nu(t), float)) for t in times])


def verify_constraint(sol: BsdeSolution, ell: Constraint, paths: PathEnsemble | None = None,
                      n_se: float = N_SE) -> ConstraintReport:
    """Estimate E[l(t, Z_t)] at every grid time and classify it.

    l(Z) is split as c Z + (l(Z) - c Z) with c the mean slope of l; the first
    part carries the standard error of the E[Z_t] estimate, the remainder its
    path spread. Linear constraints thus inherit the E[Z_t] error exactly.
    """
    if isinstance(ell, Bilateral):
        low = verify_constraint(sol, ell.lower, paths, n_se)
        high = verify_constraint(sol, ell.upper, paths, n_se)
        low.kind, high.kind = "lower", "upper"
        overall = _overall([low.overall, high.overall])
        return ConstraintReport(sol.times, [], np.array([]), [], overall, "bilateral",
                                sides={"lower": low, "upper": high})
    Z = sol.Z
    times = sol.times
    N = Z.shape[0]
    z_se = sol.mean_Z_stderr()
    ests, verdicts = [], []
    for k, t in enumerate(times):
        z = Z[:, k]
        v = ell.value(t, z)
        c = float(np.mean(ell.dx(t, z)))
        rest = v - c * z
        rest_var = float(np.var(rest, ddof=1)) if N > 1 and np.ptp(rest) > 0 else 0.0
        se = float(np.sqrt(c * c * z_se[k] ** 2 + rest_var / N))
        m = float(np.mean(v))
        if np.ptp(v) == 0 and z_se[k] == 0:
            m = float(v[0])
        e = EstimateCI(m, se, N)
        ests.append(e)
        verdicts.append(classify(e, n_se))
    return ConstraintReport(times.copy(), ests, _nu_values(ell, times), verdicts,
                            _overall(verdicts), ell.kind)


@dataclass
class InfeasibilityReport:
    """m(t) estimates against nu(t); flagged times witness that no
    deterministic compensator can enforce the constraint."""

    times: np.ndarray
    m: list
    nu: np.ndarray
    flagged: np.ndarray
    conclusion: str

    @property
    def any_flagged(self) -> bool:
        return bool(np.any(self.flagged))

    @property
    def margin(self) -> np.ndarray:
        """nu(t) - (m(t) + 3 stderr); positive where flagged."""
        return np.array([nu - (e.mean + N_SE * e.stderr) for e, nu in zip(self.m, self.nu)])

    def rows(self):
        for t, e, nu, fl, mg in zip(self.times, self.m, self.nu, self.flagged, self.margin):
            yield {"t": float(t), "m": e.mean, "stderr": e.stderr, "nu": float(nu),
                   "flagged": bool(fl), "margin": float(mg)}

    def as_dict(self) -> dict:
        idx = np.nonzero(self.flagged)[0]
        return {"flagged": self.any_flagged, "n_flagged": int(idx.size),
                "first_flagged_t": float(self.times[idx[0]]) if idx.size else None,
                "max_margin": float(np.max(self.margin)), "conclusion": self.conclusion}


def deterministic_K_infeasibility(xi: Payoff, f: Driver, nu, paths: PathEnsemble,
                                  sol: BsdeSolution | None = None) -> InfeasibilityReport:
    """m(t) = E[Gamma_t^T D_t xi + int_t^T Gamma_t^s D_t f(s) ds] on the grid.

    With a deterministic compensator E[Z_t] equals m(t), so any t with
    m(t) + 3 stderr < nu(t) rules such compensators out. D_t f(s) is the
    B-derivative of f along the path (left-point quadrature). ``sol``
    supplies (Y, Z) when the driver derivatives depend on them.
    """
    grid = paths.grid
    xi.validate(grid)
    nu_v = as_grid_values(nu, grid, "constraint.nu")
    n = grid.n_steps
    N = paths.n_paths
    if f.is_zero:
        D = [xi.derivative(paths, k) for k in range(n + 1)]
    else:
        if not f.derivatives_free_of_yz and sol is None:
            raise InvalidConfigError("this driver needs (Y, Z) from a prior solve")
        Y = None if sol is None else sol.Y
        Z = None if sol is None else sol.Z
        L = log_gamma_running(paths, f, Y, Z, 0, drift=True)
        B = paths.B
        # weight_j = exp(L_j) D f(t_j) dt_j, summed backwards from each k
        w = np.zeros((N, n + 1))
        for j in range(n):
            y = np.zeros(N) if Y is None else Y[:, j]
            z = np.zeros(N) if Z is None else Z[:, j]
            db = f.db(grid.times[j], B[:, j], y, z)
            if db is None:
                raise MissingDerivativeError(
                    f"driver {f.kind!r} has no Malliavin derivative (supply dfdb)")
            w[:, j] = np.exp(L[:, j]) * db * grid.dt[j]
        tail = np.cumsum(w[:, ::-1], axis=1)[:, ::-1]
        D = []
        for k in range(n + 1):
            gT = np.exp(L[:, n] - L[:, k])
            D.append(gT * xi.derivative(paths, k) + np.exp(-L[:, k]) * tail[:, k])
    m = [EstimateCI.from_samples(d) for d in D]
    flagged = np.array([e.mean + N_SE * e.stderr < v for e, v in zip(m, nu_v)])
    conclusion = ("no deterministic-K supersolution" if flagged.any()
                  else "no obstruction to a deterministic K detected")
    return InfeasibilityReport(grid.times.copy(), m, nu_v, flagged, conclusion)


@dataclass
class SufficientConditionReport:
    mode: str
    times: np.ndarray
    bracket: np.ndarray
    ratio: np.ndarray
    bounded: bool
    alpha_candidate: float
    terminal_holds: bool
    phi_ok: bool | None
    status: str

    def rows(self):
        for t, b, r in zip(self.times, self.bracket, self.ratio):
            yield {"t": float(t), "bracket": float(b), "ratio": float(r)}

    def as_dict(self) -> dict:
        return {"mode": self.mode, "bounded": self.bounded,
                "alpha_candidate": self.alpha_candidate,
                "terminal_holds": self.terminal_holds, "phi_ok": self.phi_ok,
                "status": self.status}


def sufficient_condition_check(xi: Payoff, f: Driver, nu, paths: PathEnsemble,
                               mode: str = "continuity", phi=None, q_neg=None, q_pos=None,
                               p: float | None = None, cap: float = 1e6,
                               rtol: float = 1e-9) -> SufficientConditionReport:
    """Report whether the alpha formula's hypotheses hold on the grid.

    ``continuity``: max of bracket(t)/i(t) and the terminal inequality
    nu(T) < E[D_T xi] (within 3 stderr). ``phi``: bracket(t) <= phi(t) at every
    interior grid time, with sup phi/i as the alpha bound. Drivers with Z
    dependence use the Hölder variant and need ``p``.
    """
    if mode not in ("continuity", "phi"):
        raise InvalidConfigError("mode must be 'continuity' or 'phi'")
    grid = paths.grid
    if f.supAbsdZ != 0 and p is None:
        p = 2.0
    moms, nu_v, times, numer, i_vals, _ = bracket_terms(
        xi, f, nu, paths, q_neg, q_pos, p if f.supAbsdZ != 0 else None)
    mT = moms[-1].mean
    terminal = bool(nu_v[-1] <= mT.mean + N_SE * mT.stderr)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = numer / i_vals
    finite = bool(np.all(np.isfinite(ratio)))
    top = float(np.max(ratio)) if finite else float("inf")
    bounded = finite and top <= cap
    phi_ok = None
    if mode == "phi":
        if phi is None:
            raise InvalidConfigError("phi mode needs a function phi")
        ph = as_grid_values(phi, grid, "phi")
        if ph[-1] > 0:
            raise InvalidConfigError(f"phi(T) must be <= 0, got {ph[-1]:.6g}")
        phi_i = ph[:-1]
        phi_ok = bool(np.all(numer <= phi_i + rtol * np.maximum(1.0, np.abs(phi_i))))
        candidate = max(0.0, float(np.max(phi_i / i_vals)))
    else:
        candidate = max(0.0, top) if bounded else float("inf")
    if not terminal:
        status = "terminal condition fails"
    elif mode == "phi":
        status = (f"phi dominates the bracket, alpha bound {candidate:.6g}" if phi_ok
                  else "phi does not dominate the bracket")
    elif bounded:
        status = f"bounded, alpha-candidate {candidate:.6g}"
    else:
        status = "unbounded bracket map"
    return SufficientConditionReport(mode, times.copy(), numer, ratio, bounded, candidate,
                                     terminal, phi_ok, status)


@dataclass
class MinimalityReport:
    mean_K_T: float
    max_K_T: float
    frac_positive: float
    is_solution: bool
    verdict: str

    def as_dict(self) -> dict:
        return {"mean_K_T": self.mean_K_T, "max_K_T": self.max_K_T,
                "fraction_K_T_positive": self.frac_positive,
                "is_solution": self.is_solution, "verdict": self.verdict}


def minimality_report(sol: BsdeSolution) -> MinimalityReport:
    """K_T statistics; K_T = 0 (within 1e-12) means the supersolution is a
    solution, hence minimal. Existence of a minimal one is never claimed
    otherwise."""
    KT = sol.compensator.K_T
    mx = float(np.max(np.abs(KT))) if KT.size else 0.0
    is_sol = mx <= K_ZERO_TOL
    verdict = ("minimal supersolution (solution)" if is_sol
               else "supersolution, provably non-minimal")
    return MinimalityReport(float(np.mean(KT)), float(np.max(KT)),
                            float(np.mean(KT > K_ZERO_TOL)), is_sol, verdict)
