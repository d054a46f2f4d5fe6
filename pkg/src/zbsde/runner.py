"""Executes the experiments listed in a RunConfig.

Each experiment yields an ``Outcome``: a JSON-ready summary, a flat table
for CSV export and an optional figure description. Path ensembles are
cached per (n_steps, n_paths, seed) so experiments sharing a grid reuse the
same draws.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .compensator import CompensatorSpec, malliavin_K_check
from .config import RunConfig
from .constraints import Bilateral, LinearLower
from .errors import InvalidConfigError, NoClosedFormError, ZBsdeError
from .experiments import (CaseBParams, ConcaveCheckParams, HedgingScenario, as_constraint_blowup,
                          case_b_bound_t0, concave_feasibility, hedging_demo,
                          lemma1_bound_experiment, penalization_sweep, run_pipeline)
from .funcs import as_formula
from .paths import PathEnsemble, coarsen, make_grid, simulate_brownian
from .regression import RegressionBasis
from .verify import deterministic_K_infeasibility, sufficient_condition_check

__all__ = ["Series", "Figure", "Outcome", "Runner"]

log = logging.getLogger("zbsde")


@dataclass
class Series:
    label: str
    x: list
    y: list
    yerr: list | None = None
    style: str = "-"


@dataclass
class Figure:
    title: str
    xlabel: str
    ylabel: str
    series: list


@dataclass
class Outcome:
    index: int
    name: str
    status: str = "ok"
    summary: dict = field(default_factory=dict)
    table: list = field(default_factory=list)
    figure: Figure | None = None
    error: dict | None = None
    seconds: float = 0.0

    @property
    def label(self) -> str:
        return f"{self.index:02d}_{self.name}"


def _lcm(values):
    out = 1
    for v in values:
        out = out * v // math.gcd(out, v)
    return out


class Runner:
    """Runs every experiment of ``cfg``; errors are captured per experiment."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.grid = cfg.build_grid()
        self.xi = cfg.build_payoff()
        self.f = cfg.build_driver()
        self.ell = cfg.build_constraint()
        self.basis = cfg.build_basis()
        self._paths: dict = {}

    # ---- shared helpers

    def paths(self, n_steps: int | None = None, n_paths: int | None = None,
              seed: int | None = None) -> PathEnsemble:
        mc = self.cfg.mc
        key = (n_steps or self.grid.n_steps, n_paths or mc.n_paths,
               mc.seed if seed is None else seed)
        if key not in self._paths:
            grid = self.grid if key[0] == self.grid.n_steps else make_grid(self.grid.T, key[0])
            self._paths[key] = simulate_brownian(grid, key[1], key[2], mc.workers)
        return self._paths[key]

    def _t_value(self, v, path):
        out = as_formula(v, path, T=self.grid.T)
        return out if isinstance(out, float) else out.of("t")

    def _lower_nu(self):
        if isinstance(self.ell, LinearLower):
            return self.ell.nu
        raise InvalidConfigError("this experiment needs constraint.kind = linear_lower")

    def _pipeline(self, paths, stderr_batches=None):
        c, s = self.cfg.compensator, self.cfg.solver
        if stderr_batches is None:
            stderr_batches = s.stderr_batches
        alpha = None if c.alpha is None else self._t_value(c.alpha, "compensator.alpha")
        return run_pipeline(self.xi, self.f, self.ell, paths, mode=c.mode, alpha=alpha, p=c.p,
                            q_neg=self._t_value(c.q_neg, "compensator.q_neg"),
                            q_pos=self._t_value(c.q_pos, "compensator.q_pos"),
                            method=s.method, basis=self.basis, scheme=s.scheme,
                            stderr_batches=stderr_batches)

    # ---- driver loop

    def run(self) -> list[Outcome]:
        outcomes = []
        for i, exp in enumerate(self.cfg.experiments):
            out = Outcome(i, exp.name)
            start = time.perf_counter()
            log.info("[%02d] %s: start", i, exp.name)
            try:
                getattr(self, f"_run_{exp.name}")(exp, out)
            except (ZBsdeError, ArithmeticError, ValueError, MemoryError) as exc:
                out.status = "error"
                out.error = {"type": type(exc).__name__, "message": str(exc)}
                log.error("[%02d] %s: %s: %s", i, exp.name, type(exc).__name__, exc)
            out.seconds = time.perf_counter() - start
            log.info("[%02d] %s: %s", i, exp.name, out.status)
            outcomes.append(out)
        return outcomes

    # ---- experiments

    def _run_pipeline(self, exp, out):
        res = self._pipeline(self.paths())
        sol, rep = res.solution, res.report
        y0 = sol.Y0
        prof = list(sol.profile_rows())
        out.summary = {
            "mode": res.mode, "alpha": _jsonable(res.alpha_summary()),
            "solver": sol.method, "Y0": y0.mean, "Y0_stderr": y0.stderr,
            "max_abs_terminal_residual": float(np.max(np.abs(sol.terminal_residual))),
            "constraint": rep.as_dict(), "minimality": res.minimality.as_dict(),
        }
        if rep.sides:
            for r in prof:
                for name, side in rep.sides.items():
                    k = int(np.argmin(np.abs(side.times - r["t"])))
                    r[f"ell_{name}"] = side.estimates[k].mean
                    r[f"ell_{name}_stderr"] = side.estimates[k].stderr
                    r[f"verdict_{name}"] = side.verdicts[k]
        else:
            for r, e, nu, v in zip(prof, rep.estimates, rep.nu, rep.verdicts):
                r.update({"ell_mean": e.mean, "ell_stderr": e.stderr, "nu": float(nu),
                          "verdict": v})
        out.table = prof
        t = [r["t"] for r in prof]
        series = [Series("E[Z_t]", t, [r["mean_Z"] for r in prof],
                         [3 * r["stderr_Z"] for r in prof])]
        if rep.sides:
            for name, side in rep.sides.items():
                nu = getattr(getattr(self.ell, name), "nu", None)
                if nu is not None:
                    series.append(Series(f"nu_{name}(t)", t, [float(nu(x)) for x in t], style="--"))
        elif isinstance(self.ell, LinearLower) or self.ell.kind == "linear_upper":
            series.append(Series("nu(t)", t, [float(v) for v in rep.nu], style="--"))
        out.figure = Figure("E[Z_t] against the constraint level", "t", "E[Z_t]", series)

    def _run_deterministic_k_infeasibility(self, exp, out):
        nu = self._t_value(exp.nu, "experiments.nu") if exp.nu is not None else self._lower_nu()
        rep = deterministic_K_infeasibility(self.xi, self.f, nu, self.paths())
        out.summary = rep.as_dict()
        out.table = list(rep.rows())
        t = [r["t"] for r in out.table]
        out.figure = Figure("Deterministic-compensator obstruction", "t", "value", [
            Series("m(t)", t, [r["m"] for r in out.table], [3 * r["stderr"] for r in out.table]),
            Series("nu(t)", t, [r["nu"] for r in out.table], style="--")])

    def _run_sufficient_condition(self, exp, out):
        c = self.cfg.compensator
        phi = None if exp.phi is None else self._t_value(exp.phi, "experiments.phi")
        rep = sufficient_condition_check(
            self.xi, self.f, self._lower_nu(), self.paths(), exp.mode, phi,
            self._t_value(c.q_neg, "compensator.q_neg"),
            self._t_value(c.q_pos, "compensator.q_pos"), c.p)
        out.summary = rep.as_dict()
        out.table = list(rep.rows())
        t = [r["t"] for r in out.table]
        out.figure = Figure("Bracket over i(t)", "t", "ratio",
                            [Series("bracket / i(t)", t, [r["ratio"] for r in out.table])])

    def _run_penalization_sweep(self, exp, out):
        res = penalization_sweep(self.xi, self.f, exp.n_values, self.paths(n_paths=exp.n_paths),
                                 exp.method, self.basis)
        out.summary = res.as_dict()
        out.table = list(res.rows())
        n = [r["n"] for r in out.table]
        out.figure = Figure("Penalized Y_0^n", "n", "Y_0^n", [
            Series("Y_0^n", n, [r["Y0"] for r in out.table], [3 * r["stderr"] for r in out.table]),
            Series("fit", n, [res.intercept + res.slope * x for x in n], style="--")])

    def _run_lemma1(self, exp, out):
        sig = as_formula(exp.sigma, "experiments.sigma", T=self.grid.T)
        sigma = sig if isinstance(sig, float) else sig.of("t", "b")
        seeds = exp.seeds or [self.cfg.mc.seed]
        rows = []
        for seed in seeds:
            paths = self.paths(exp.n_steps, exp.n_paths, seed)
            for r in lemma1_bound_experiment(sigma, exp.p_values, exp.t, paths, exp.sup_sigma):
                rows.append({"seed": seed, **r.as_dict()})
        out.table = rows
        tight = [r["tight"] for r in rows if r["tight"] is not None]
        out.summary = {
            "sigma": exp.sigma if isinstance(exp.sigma, str) else float(exp.sigma),
            "seeds": list(seeds), "violations": sum(not r["within_bound"] for r in rows),
            "all_within_bound": all(r["within_bound"] for r in rows),
            "all_tight": all(tight) if tight else None,
        }
        ps = sorted({r["p"] for r in rows})
        first = [r for r in rows if r["seed"] == seeds[0]]
        out.figure = Figure("Moment bound against estimate", "p", "E[|Gamma|^p]^(1/p)", [
            Series("estimate", ps, [r["estimate"] for r in first],
                   [3 * r["stderr"] for r in first], style="o"),
            Series("bound", ps, [r["bound"] for r in first], style="x")])

    def _run_case_b(self, exp, out):
        if isinstance(self.ell, Bilateral):
            raise InvalidConfigError("case_b needs a one-sided constraint")
        params = CaseBParams(exp.c, exp.m_lower, exp.m_bar, exp.d)
        sol = None
        if not self.f.derivatives_free_of_yz:
            sol = self._pipeline(self.paths()).solution
        res = case_b_bound_t0(self.xi, self.f, self.ell, params, self.paths(), sol)
        out.summary = res.as_dict()
        out.table = [{"t": 0.0, **res.as_dict()}]

    def _run_concave_feasibility(self, exp, out):
        params = ConcaveCheckParams(self._t_value(exp.q_neg, "experiments.q_neg"),
                                    self._t_value(exp.q_pos, "experiments.q_pos"))
        rep = concave_feasibility(self.xi, self.f, self.ell, params, self.paths())
        out.summary = rep.as_dict()
        out.table = list(rep.rows())
        t = [r["t"] for r in out.table]
        out.figure = Figure("Concave-constraint map", "t", "map",
                            [Series("map", t, [r["map"] for r in out.table])])

    def _run_blowup(self, exp, out):
        res = as_constraint_blowup(self.xi, self.f, exp.n_values, self.paths(), exp.level,
                                   RegressionBasis("poly_b", exp.degree))
        out.summary = res.as_dict()
        out.table = list(res.rows())
        n = [r["n"] for r in out.table]
        out.figure = Figure("Almost-sure penalization", "n", "Y_0^n", [
            Series("lower bound", n, [r["lower_bound"] for r in out.table], style="--"),
            Series("simulated", n, [r["Y0"] for r in out.table],
                   [3 * r["stderr"] for r in out.table], style="o-")])

    def _run_hedging(self, exp, out):
        sc = HedgingScenario(self._t_value(exp.r, "experiments.r"),
                             self._t_value(exp.mu, "experiments.mu"),
                             self._t_value(exp.sigma, "experiments.sigma"), self.xi,
                             self._t_value(exp.beta, "experiments.beta"), exp.sigma_min)
        res = hedging_demo(sc, self.paths(), self.cfg.solver.method, self.basis)
        out.summary = _jsonable(res.as_dict())
        sol = res.pipeline.solution
        out.table = [{**r, "nu": float(nu)} for r, nu in zip(sol.profile_rows(), res.nu)]
        t = [r["t"] for r in out.table]
        out.figure = Figure("Hedging: E[Z_t] against beta(t) sigma(t)", "t", "E[Z_t]", [
            Series("E[Z_t]", t, [r["mean_Z"] for r in out.table],
                   [3 * r["stderr_Z"] for r in out.table]),
            Series("nu(t)", t, [r["nu"] for r in out.table], style="--")])

    def _run_malliavin_k(self, exp, out):
        spec = CompensatorSpec(self._t_value(exp.alpha, "experiments.alpha"), 1.0, "custom")
        paths = self.paths(n_paths=exp.n_paths)
        rows, checks = [], []
        for u, t in exp.pairs:
            chk = malliavin_K_check(paths, spec, u, t, exp.eps)
            checks.append({k: v for k, v in chk.items() if not isinstance(v, np.ndarray)})
            for i in range(paths.n_paths):
                rows.append({"u": chk["u"], "t": chk["t"], "path": i, "fd": chk["fd"][i],
                             "chain_rule": chk["chain_rule"][i],
                             "stated_form": chk["stated_form"][i]})
        out.table = rows
        out.summary = {"checks": checks,
                       "chain_rule_matches": all(c["chain_rule_matches"] for c in checks),
                       "stated_form_matches": all(c["stated_form_matches"] for c in checks)}

    def _run_convergence(self, exp, out):
        steps = sorted(int(s) for s in exp.steps)
        if not steps or steps[0] < 1:
            raise InvalidConfigError("experiments.steps must be positive integers")
        fine = exp.fine_steps or _lcm(steps)
        if any(fine % s for s in steps):
            raise InvalidConfigError(f"fine_steps={fine} is not a multiple of every step count")
        base = self.paths(fine, exp.n_paths)
        ref = _exact_y0(self, coarsen(base, fine // steps[0]))
        rows = []
        for s in steps:
            # only Y_0 is reported, so skip the batch reruns for E[Z_t] errors
            res = self._pipeline(coarsen(base, fine // s), stderr_batches=0)
            y0 = res.solution.Y0
            row = {"n_steps": s, "Y0": y0.mean, "stderr": y0.stderr}
            if ref is not None:
                row["abs_error"] = abs(y0.mean - ref)
                row["rel_error"] = abs(y0.mean - ref) / abs(ref) if ref else float("nan")
            rows.append(row)
        out.table = rows
        out.summary = {"reference_Y0": ref, "fine_steps": fine}
        if ref is not None:
            errs = [r["abs_error"] for r in rows]
            out.summary["monotone_decrease"] = bool(all(b < a for a, b in zip(errs, errs[1:])))
            out.summary["final_rel_error"] = rows[-1]["rel_error"]
            out.figure = Figure("Regression error against step count", "steps", "|Y_0 - exact|",
                                [Series("|Y_0 - exact|", steps, errs, style="o-")])


def _exact_y0(runner: Runner, paths: PathEnsemble):
    """Y_0 of the closed form when it is deterministic, else None."""
    try:
        res = run_pipeline(runner.xi, runner.f, runner.ell, paths,
                           mode=runner.cfg.compensator.mode,
                           alpha=None if runner.cfg.compensator.alpha is None
                           else runner._t_value(runner.cfg.compensator.alpha, "compensator.alpha"),
                           p=runner.cfg.compensator.p, method="closed_form")
    except (NoClosedFormError, InvalidConfigError):
        return None
    y0 = res.solution.Y[:, 0]
    return float(y0[0]) if np.ptp(y0) == 0 else None


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v
