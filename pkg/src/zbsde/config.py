"""Run configuration: TOML documents validated into typed settings.

The schema is strict (unknown keys are rejected). Model building turns the
validated tree into payoff, driver and constraint objects; numeric
preconditions are checked there and reported with the field name.
"""
from __future__ import annotations

import sys
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .constraints import Bilateral, General, LinearLower, LinearUpper
from .drivers import CustomDriver, ExpInverseDriver, LinearDriver, ZeroDriver
from .errors import ConfigParseError, InvalidConfigError
from .funcs import as_formula, compile_formula
from .paths import make_grid
from .payoffs import Constant, Cylinder, GeometricExponential, WienerIntegral
from .regression import RegressionBasis

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["RunConfig", "parse_config", "load_config", "EXPERIMENT_NAMES"]

Num = Union[float, str]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridCfg(_Strict):
    T: float = 1.0
    n_steps: int = 100


class McCfg(_Strict):
    n_paths: int = 100_000
    seed: int = 7
    workers: int = 1


# payoffs

class WienerPayoffCfg(_Strict):
    kind: Literal["wiener_integral"]
    lam: Num


class GeometricPayoffCfg(_Strict):
    kind: Literal["geometric_exponential"]
    sign: Literal[1, -1] = 1


class CylinderPayoffCfg(_Strict):
    kind: Literal["cylinder"]
    g: str
    times: list[float]
    infimum: Optional[float] = None


class ConstantPayoffCfg(_Strict):
    kind: Literal["constant"]
    value: float


PayoffCfg = Annotated[Union[WienerPayoffCfg, GeometricPayoffCfg, CylinderPayoffCfg,
                            ConstantPayoffCfg], Field(discriminator="kind")]


# drivers

class ZeroDriverCfg(_Strict):
    kind: Literal["zero"]


class ExpInverseDriverCfg(_Strict):
    kind: Literal["exp_inverse"]


class LinearDriverCfg(_Strict):
    kind: Literal["linear"]
    a: Num = 0.0
    b: Num = 0.0
    c: Num = 0.0


class CustomDriverCfg(_Strict):
    kind: Literal["custom"]
    f: str
    supdY: float
    infdY: float
    supAbsdZ: float
    d: float
    dfdy: Optional[str] = None
    dfdz: Optional[str] = None
    dfdb: Optional[str] = None
    infimum: Optional[float] = None


DriverCfg = Annotated[Union[ZeroDriverCfg, ExpInverseDriverCfg, LinearDriverCfg, CustomDriverCfg],
                      Field(discriminator="kind")]


# constraints

class LowerCfg(_Strict):
    kind: Literal["linear_lower"]
    nu: Num = 0.0


class UpperCfg(_Strict):
    kind: Literal["linear_upper"]
    nu: Num = 0.0


class BilateralCfg(_Strict):
    kind: Literal["bilateral"]
    nu_low: Num
    nu_high: Num


class GeneralCfg(_Strict):
    kind: Literal["general"]
    ell: str
    curvature: Literal["convex", "concave", "linear"]
    K_lower: Optional[float] = None
    C: Optional[float] = None
    C_lower: Optional[float] = None
    M_bar: Optional[float] = None
    K_bar: Optional[float] = None


ConstraintCfg = Annotated[Union[LowerCfg, UpperCfg, BilateralCfg, GeneralCfg],
                          Field(discriminator="kind")]


class CompensatorCfg(_Strict):
    mode: Literal["auto", "none", "case1", "case2", "bilateral", "custom"] = "auto"
    alpha: Optional[Num] = None
    p: float = 2.0
    q_neg: Num = 2.0
    q_pos: Num = 2.0


class SolverCfg(_Strict):
    method: Literal["regression", "closed_form", "auto"] = "regression"
    basis: Literal["poly_b", "poly_b_k"] = "poly_b_k"
    degree: int = 3
    scheme: Literal["explicit", "implicit"] = "explicit"
    stderr_batches: int = 16


# experiments

class PipelineExp(_Strict):
    name: Literal["pipeline"]


class InfeasibilityExp(_Strict):
    name: Literal["deterministic_k_infeasibility"]
    nu: Optional[Num] = None


class SufficientExp(_Strict):
    name: Literal["sufficient_condition"]
    mode: Literal["continuity", "phi"] = "continuity"
    phi: Optional[Num] = None


class PenalizationExp(_Strict):
    name: Literal["penalization_sweep"]
    n_values: list[float]
    method: Literal["closed_form_f0", "mean_field_iteration"] = "closed_form_f0"
    n_paths: Optional[int] = None


class Lemma1Exp(_Strict):
    name: Literal["lemma1"]
    sigma: Num
    sup_sigma: Optional[float] = None
    p_values: list[float] = [2.0, 3.0]
    t: float = 0.0
    n_paths: Optional[int] = None
    n_steps: Optional[int] = None
    seeds: Optional[list[int]] = None


class CaseBExp(_Strict):
    name: Literal["case_b"]
    c: float
    m_lower: float
    m_bar: Optional[float] = None
    d: Optional[float] = None


class ConcaveExp(_Strict):
    name: Literal["concave_feasibility"]
    q_neg: Num = 2.0
    q_pos: Num = 2.0


class BlowupExp(_Strict):
    name: Literal["blowup"]
    n_values: list[float]
    level: float = 1.0
    degree: int = 2


class HedgingExp(_Strict):
    name: Literal["hedging"]
    r: Num = 0.0
    mu: Num = 0.0
    sigma: Num = 1.0
    sigma_min: float = 1e-8
    beta: Num = 0.0


class MalliavinKExp(_Strict):
    name: Literal["malliavin_k"]
    alpha: Num = 1.0
    pairs: list[tuple[float, float]] = [(0.25, 0.5), (0.5, 1.0)]
    eps: float = 1e-5
    n_paths: int = 100


class ConvergenceExp(_Strict):
    name: Literal["convergence"]
    steps: list[int] = [25, 50, 100, 200]
    n_paths: Optional[int] = None
    fine_steps: Optional[int] = None


ExperimentCfg = Annotated[Union[PipelineExp, InfeasibilityExp, SufficientExp, PenalizationExp,
                                Lemma1Exp, CaseBExp, ConcaveExp, BlowupExp, HedgingExp,
                                MalliavinKExp, ConvergenceExp], Field(discriminator="name")]

EXPERIMENT_NAMES = ("pipeline", "deterministic_k_infeasibility", "sufficient_condition",
                    "penalization_sweep", "lemma1", "case_b", "concave_feasibility", "blowup",
                    "hedging", "malliavin_k", "convergence")


class RunConfig(_Strict):
    """Validated run configuration (see docs/CONFIG.md for every field)."""

    grid: GridCfg = GridCfg()
    mc: McCfg = McCfg()
    payoff: PayoffCfg
    driver: DriverCfg = ZeroDriverCfg(kind="zero")
    constraint: ConstraintCfg = LowerCfg(kind="linear_lower")
    compensator: CompensatorCfg = CompensatorCfg()
    solver: SolverCfg = SolverCfg()
    experiments: list[ExperimentCfg] = [PipelineExp(name="pipeline")]
    output_dir: str = "out"

    # ---- builders; errors name the offending field

    def build_grid(self):
        return make_grid(self.grid.T, self.grid.n_steps)

    def build_payoff(self):
        p, T = self.payoff, self.grid.T
        if p.kind == "wiener_integral":
            lam = as_formula(p.lam, "payoff.lam", T=T)
            return WienerIntegral(lam if isinstance(lam, float) else lam.of("t"))
        if p.kind == "geometric_exponential":
            return GeometricExponential(p.sign)
        if p.kind == "constant":
            return Constant(p.value)
        g = compile_formula(p.g, "payoff.g", T=T)
        n = len(p.times)
        names = [f"x{i}" for i in range(n)]
        bad = [v for v in g.variables if v not in names]
        if bad:
            raise InvalidConfigError(f"payoff.g uses {bad}; it may only use x0..x{n - 1}")
        partials = [g.diff(v) for v in names]

        def fn(X):
            return g(**{v: X[:, i] for i, v in enumerate(names)})

        def grad(X):
            import numpy as np
            return np.column_stack([d(**{v: X[:, i] for i, v in enumerate(names)}) * np.ones(len(X))
                                    for d in partials])

        return Cylinder(fn, p.times, grad=grad, infimum=p.infimum)

    def build_driver(self):
        d, T = self.driver, self.grid.T
        if d.kind == "zero":
            return ZeroDriver()
        if d.kind == "exp_inverse":
            return ExpInverseDriver()
        if d.kind == "linear":
            coef = []
            for name in ("a", "b", "c"):
                v = as_formula(getattr(d, name), f"driver.{name}", T=T)
                coef.append(v if isinstance(v, float) else v.of("t"))
            return LinearDriver(*coef, horizon=T)
        f = compile_formula(d.f, "driver.f", T=T)
        args = ("t", "b", "y", "z")
        f.of(*args)
        parts = {}
        for var, key in (("y", "dfdy"), ("z", "dfdz"), ("b", "dfdb")):
            src = getattr(d, key)
            parts[var] = (compile_formula(src, f"driver.{key}", T=T) if src is not None
                          else f.diff(var))
        free = all(v not in parts[w].variables for w in ("y", "z") for v in ("y", "z"))
        return CustomDriver(f.of(*args), d.supdY, d.infdY, d.supAbsdZ, d.d,
                            dfdy=parts["y"].of(*args), dfdz=parts["z"].of(*args),
                            dfdb=parts["b"].of(*args), state_dependent="b" in f.variables,
                            derivatives_free_of_yz=free, infimum=d.infimum, horizon=T)

    def _time_value(self, v, path):
        out = as_formula(v, path, T=self.grid.T)
        return out if isinstance(out, float) else out.of("t")

    def build_constraint(self):
        c = self.constraint
        if c.kind == "linear_lower":
            return LinearLower(self._time_value(c.nu, "constraint.nu"))
        if c.kind == "linear_upper":
            return LinearUpper(self._time_value(c.nu, "constraint.nu"))
        if c.kind == "bilateral":
            return Bilateral(self._time_value(c.nu_low, "constraint.nu_low"),
                             self._time_value(c.nu_high, "constraint.nu_high"))
        ell = compile_formula(c.ell, "constraint.ell", T=self.grid.T)
        dx = ell.diff("x")
        dxx = dx.diff("x")
        dt = ell.diff("t")
        return General(ell.of("t", "x"), dx.of("t", "x"), dxx.of("t", "x"), c.curvature,
                       dt=dt.of("t", "x"), K_lower=c.K_lower, C=c.C, C_lower=c.C_lower,
                       M_bar=c.M_bar, K_bar=c.K_bar, horizon=self.grid.T)

    def build_basis(self):
        return RegressionBasis(self.solver.basis, self.solver.degree)

    def check(self) -> "RunConfig":
        """Build every model object once so precondition errors surface early."""
        if self.mc.n_paths < 1:
            raise InvalidConfigError(f"mc.n_paths must be >= 1, got {self.mc.n_paths}")
        if not 0 <= self.mc.seed < 2 ** 64:
            raise InvalidConfigError(f"mc.seed must lie in [0, 2**64), got {self.mc.seed}")
        if self.mc.workers < 1:
            raise InvalidConfigError(f"mc.workers must be >= 1, got {self.mc.workers}")
        if self.solver.stderr_batches < 0:
            raise InvalidConfigError("solver.stderr_batches must be >= 0")
        self.build_grid()
        self.build_payoff().validate(self.build_grid())
        self.build_driver()
        self.build_constraint()
        self.build_basis()
        if self.compensator.mode == "custom" and self.compensator.alpha is None:
            raise InvalidConfigError("compensator.alpha is required when compensator.mode = custom")
        return self


def _loc(err) -> str:
    tags = {"wiener_integral", "geometric_exponential", "cylinder", "constant", "zero",
            "exp_inverse", "linear", "custom", "linear_lower", "linear_upper", "bilateral",
            "general", *EXPERIMENT_NAMES}
    parts = []
    for i, item in enumerate(err["loc"]):
        if isinstance(item, str) and item in tags and i > 0:
            continue
        parts.append(f"[{item}]" if isinstance(item, int) else str(item))
    return ".".join(parts).replace(".[", "[")


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse a TOML document into a checked RunConfig.

    ``overrides`` maps dotted keys (e.g. ``"mc.seed"``) to replacement values
    applied before validation.
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"malformed configuration: {exc}") from None
    for key, value in (overrides or {}).items():
        node = data
        *head, last = key.split(".")
        for h in head:
            node = node.setdefault(h, {})
        node[last] = value
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        path = _loc(err)
        raise ConfigParseError(err["msg"], path) from None
    return cfg.check()


def load_config(path, overrides: dict | None = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read {p}: {exc.strerror}") from None
    return parse_config(text, overrides)
