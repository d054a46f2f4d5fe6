"""Safe compilation of user formulas from config files.

Formulas are short arithmetic expressions in a fixed set of variables
(t, b, y, z, x, T and x0, x1, ... for cylinder payoffs). The syntax tree is
whitelisted before sympy sees it, so config files cannot execute code.
"""
from __future__ import annotations

import ast
import re
from functools import cached_property

import numpy as np
import sympy as sp

from .errors import ConfigParseError

__all__ = ["Formula", "compile_formula", "as_formula"]

_FUNCS = {
    "exp": sp.exp, "log": sp.log, "sqrt": sp.sqrt, "abs": sp.Abs, "Abs": sp.Abs,
    "sin": sp.sin, "cos": sp.cos, "tanh": sp.tanh, "max": sp.Max, "min": sp.Min,
    "Max": sp.Max, "Min": sp.Min,
    "clip": lambda v, lo, hi: sp.Min(sp.Max(v, lo), hi),
    "pos": lambda v: sp.Max(v, 0),
    "neg": lambda v: sp.Max(-v, 0),
}
_CONSTS = {"pi": sp.pi, "e": sp.E}
_BASE_VARS = ("t", "b", "y", "z", "x", "T")
_CYL = re.compile(r"^x\d+$")
_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
          ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def _check_tree(src: str, path: str):
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ConfigParseError(f"invalid formula {src!r}: {exc.msg}", path) from None
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ConfigParseError(
                f"formula {src!r} uses unsupported syntax ({type(node).__name__})", path)
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise ConfigParseError(f"formula {src!r} calls an unknown function", path)
        elif isinstance(node, ast.Name):
            ok = (node.id in _FUNCS or node.id in _CONSTS or node.id in _BASE_VARS
                  or _CYL.match(node.id))
            if not ok:
                raise ConfigParseError(f"formula {src!r} uses unknown name {node.id!r}", path)
        elif isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigParseError(f"formula {src!r} contains a non-numeric literal", path)
    return tree


def _to_sympy(node, symbols):
    if isinstance(node, ast.Expression):
        return _to_sympy(node.body, symbols)
    if isinstance(node, ast.Constant):
        v = node.value
        return sp.Integer(v) if isinstance(v, int) else sp.Float(v)
    if isinstance(node, ast.Name):
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        return symbols.setdefault(node.id, sp.Symbol(node.id, real=True))
    if isinstance(node, ast.UnaryOp):
        v = _to_sympy(node.operand, symbols)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        a, b = _to_sympy(node.left, symbols), _to_sympy(node.right, symbols)
        op = node.op
        if isinstance(op, ast.Add):
            return a + b
        if isinstance(op, ast.Sub):
            return a - b
        if isinstance(op, ast.Mult):
            return a * b
        if isinstance(op, ast.Div):
            return a / b
        return a ** b
    if isinstance(node, ast.Call):
        return _FUNCS[node.func.id](*[_to_sympy(a, symbols) for a in node.args])
    raise ConfigParseError("unsupported formula node")  # unreachable after the whitelist


class Formula:
    """A compiled formula in named variables.

    Calling it with keyword arrays returns an array broadcast to their
    common shape; constant formulas return a scalar when called without
    arrays.
    """

    def __init__(self, expr: sp.Expr, source: str, params: dict | None = None):
        self.expr = expr
        self.source = source
        self.params = dict(params or {})

    @cached_property
    def variables(self) -> tuple:
        return tuple(sorted(s.name for s in self.expr.free_symbols))

    @property
    def is_constant(self) -> bool:
        return not self.variables

    def bind(self, **params) -> "Formula":
        """Substitute numeric parameters (e.g. T) and return a new formula."""
        subs = {sp.Symbol(k, real=True): sp.Float(v) for k, v in params.items()}
        return Formula(self.expr.subs(subs), self.source, {**self.params, **params})

    def diff(self, var: str) -> "Formula":
        return Formula(sp.diff(self.expr, sp.Symbol(var, real=True)), f"d({self.source})/d{var}",
                       self.params)

    @cached_property
    def _fn(self):
        syms = [sp.Symbol(v, real=True) for v in self.variables]
        return sp.lambdify(syms, self.expr, modules="numpy")

    def __call__(self, **values):
        missing = [v for v in self.variables if v not in values]
        if missing:
            raise ConfigParseError(f"formula {self.source!r} needs variables {missing}")
        args = [np.asarray(values[v], float) for v in self.variables]
        shapes = [np.shape(v) for v in values.values()]
        shape = np.broadcast_shapes(*shapes) if shapes else ()
        out = self._fn(*args)
        out = np.broadcast_to(np.asarray(out, float), shape)
        return float(out) if out.ndim == 0 else out.astype(float)

    def constant_value(self) -> float:
        return float(self.expr.evalf())

    def of(self, *names):
        """Positional callable in the given variable order, e.g. of("t", "b")."""
        unknown = [v for v in self.variables if v not in names]
        if unknown:
            raise ConfigParseError(
                f"formula {self.source!r} uses {unknown}; allowed here: {list(names)}")

        def fn(*args):
            return self(**dict(zip(names, args)))

        fn.formula = self
        return fn

    def __repr__(self):
        return f"Formula({self.source!r})"


def compile_formula(src, path: str = "", **params) -> Formula:
    """Compile a formula string (or number) and substitute ``params``."""
    if isinstance(src, bool):
        raise ConfigParseError("expected a number or formula, got a boolean", path)
    if isinstance(src, (int, float)):
        f = Formula(sp.Float(src), repr(src))
    elif isinstance(src, str):
        symbols: dict = {}
        f = Formula(_to_sympy(_check_tree(src, path), symbols), src)
    else:
        raise ConfigParseError(f"expected a number or formula, got {type(src).__name__}", path)
    return f.bind(**params) if params else f


def as_formula(src, path: str = "", **params):
    """Number for constant input, otherwise a compiled Formula."""
    f = compile_formula(src, path, **params)
    return f.constant_value() if f.is_constant else f
