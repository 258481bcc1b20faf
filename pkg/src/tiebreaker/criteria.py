"""Efficiency criteria for the two-line model.

All criteria depend on a design only through its moment triple, and for
fixed (z, xz) only through E_p(x^2 z).  sigma^2 is fixed to 1.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from .design import MomentTriple
from .errors import InfeasibleConstraintsError, ValidationError


def info_matrix(t: MomentTriple, ex2: float) -> np.ndarray:
    """Expected information matrix for (1, x, z, xz) regressors."""
    ez, exz, ex2z = t
    return np.array(
        [
            [1.0, 0.0, ez, exz],
            [0.0, ex2, exz, ex2z],
            [ez, exz, 1.0, 0.0],
            [exz, ex2z, 0.0, ex2],
        ]
    )


def m_matrix(t: MomentTriple, ex2: float) -> np.ndarray:
    """Schur complement D - C D^{-1} C of the information matrix."""
    ez, exz, ex2z = t
    d_inv = np.diag([1.0, 1.0 / ex2])
    c = np.array([[ez, exz], [exz, ex2z]])
    return np.diag([1.0, ex2]) - c @ d_inv @ c


def m11(z_tilde: float, xz: float, ex2: float) -> float:
    return 1.0 - z_tilde**2 - xz**2 / ex2


def det_m(z_tilde: float, xz: float, x2z: float, ex2: float) -> float:
    """det(M) as a concave quadratic in E_p(x^2 z)."""
    w = 1.0 - z_tilde**2
    return (
        -w * x2z**2 / ex2
        - 2.0 * z_tilde * xz**2 * x2z / ex2
        + ex2 * w
        + xz**2 * (xz**2 / ex2 - 2.0)
    )


def a_star(z_tilde: float, xz: float) -> float:
    """Unconstrained maximiser of det(M) over E_p(x^2 z)."""
    if not (-1 < z_tilde < 1):
        raise ValidationError(f"treatment-fraction parameter must lie in (-1, 1), got {z_tilde}")
    return -z_tilde * xz**2 / (1.0 - z_tilde**2)


def efficiency(z_tilde: float, xz: float, x2z: float, ex2: float) -> float:
    """Eff = det(M) / M11, the reciprocal asymptotic variance of the interaction."""
    denom = m11(z_tilde, xz, ex2)
    if denom <= 0:
        raise InfeasibleConstraintsError(
            f"M11 = {denom:.6g} <= 0: constraints lie outside the feasible input space",
            z_tilde=z_tilde,
            xz=xz,
        )
    return det_m(z_tilde, xz, x2z, ex2) / denom


def inverse_efficiency(z_tilde: float, xz: float, x2z: float, ex2: float) -> float:
    e = efficiency(z_tilde, xz, x2z, ex2)
    return math.inf if e <= 0 else 1.0 / e


def log_det_information(z_tilde: float, xz: float, x2z: float, ex2: float) -> float:
    d = det_m(z_tilde, xz, x2z, ex2)
    return -math.inf if d <= 0 else math.log(ex2 * d)


# -- criterion specs ------------------------------------------------------------


@dataclass(frozen=True)
class CriterionSpec:
    """``name`` is ``eff``, ``d`` or ``custom``; custom criteria supply
    ``func(z, xz, x2z, ex2)``, which must be continuous in ``x2z``."""

    name: str = "eff"
    func: Callable | None = None
    expr: str = ""

    def __post_init__(self):
        if self.name not in ("eff", "d", "custom"):
            raise ValidationError(f"unknown criterion {self.name!r}")
        if self.name == "custom" and self.func is None:
            raise ValidationError("custom criterion needs a function")

    @property
    def closed_form(self) -> bool:
        return self.name in ("eff", "d")

    def __call__(self, z_tilde, xz, x2z, ex2) -> float:
        if self.name == "eff":
            return efficiency(z_tilde, xz, x2z, ex2)
        if self.name == "d":
            return log_det_information(z_tilde, xz, x2z, ex2)
        return float(self.func(z_tilde, xz, x2z, ex2))


EFF = CriterionSpec("eff")
D_OPT = CriterionSpec("d")


def custom(func: Callable, expr: str = "") -> CriterionSpec:
    return CriterionSpec("custom", func, expr)


def from_matrix_criterion(psi: Callable[[np.ndarray], float]) -> CriterionSpec:
    """Adapt a criterion written against the 4x4 information matrix."""

    def func(z_tilde, xz, x2z, ex2):
        return psi(info_matrix(MomentTriple(z_tilde, xz, x2z), ex2))

    return custom(func, "matrix")


def criterion_value(spec: CriterionSpec, t: MomentTriple, ex2: float) -> float:
    return spec(t.ez, t.exz, t.ex2z, ex2)


# -- choosing E_p(x^2 z) ----------------------------------------------------------

GRID_POINTS = 1024


def select_x2z(
    spec: CriterionSpec, z_tilde: float, xz: float, interval, ex2: float
) -> float:
    """Best attainable E_p(x^2 z) on ``interval = (lo, hi)``.

    Eff and D are both increasing in det(M), so the answer is the point of the
    interval closest to the apex of that quadratic.  Custom criteria get a
    coarse grid scan (guards against several local maxima) refined by
    bounded Brent around the best grid cell.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if lo > hi:
        raise InfeasibleConstraintsError(
            f"empty attainable interval [{lo}, {hi}]", lo=lo, hi=hi
        )
    if spec.closed_form:
        return min(max(a_star(z_tilde, xz), lo), hi)
    if lo == hi:
        return lo

    def f(v):
        val = spec(z_tilde, xz, v, ex2)
        return -math.inf if math.isnan(val) else val

    grid = np.linspace(lo, hi, GRID_POINTS)
    vals = np.array([f(v) for v in grid])
    k = int(np.argmax(vals))
    best_x, best_v = float(grid[k]), float(vals[k])
    left, right = grid[max(k - 1, 0)], grid[min(k + 1, GRID_POINTS - 1)]
    res = optimize.minimize_scalar(
        lambda v: -f(v), bounds=(left, right), method="bounded", options={"xatol": 1e-13}
    )
    if res.success and -res.fun >= best_v:
        best_x = float(res.x)
    return best_x


# -- safe expression parsing for custom criteria ---------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {
    "log": math.log,
    "exp": math.exp,
    "sqrt": math.sqrt,
    "abs": abs,
    "min": min,
    "max": max,
}
SYMBOLS = ("z", "xz", "x2z", "ex2")


def parse_expression(expr: str) -> Callable:
    """Compile a small arithmetic expression over z, xz, x2z, ex2.

    Only numbers, those four names, + - * / **, unary minus and the
    functions log, exp, sqrt, abs, min, max are accepted.
    """
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"cannot parse criterion expression {expr!r}: {exc.msg}") from None
    _validate(tree.body)

    def func(z, xz, x2z, ex2):
        env = {"z": z, "xz": xz, "x2z": x2z, "ex2": ex2}
        try:
            return float(_eval(tree.body, env))
        except (ZeroDivisionError, ValueError, OverflowError):
            return math.nan

    return func


def _validate(node):
    if isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ValidationError(f"unsupported constant {node.value!r}")
    elif isinstance(node, ast.Name):
        if node.id not in SYMBOLS:
            raise ValidationError(f"unknown symbol {node.id!r}; allowed: {', '.join(SYMBOLS)}")
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ValidationError("unsupported operator")
        _validate(node.left)
        _validate(node.right)
    elif isinstance(node, ast.UnaryOp):
        if type(node.op) not in _UNARY:
            raise ValidationError("unsupported unary operator")
        _validate(node.operand)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
            raise ValidationError("unsupported function call")
        for arg in node.args:
            _validate(arg)
    else:
        raise ValidationError(f"unsupported syntax: {type(node).__name__}")


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        return env[node.id]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNARY[type(node.op)](_eval(node.operand, env))
    return _FUNCS[node.func.id](*(_eval(a, env) for a in node.args))


def parse_criterion(name: str) -> CriterionSpec:
    """``eff``, ``d`` or ``custom:<expr>``."""
    key = name.strip()
    if key.lower() == "eff":
        return EFF
    if key.lower() == "d":
        return D_OPT
    if key.lower().startswith("custom:"):
        expr = key.split(":", 1)[1]
        return custom(parse_expression(expr), expr)
    raise ValidationError(f"unknown criterion {name!r}; use eff, d or custom:<expr>")
