"""Extremal and optimal tie-breaker designs for continuous running variables.

For fixed (z, xz) every efficiency criterion depends on a feasible design
only through E_p(x^2 z).  The attainable values form an interval whose
endpoints come from two extremal designs (four with the monotone variants):

=============  ======================================  ============
kind           form                                     unknowns
=============  ======================================  ============
max            1 outside [a1, a2], 0 inside             a1, a2
min            1 on (b1, b2), 0 outside                 b1, b2
max_monotone   l below t, 1 above                       l, t
min_monotone   0 below s, u above                       u, s
=============  ======================================  ============

The treatment-fraction constraint eliminates one unknown in each case; the
gain constraint is then a monotone scalar equation solved by bracketing on
the quantile scale.  Empirical distributions are routed to
:mod:`tiebreaker.solve_discrete`.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

from scipy import optimize

from . import criteria
from .constraints import Constraints, constraints, xz_max
from .criteria import EFF, CriterionSpec
from .design import (
    DesignFunction,
    MomentTriple,
    complement_interval,
    constant,
    convex_combination,
    generalized_rdd,
    interval_indicator,
    max_three_level_width,
    moments,
    three_level,
    three_strata,
    two_level,
)
from .dist import Distribution, make_distribution
from .errors import BracketError, ConsistencyError, InfeasibleConstraintsError, ValidationError

EXTREMAL_KINDS = ("max", "min", "max_monotone", "min_monotone")

__all__ = [
    "EXTREMAL_KINDS",
    "Extremal",
    "OptimalDesignResult",
    "TradeoffRecord",
    "blend_optimum",
    "canonical_form",
    "extremal",
    "optimal_design",
    "solve_extremal",
    "three_level_width",
    "tradeoff_sweep",
    "uniform_closed_form",
    "xz_max",
]

_XTOL = 1e-15
_ENDPOINT_TOL = 1e-12
RESIDUAL_TOL = 1e-8


class Extremal(NamedTuple):
    design: DesignFunction
    params: dict


@dataclass
class OptimalDesignResult:
    design: DesignFunction
    form: str
    selected_x2z: float
    criterion_value: float
    residuals: tuple
    moments: MomentTriple
    lam: float | None = None
    extremals: dict = field(default_factory=dict)
    interval: tuple = ()

    def as_dict(self) -> dict:
        return {
            "form": self.form,
            "design": self.design.to_dict(),
            "selected_x2z": self.selected_x2z,
            "criterion_value": self.criterion_value,
            "lambda": self.lam,
            "interval": list(self.interval),
            "moments": dict(self.moments._asdict()),
            "residuals": {"ez": self.residuals[0], "exz": self.residuals[1]},
            "extremals": {k: v.params for k, v in self.extremals.items()},
        }


def _check_kind(kind):
    if kind not in EXTREMAL_KINDS:
        raise ValidationError(f"unknown extremal kind {kind!r}; expected one of {EXTREMAL_KINDS}")


def _root(f, lo, hi, what):
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if flo * fhi > 0:
        raise BracketError(
            f"{what}: no sign change on [{lo}, {hi}] (f = {flo:.3g}, {fhi:.3g})",
            lo=lo,
            hi=hi,
            f_lo=flo,
            f_hi=fhi,
        )
    return optimize.brentq(f, lo, hi, xtol=_XTOL, rtol=8.9e-16, maxiter=200)


# -- extremal designs -----------------------------------------------------------------


def extremal(dist: Distribution, c: Constraints, kind: str) -> Extremal:
    """Extremal design together with its parameters."""
    _check_kind(kind)
    if dist.is_discrete:
        from .solve_discrete import extremal_discrete

        return extremal_discrete(dist, c, kind)
    z, xz = c.z_tilde, c.xz
    if c.at_upper:
        t = dist.quantile((1 - z) / 2)
        rdd = generalized_rdd(z, dist)
        params = {"max": {"a1": -math.inf, "a2": t}, "min": {"b1": t, "b2": math.inf},
                  "max_monotone": {"l": 0.0, "t": t}, "min_monotone": {"u": 1.0, "s": t}}[kind]
        return Extremal(rdd, params)
    if xz <= 0 and kind.endswith("monotone"):
        theta = (1 + z) / 2
        key = "l" if kind == "max_monotone" else "u"
        other = "t" if kind == "max_monotone" else "s"
        return Extremal(constant(theta), {key: theta, other: math.inf if key == "l" else -math.inf})
    tm1 = lambda s: dist.truncated_moment(1, s)  # noqa: E731
    Q = dist.quantile

    if kind == "max":
        w = (1 - z) / 2

        def gap(q1):
            return 2 * (tm1(Q(q1)) - tm1(Q(min(q1 + w, 1.0)))) - xz

        q1 = _root(gap, 0.0, (1 + z) / 2, "max design")
        a1, a2 = Q(q1), Q(min(q1 + w, 1.0))
        return Extremal(complement_interval(a1, a2), {"a1": a1, "a2": a2})

    if kind == "min":
        w = (1 + z) / 2

        def gap(q1):
            return 2 * (tm1(Q(min(q1 + w, 1.0))) - tm1(Q(q1))) - xz

        q1 = _root(gap, 0.0, (1 - z) / 2, "min design")
        b1, b2 = Q(q1), Q(min(q1 + w, 1.0))
        return Extremal(interval_indicator(b1, b2), {"b1": b1, "b2": b2})

    if kind == "max_monotone":
        w = (1 - z) / 2

        def gap(q):
            return -(w / q) * 2 * tm1(Q(q)) - xz

        q = _root(gap, w, 1.0, "max monotone design")
        t, lo = Q(q), 1 - w / q
        return Extremal(two_level(lo, 1.0, t), {"l": lo, "t": t})

    w = (1 + z) / 2

    def gap(q):
        return -2 * w / (1 - q) * tm1(Q(q)) - xz

    q = _root(gap, 0.0, (1 - z) / 2, "min monotone design")
    s, hi = Q(q), w / (1 - q)
    return Extremal(two_level(0.0, hi, s), {"u": hi, "s": s})


def solve_extremal(dist: Distribution, c: Constraints, kind: str) -> DesignFunction:
    """The feasible design maximising (``max*``) or minimising (``min*``) E_p(x^2 z)."""
    return extremal(dist, c, kind).design


# -- uniform closed forms -------------------------------------------------------------------


def uniform_closed_form(c: Constraints, kind: str) -> dict:
    """Closed-form parameters for F = U(-1, 1).

    ``three_level`` returns the window half-width in quantile units.  Every
    answer is re-checked against the moment equations and a mismatch raises
    :class:`ConsistencyError`.
    """
    z, xz = c.z_tilde, c.xz
    if kind == "three_level":
        disc = 1 - z * z - 2 * xz
        limit = max_three_level_width(z)
        if disc < -1e-15 or 0.5 * math.sqrt(max(disc, 0.0)) > limit + 1e-15:
            raise ValidationError(
                "no feasible three level tie-breaker design exists for these constraints",
                z_tilde=z,
                xz=xz,
            )
        params = {"width": min(0.5 * math.sqrt(max(disc, 0.0)), limit)}
        design = three_level(z, params["width"], _UNIFORM)
    elif kind == "max":
        params = {"a1": -xz / (1 - z) - (1 - z) / 2, "a2": -xz / (1 - z) + (1 - z) / 2}
        design = complement_interval(params["a1"], params["a2"])
    elif kind == "min":
        params = {"b1": xz / (1 + z) - (1 + z) / 2, "b2": xz / (1 + z) + (1 + z) / 2}
        design = interval_indicator(params["b1"], params["b2"])
    elif kind == "max_monotone":
        params = {"l": 0.5 * (1 - z * z - 2 * xz) / (1 - z - xz), "t": 1 - 2 * xz / (1 - z)}
        design = two_level(params["l"], 1.0, params["t"])
    elif kind == "min_monotone":
        params = {"u": 0.5 * (1 + z) ** 2 / (1 + z - xz), "s": 2 * xz / (1 + z) - 1}
        design = two_level(0.0, params["u"], params["s"])
    else:
        raise ValidationError(f"unknown design kind {kind!r}")
    m = moments(design, _UNIFORM)
    res = (abs(m.ez - z), abs(m.exz - xz))
    if max(res) > 1e-10:
        raise ConsistencyError(
            f"closed form for {kind} misses the constraints by {max(res):.3g}",
            kind=kind,
            residuals=res,
        )
    return params


_UNIFORM = make_distribution("uniform")


# -- three level tie-breaker on a general F --------------------------------------------------


def three_level_width(dist: Distribution, z_tilde: float, xz: float) -> float | None:
    """Window half-width of the quantile three-level design with gain ``xz``.

    Returns None when no such design exists (gain below what the widest
    window achieves).
    """
    limit = max_three_level_width(z_tilde)

    def gain(width):
        return moments(three_level(z_tilde, width, dist), dist).exz

    g_narrow, g_wide = gain(0.0), gain(limit)
    if xz > g_narrow * (1 + 1e-12) or xz < g_wide - 1e-13:
        return None
    if xz >= g_narrow:
        return 0.0
    if xz <= g_wide:
        return limit
    if dist.kind == "uniform":
        return min(0.5 * math.sqrt(max(1 - z_tilde**2 - 2 * xz, 0.0)), limit)
    return _root(lambda w: gain(w) - xz, 0.0, limit, "three level width")


# -- optimal designs --------------------------------------------------------------------------


def _residuals(m: MomentTriple, c: Constraints):
    return (abs(m.ez - c.z_tilde), abs(m.exz - c.xz))


def blend_optimum(
    dist: Distribution, c: Constraints, spec: CriterionSpec, lo: Extremal, hi: Extremal
) -> OptimalDesignResult:
    """Optimal design as the blend lam * p_min + (1 - lam) * p_max."""
    ex2 = dist.second_moment
    m_lo, m_hi = moments(lo.design, dist), moments(hi.design, dist)
    i_min, i_max = min(m_lo.ex2z, m_hi.ex2z), max(m_lo.ex2z, m_hi.ex2z)
    target = criteria.select_x2z(spec, c.z_tilde, c.xz, (i_min, i_max), ex2)
    span = i_max - i_min
    if span <= _ENDPOINT_TOL or target - i_min <= _ENDPOINT_TOL:
        design, lam, form = lo.design, 1.0, "extremal"
    elif i_max - target <= _ENDPOINT_TOL:
        design, lam, form = hi.design, 0.0, "extremal"
    else:
        lam = (i_max - target) / span
        design, form = convex_combination(lam, lo.design, hi.design), "blend"
    m = moments(design, dist)
    res = _residuals(m, c)
    if max(res) > RESIDUAL_TOL:
        raise ConsistencyError(f"optimal design misses the constraints by {max(res):.3g}", residuals=res)
    return OptimalDesignResult(
        design=design,
        form=form,
        selected_x2z=target,
        criterion_value=spec(m.ez, m.exz, m.ex2z, ex2),
        residuals=res,
        moments=m,
        lam=lam,
        extremals={"min": lo, "max": hi},
        interval=(i_min, i_max),
    )


def optimal_design(
    dist: Distribution, c: Constraints, spec: CriterionSpec = EFF, monotone: bool = False
) -> OptimalDesignResult:
    """Optimal design (blend form) over all designs or over monotone designs."""
    if dist.is_discrete:
        from .solve_discrete import optimal_design_discrete

        return optimal_design_discrete(dist, c, spec, monotone)
    if c.at_upper and monotone:
        rdd = extremal(dist, c, "max_monotone")
        return blend_optimum(dist, c, spec, rdd, rdd)
    suffix = "_monotone" if monotone else ""
    lo = extremal(dist, c, "min" + suffix)
    hi = extremal(dist, c, "max" + suffix)
    return blend_optimum(dist, c, spec, lo, hi)


def canonical_form(
    dist: Distribution, c: Constraints, target_x2z: float, monotone: bool = False
) -> DesignFunction:
    """A feasible design with E_p(x^2 z) = target in its simplest optimal shape.

    Monotone: a single jump ``l'`` -> ``u'``.  Otherwise: 1 / 0 / 1 / 0 on
    three cut points.  Requires a finite third moment.
    """
    if not dist.third_moment_finite:
        raise ValidationError("canonical forms need E|x|^3 < inf")
    if dist.is_discrete:
        from .solve_discrete import canonical_form_discrete

        return canonical_form_discrete(dist, c, target_x2z, monotone)
    suffix = "_monotone" if monotone else ""
    lo = extremal(dist, c, "min" + suffix)
    hi = extremal(dist, c, "max" + suffix)
    i_min, i_max = moments(lo.design, dist).ex2z, moments(hi.design, dist).ex2z
    if target_x2z < i_min - 1e-12 or target_x2z > i_max + 1e-12:
        raise InfeasibleConstraintsError(
            f"target E(x^2 z) = {target_x2z} outside attainable [{i_min}, {i_max}]",
            interval=[i_min, i_max],
        )
    if target_x2z - i_min <= _ENDPOINT_TOL:
        return lo.design
    if i_max - target_x2z <= _ENDPOINT_TOL:
        return hi.design
    if monotone:
        design = _canonical_monotone(dist, c, target_x2z, lo.params["s"], hi.params["t"])
    else:
        design = _canonical_strata(dist, c, target_x2z, dist.cdf(hi.params["a1"]))
    m = moments(design, dist)
    res = (*_residuals(m, c), abs(m.ex2z - target_x2z))
    if max(res) > RESIDUAL_TOL:
        raise ConsistencyError(f"canonical design misses its targets by {max(res):.3g}", residuals=res)
    return design


def _canonical_monotone(dist, c, target, s, t):
    z, xz, ex2 = c.z_tilde, c.xz, dist.second_moment
    trace = []

    def parts(q):
        cut = dist.quantile(q)
        f0, f1, f2 = (dist.truncated_moment(a, cut) for a in range(3))
        jump = -xz / (2 * f1)
        lo = (1 + z) / 2 - jump * (1 - f0)
        return cut, lo, lo + jump, f2

    def resid(q):
        cut, lo, hi, f2 = parts(q)
        r = 2 * (lo * f2 + hi * (ex2 - f2)) - ex2 - target
        trace.append((q, lo, hi, r))
        return r

    try:
        q = _root(resid, dist.cdf(s), dist.cdf(t), "monotone canonical form")
    except BracketError as exc:
        exc.context["trace"] = trace[-10:]
        raise
    cut, lo, hi, _ = parts(q)
    if lo < -1e-9 or hi > 1 + 1e-9 or hi < lo:
        raise BracketError(
            "monotone canonical form left the probability range; check assumptions on F",
            trace=trace[-10:],
        )
    return two_level(min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0), cut)


def _canonical_strata(dist, c, target, q_top):
    z, xz, ex2 = c.z_tilde, c.xz, dist.second_moment
    Q = dist.quantile
    tm = dist.truncated_moment
    treat = (1 + z) / 2

    def inner(q1):
        w = treat - q1
        a1 = Q(q1)

        def gap(q2):
            return 2 * (tm(1, a1) + tm(1, Q(min(q2 + w, 1.0))) - tm(1, Q(q2))) - xz

        q2 = _root(gap, q1, 1.0 - w, "strata inner cut")
        return a1, Q(q2), Q(min(q2 + w, 1.0))

    def resid(q1):
        a1, a2, a3 = inner(q1)
        return 2 * (tm(2, a1) + tm(2, a3) - tm(2, a2)) - ex2 - target

    q1 = _root(resid, 0.0, min(q_top, treat), "strata canonical form")
    return three_strata(*inner(q1))


# -- trade-off sweep ---------------------------------------------------------------------------


@dataclass
class TradeoffRecord:
    delta: float
    xz: float
    x2z_star_opt: float
    x2z_star_mon: float
    eff_inv_three_level: float | None
    eff_inv_opt_monotone: float
    eff_inv_opt: float
    params: dict = field(default_factory=dict)
    criterion_opt: float | None = None
    criterion_mon: float | None = None


CSV_COLUMNS = (
    "delta",
    "xz",
    "x2z_star_opt",
    "x2z_star_mon",
    "eff_inv_three_level",
    "eff_inv_opt_monotone",
    "eff_inv_opt",
    "three_level_width",
    "a1",
    "a2",
    "b1",
    "b2",
    "l",
    "t",
    "u",
    "s",
    "lambda_opt",
    "lambda_mon",
    "criterion_opt",
    "criterion_mon",
)


def _inv_eff(m: MomentTriple, ex2: float) -> float:
    return criteria.inverse_efficiency(m.ez, m.exz, m.ex2z, ex2)


def sweep_point(dist: Distribution, z_tilde: float, delta: float, spec: CriterionSpec = EFF):
    c = constraints(dist, z_tilde, delta=delta)
    ex2 = dist.second_moment
    width = three_level_width(dist, z_tilde, c.xz)
    eff3 = None
    if width is not None:
        eff3 = _inv_eff(moments(three_level(z_tilde, width, dist), dist), ex2)
    opt = optimal_design(dist, c, spec, monotone=False)
    mon = optimal_design(dist, c, spec, monotone=True)
    params = {"three_level_width": width, "lambda_opt": opt.lam, "lambda_mon": mon.lam}
    for res in (opt, mon):
        for ext in res.extremals.values():
            params.update(ext.params)
    custom_spec = not spec.closed_form or spec.name == "d"
    return TradeoffRecord(
        delta=delta,
        xz=c.xz,
        x2z_star_opt=opt.selected_x2z,
        x2z_star_mon=mon.selected_x2z,
        eff_inv_three_level=eff3,
        eff_inv_opt_monotone=_inv_eff(mon.moments, ex2),
        eff_inv_opt=_inv_eff(opt.moments, ex2),
        params=params,
        criterion_opt=opt.criterion_value if custom_spec else None,
        criterion_mon=mon.criterion_value if custom_spec else None,
    )


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("TIEBREAKER_THREADS", "1")))
    except ValueError:
        return 1


def tradeoff_sweep(
    dist: Distribution,
    z_tilde: float,
    grid,
    spec: CriterionSpec = EFF,
    workers: int | None = None,
) -> list[TradeoffRecord]:
    """One record per normalised gain in ``grid``, in grid order."""
    grid = [float(d) for d in grid]
    bad = [d for d in grid if not (0 <= d <= 1)]
    if bad:
        raise ValidationError(f"sweep grid values must lie in [0, 1], got {bad[:3]}")
    workers = workers or default_workers()
    if workers == 1:
        return [sweep_point(dist, z_tilde, d, spec) for d in grid]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda d: sweep_point(dist, z_tilde, d, spec), grid))


def record_row(rec: TradeoffRecord) -> dict:
    row = {
        "delta": rec.delta,
        "xz": rec.xz,
        "x2z_star_opt": rec.x2z_star_opt,
        "x2z_star_mon": rec.x2z_star_mon,
        "eff_inv_three_level": rec.eff_inv_three_level,
        "eff_inv_opt_monotone": rec.eff_inv_opt_monotone,
        "eff_inv_opt": rec.eff_inv_opt,
        "criterion_opt": rec.criterion_opt,
        "criterion_mon": rec.criterion_mon,
    }
    for key in CSV_COLUMNS:
        if key not in row:
            row[key] = rec.params.get(key)
    return {k: row[k] for k in CSV_COLUMNS}
