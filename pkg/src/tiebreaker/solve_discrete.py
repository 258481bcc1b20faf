"""Fixed-x designs: the running variable is an empirical distribution with atoms.

Monotone extremal designs follow the threshold search over the support:
a candidate ``p(t, eps)`` is ``l`` below the atom ``t``, ``eps`` at it and 1
above, with ``l`` fixed by the treatment fraction.  Its gain falls as ``t``
moves up and rises with ``eps``, so a binary search over atoms locates ``t``
and ``eps`` then solves a linear equation.  Each evaluation is O(1) given the
prefix sums of m, m*x, m*x^2 stored on the distribution.

Non-monotone extremals treat the lowest ``q`` of the probability mass and
the top ``(1 + z)/2 - q``; the gain is piecewise linear in ``q``.  The
``min`` kinds are obtained from the ``max`` kinds on the mirrored support
x -> -x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constraints import Constraints
from .criteria import EFF, CriterionSpec
from .design import DesignFunction, constant, from_pieces, generalized_rdd, moments, reflect, two_level
from .dist import Distribution
from .errors import BracketError, ConsistencyError, ValidationError
from .simplex import maximize
from .solve_continuous import EXTREMAL_KINDS, Extremal, OptimalDesignResult, _root, blend_optimum

ORACLE_MAX_SUPPORT = 200
_FEAS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DiscreteInstance:
    """Sorted support, masses and prefix sums ``S[a, k] = sum_{i<k} m_i x_i**a``."""

    dist: Distribution

    @property
    def values(self) -> np.ndarray:
        return self.dist.values

    @property
    def masses(self) -> np.ndarray:
        return self.dist.masses

    @property
    def prefix(self) -> np.ndarray:
        return self.dist.prefix

    @property
    def size(self) -> int:
        return self.dist.size

    @classmethod
    def of(cls, obj) -> "DiscreteInstance":
        if isinstance(obj, DiscreteInstance):
            return obj
        if isinstance(obj, Distribution) and obj.is_discrete:
            return cls(obj)
        raise ValidationError("discrete solvers need an empirical distribution")

    def mirrored(self) -> "DiscreteInstance":
        """Instance for -x, built without re-centring so atoms negate exactly."""
        x = -self.values[::-1]
        m = self.masses[::-1].copy()
        prefix = np.zeros((3, x.size + 1))
        prefix[0, 1:] = np.cumsum(m)
        prefix[1, 1:] = np.cumsum(m * x)
        prefix[2, 1:] = np.cumsum(m * x * x)
        d = self.dist
        mirror = Distribution(
            "empirical",
            {},
            d.second_moment,
            float(x[0]),
            float(x[-1]),
            centering_shift=-d.centering_shift,
            symmetric=d.symmetric,
            values=x,
            masses=m,
            _cum=prefix[0, 1:],
            _prefix=prefix,
        )
        return DiscreteInstance(mirror)


def _mirror_constraints(c: Constraints) -> Constraints:
    return Constraints(-c.z_tilde, c.xz, c.delta, c.xz_upper)


# -- monotone maximum (threshold search) ------------------------------------------------


def _max_monotone(inst: DiscreteInstance, c: Constraints) -> Extremal:
    x, m, S = inst.values, inst.masses, inst.prefix
    K = inst.size
    z, xz = c.z_tilde, c.xz
    treat = (1 + z) / 2
    tot0, tot1 = S[0, K], S[1, K]

    rdd = generalized_rdd(z, inst.dist)
    t_rdd = inst.dist.quantile((1 - z) / 2)
    k_rdd = int(np.searchsorted(x, t_rdd))
    eps_rdd = rdd.value(t_rdd)

    def parts(k):
        a0, a1 = S[0, k], S[1, k]
        b0, b1 = tot0 - S[0, k + 1], tot1 - S[1, k + 1]
        return a0, a1, b0, b1

    def level(k, eps):
        a0, _, b0, _ = parts(k)
        return (treat - b0 - eps * m[k]) / a0 if a0 > 0 else 0.0

    def gain(k, eps):
        _, a1, _, b1 = parts(k)
        return 2 * (level(k, eps) * a1 + eps * m[k] * x[k] + b1) - tot1

    def eps_top(k):
        return eps_rdd if k == k_rdd else 1.0

    # largest k with gain(k, eps_top(k)) >= xz; gain(k_rdd, .) is the maximum
    lo, hi = k_rdd, K - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if gain(mid, eps_top(mid)) >= xz:
            lo = mid
        else:
            hi = mid - 1
    k = lo
    a0, a1, b0, _ = parts(k)
    e_hi = eps_top(k)
    e_lo = (treat - b0) / (a0 + m[k])
    if a0 > 0:
        slope = 2 * m[k] * (x[k] - a1 / a0)
        eps = e_hi - (gain(k, e_hi) - xz) / slope if slope > 0 else e_hi
        eps = min(max(eps, e_lo), e_hi)
    else:
        eps = e_hi
    lvl = min(max(level(k, eps), 0.0), eps)
    t = float(x[k])
    return Extremal(two_level(lvl, 1.0, t, at=eps), {"l": float(lvl), "t": t, "eps": float(eps)})


# -- non-monotone maximum (quantile mask) --------------------------------------------------


def _max_general(inst: DiscreteInstance, c: Constraints) -> Extremal:
    x, m, S = inst.values, inst.masses, inst.prefix
    K = inst.size
    z, xz = c.z_tilde, c.xz
    treat = (1 + z) / 2
    gap = (1 - z) / 2
    tot1 = S[1, K]
    cum = S[0]

    def atom_of(q):
        return min(max(int(np.searchsorted(cum, q, side="right")) - 1, 0), K - 1)

    def lower(a, q):
        k = atom_of(q)
        return S[a, k] + (q - cum[k]) * x[k] ** a

    def gain(q):
        return 2 * (lower(1, q) + tot1 - lower(1, min(q + gap, cum[K]))) - tot1

    def seg(q):
        return atom_of(q), atom_of(min(q + gap, cum[K]))

    lo, hi = 0.0, min(treat, cum[K] - gap)
    for _ in range(200):
        if seg(lo) == seg(hi):
            break
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if gain(mid) >= xz:
            lo = mid
        else:
            hi = mid
    k1, k2 = seg(lo)
    slope = 2 * (x[k1] - x[k2])
    g_lo = gain(lo)
    q1 = lo + (xz - g_lo) / slope if slope < 0 else lo
    q1 = min(max(q1, lo), hi)
    q2 = q1 + gap
    k1, k2 = atom_of(q1), atom_of(min(q2, cum[K]))
    v1 = (q1 - cum[k1]) / m[k1]
    v2 = (cum[k2 + 1] - q2) / m[k2]
    a1, a2 = float(x[k1]), float(x[k2])
    if k1 == k2:
        v = float(min(max(v1 + v2, 0.0), 1.0))
        design = from_pieces([a1], [1.0, 1.0], {a1: v}, label="max")
        params = {"a1": a1, "a2": a2, "eps1": v, "eps2": v}
    else:
        v1, v2 = float(min(max(v1, 0.0), 1.0)), float(min(max(v2, 0.0), 1.0))
        design = from_pieces([a1, a2], [1.0, 0.0, 1.0], {a1: v1, a2: v2}, label="max")
        params = {"a1": a1, "a2": a2, "eps1": v1, "eps2": v2}
    return Extremal(design, params)


def _flip_params(kind: str, p: dict) -> dict:
    if kind == "min":
        return {"b1": -p["a2"], "b2": -p["a1"], "eps1": 1 - p["eps2"], "eps2": 1 - p["eps1"]}
    return {"u": 1 - p["l"], "s": -p["t"], "eps": 1 - p["eps"]}


def extremal_discrete(dist, c: Constraints, kind: str) -> Extremal:
    inst = DiscreteInstance.of(dist)
    if kind not in EXTREMAL_KINDS:
        raise ValidationError(f"unknown extremal kind {kind!r}")
    z, xz = c.z_tilde, c.xz
    if c.at_upper:
        rdd = generalized_rdd(z, inst.dist)
        t = inst.dist.quantile((1 - z) / 2)
        eps = rdd.value(t)
        params = {
            "max": {"a1": -math.inf, "a2": t, "eps1": 1.0, "eps2": eps},
            "min": {"b1": t, "b2": math.inf, "eps1": eps, "eps2": 1.0},
            "max_monotone": {"l": 0.0, "t": t, "eps": eps},
            "min_monotone": {"u": 1.0, "s": t, "eps": eps},
        }[kind]
        return Extremal(rdd, params)
    if xz <= 0 and kind.endswith("monotone"):
        theta = (1 + z) / 2
        if kind == "max_monotone":
            return Extremal(constant(theta), {"l": theta, "t": math.inf, "eps": theta})
        return Extremal(constant(theta), {"u": theta, "s": -math.inf, "eps": theta})
    if kind == "max_monotone":
        return _max_monotone(inst, c)
    if kind == "max":
        return _max_general(inst, c)
    mirror, mc = inst.mirrored(), _mirror_constraints(c)
    base = _max_monotone(mirror, mc) if kind == "min_monotone" else _max_general(mirror, mc)
    return Extremal(reflect(base.design).simplify().with_label(kind), _flip_params(kind, base.params))


def solve_extremal_discrete(dist, c: Constraints, kind: str) -> DesignFunction:
    """Extremal design on an empirical distribution; feasibility residuals <= 1e-10."""
    inst = DiscreteInstance.of(dist)
    ext = extremal_discrete(inst, c, kind)
    m = moments(ext.design, inst.dist)
    res = max(abs(m.ez - c.z_tilde), abs(m.exz - c.xz))
    if res > 1e-10:
        raise ConsistencyError(f"{kind} design misses the constraints by {res:.3g}", residual=res)
    return ext.design


# -- optimal designs -------------------------------------------------------------------------------


def optimal_design_discrete(
    dist, c: Constraints, spec: CriterionSpec = EFF, monotone: bool = False, canonical: bool = False
) -> OptimalDesignResult:
    """Blend-form optimum.  ``canonical=True`` returns the canonical design
    with the same moments instead: one threshold for monotone designs, three
    strata otherwise."""
    inst = DiscreteInstance.of(dist)
    suffix = "_monotone" if monotone else ""
    if c.at_upper:
        rdd = extremal_discrete(inst, c, "max" + suffix)
        result = blend_optimum(inst.dist, c, spec, rdd, rdd)
    else:
        lo = extremal_discrete(inst, c, "min" + suffix)
        hi = extremal_discrete(inst, c, "max" + suffix)
        result = blend_optimum(inst.dist, c, spec, lo, hi)
    if canonical:
        design = canonical_form_discrete(inst, c, result.selected_x2z, monotone)
        m = moments(design, inst.dist)
        ex2 = inst.dist.second_moment
        result = OptimalDesignResult(
            design=design,
            form="canonical",
            selected_x2z=result.selected_x2z,
            criterion_value=spec(m.ez, m.exz, m.ex2z, ex2),
            residuals=(abs(m.ez - c.z_tilde), abs(m.exz - c.xz)),
            moments=m,
            lam=None,
            extremals=result.extremals,
            interval=result.interval,
        )
    return result


def canonical_form_discrete(dist, c: Constraints, target_x2z: float, monotone: bool = True) -> DesignFunction:
    """Design matching E_p z, E_p xz and E_p x^2 z in canonical form.

    Monotone: ``l'`` below an atom ``t'``, ``eps'`` at it, ``u'`` above.  For
    each candidate atom the three moment equations are linear in
    (l', eps', u'); an atom whose solution satisfies 0 <= l' <= eps' <= u' <= 1
    is returned.  Otherwise the design treats the lowest ``q1`` of the mass
    and a block of mass ``(1 + z)/2 - q1`` starting at quantile ``q2``, with
    fractional cut atoms.
    """
    inst = DiscreteInstance.of(dist)
    if not monotone:
        return _canonical_strata_discrete(inst, c, target_x2z)
    x, m, S = inst.values, inst.masses, inst.prefix
    K = inst.size
    rhs = (np.array([c.z_tilde, c.xz, target_x2z]) + S[:, K]) / 2
    below = S[:, :K]  # sum over atoms strictly below k
    above = S[:, K : K + 1] - S[:, 1:]  # strictly above k
    at = np.vstack([m, m * x, m * x * x])
    mats = np.stack([below.T, at.T, above.T], axis=2)  # (K, 3 rows, 3 unknowns)
    sols = np.full((K, 3), np.nan)
    good = (below[0] > 0) & (above[0] > 0)
    if np.any(good):
        sols[good] = np.linalg.solve(mats[good], np.broadcast_to(rhs, (int(good.sum()), 3))[..., None])[..., 0]
    # end atoms: the empty side's level is immaterial
    for k in (0, K - 1):
        cols = [1, 2] if k == 0 else [0, 1]
        sub = mats[k][:, cols]
        sol, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        if np.max(np.abs(sub @ sol - rhs)) <= 1e-12:
            full = np.empty(3)
            if k == 0:
                full[1:] = sol
                full[0] = 0.0
            else:
                full[:2] = sol
                full[2] = 1.0
            sols[k] = full
    lo, eps, hi = sols.T
    viol = np.nanmax(
        np.vstack([-lo, lo - eps, eps - hi, hi - 1.0, np.zeros(K)]), axis=0
    )
    viol[np.isnan(lo)] = np.inf
    k = int(np.argmin(viol))
    if not viol[k] <= _FEAS_TOL:
        raise BracketError(
            "no atom admits a monotone single-threshold design with these moments",
            best_atom=float(x[k]),
            violation=float(viol[k]),
        )
    lvl, e, u = (min(max(v, 0.0), 1.0) for v in sols[k])
    e = min(max(e, lvl), u)
    t = float(x[k])
    return from_pieces([t], [lvl, u], {t: e}, label="canonical_monotone")


def _canonical_strata_discrete(inst: DiscreteInstance, c: Constraints, target: float) -> DesignFunction:
    x, m, S = inst.values, inst.masses, inst.prefix
    K = inst.size
    z, xz = c.z_tilde, c.xz
    treat = (1 + z) / 2
    total = S[0, K]
    cum = S[0]
    if c.at_upper:
        return extremal_discrete(inst, c, "max").design

    def atom_of(q):
        return min(max(int(np.searchsorted(cum, q, side="right")) - 1, 0), K - 1)

    def lower(a, q):
        q = min(max(q, 0.0), total)
        k = atom_of(q)
        return S[a, k] + (q - cum[k]) * x[k] ** a

    def masked(a, q1, q2, w):
        return 2 * (lower(a, q1) + lower(a, q2 + w) - lower(a, q2)) - S[a, K]

    def clamped_root(f, lo, hi, what):
        # both ends are exact extremes; a wrong sign there is rounding
        if f(lo) >= 0:
            return lo
        if f(hi) <= 0:
            return hi
        return _root(f, lo, hi, what)

    def inner(q1):
        w = treat - q1
        return clamped_root(lambda q2: masked(1, q1, q2, w) - xz, q1, total - w, "canonical block")

    # q1 of the maximal design: the lower block plus the top block meets xz
    gap = total - treat
    q_top = _root(lambda q: 2 * (lower(1, q) + S[1, K] - lower(1, q + gap)) - S[1, K] - xz,
                  0.0, min(treat, total - gap), "canonical bracket")

    def resid(q1):
        return masked(2, q1, inner(q1), treat - q1) - target

    q1 = clamped_root(resid, 0.0, q_top, "canonical lower block")
    q2 = inner(q1)
    q3 = min(q2 + treat - q1, total)

    def frac(k):
        lo, hi = cum[k], cum[k + 1]
        cover = max(0.0, min(hi, q1) - lo) + max(0.0, min(hi, q3) - max(lo, q2))
        return float(min(max(cover / m[k], 0.0), 1.0))

    ks = [atom_of(q1), atom_of(q2), atom_of(q3)]
    cuts = [float(x[k]) for k in ks]
    return from_pieces(cuts, [1.0, 0.0, 1.0, 0.0], {float(x[k]): frac(k) for k in ks}, label="canonical")


# -- LP oracle -----------------------------------------------------------------------------------


def lp_oracle_discrete(dist, c: Constraints, sense: str = "max", monotone: bool = False):
    """Extreme E_p(x^2 z) over all (or monotone) designs by a dense simplex.

    Returns ``(objective, p)`` with ``p`` the treatment probability at each
    support point.  Intended for supports of at most 200 points.
    """
    inst = DiscreteInstance.of(dist)
    if inst.size > ORACLE_MAX_SUPPORT:
        raise ValidationError(f"oracle supports at most {ORACLE_MAX_SUPPORT} support points")
    if sense not in ("max", "min"):
        raise ValidationError("sense must be 'max' or 'min'")
    x, m = inst.values, inst.masses
    K = inst.size
    sign = 1.0 if sense == "max" else -1.0
    rows = np.vstack([m, m * x, m * x * x])
    rhs = np.array([(c.z_tilde + 1) / 2, (c.xz + inst.prefix[1, K]) / 2])
    if monotone:
        # p_k = sum_{j<=k} d_j with d >= 0 and sum d <= 1
        tails = np.cumsum(rows[:, ::-1], axis=1)[:, ::-1]
        A = np.zeros((3, K + 1))
        A[:2, :K] = tails[:2]
        A[2, :K] = 1.0
        A[2, K] = 1.0
        b = np.array([rhs[0], rhs[1], 1.0])
        obj = np.zeros(K + 1)
        obj[:K] = sign * tails[2]
        value, sol = maximize(obj, A, b)
        p = np.cumsum(sol[:K])
    else:
        A = np.zeros((2 + K, 2 * K))
        A[:2, :K] = rows[:2]
        A[2:, :K] = np.eye(K)
        A[2:, K:] = np.eye(K)
        b = np.concatenate([rhs, np.ones(K)])
        obj = np.zeros(2 * K)
        obj[:K] = sign * rows[2]
        value, sol = maximize(obj, A, b)
        p = sol[:K]
    p = np.clip(p, 0.0, 1.0)
    return sign * value * 2 - inst.prefix[2, K], p


# -- per-subject output ----------------------------------------------------------------------------


def assignment_probabilities(design: DesignFunction, dist: Distribution, raw_values) -> np.ndarray:
    """Treatment probability for each raw (uncentred) running-variable value."""
    raw = np.asarray(raw_values, dtype=float)
    return design.evaluate(raw - dist.centering_shift)


def infeasible_bounds(dist, z_tilde: float) -> dict:
    from .constraints import xz_max

    return {"xz": [0.0, xz_max(DiscreteInstance.of(dist).dist, z_tilde)]}


__all__ = [
    "DiscreteInstance",
    "assignment_probabilities",
    "canonical_form_discrete",
    "extremal_discrete",
    "lp_oracle_discrete",
    "optimal_design_discrete",
    "solve_extremal_discrete",
]
