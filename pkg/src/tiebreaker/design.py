"""Piecewise-constant design functions and their moment triples."""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dist import Distribution
from .errors import ValidationError

_PROB_TOL = 1e-12


class MomentTriple(NamedTuple):
    """(E_p z, E_p xz, E_p x^2 z)."""

    ez: float
    exz: float
    ex2z: float

    def blend(self, lam: float, other: "MomentTriple") -> "MomentTriple":
        return MomentTriple(*(lam * a + (1 - lam) * b for a, b in zip(self, other)))


def _check_prob(name, v):
    if not (-_PROB_TOL <= v <= 1 + _PROB_TOL) or math.isnan(v):
        raise ValidationError(f"{name} must be a probability in [0, 1], got {v!r}")
    return min(max(float(v), 0.0), 1.0)


@dataclass(frozen=True)
class DesignFunction:
    """Treatment probability as a step function of the running variable.

    ``levels[i]`` is the value on the open interval between
    ``breakpoints[i-1]`` and ``breakpoints[i]`` (with infinite ends).  The value
    exactly at a breakpoint is ``atoms[b]`` if given, else the level on its
    left; it only matters when the running variable has an atom there.
    """

    breakpoints: tuple = ()
    levels: tuple = (0.0,)
    atoms: dict = field(default_factory=dict)
    label: str = field(default="", compare=False)

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        if any(not math.isfinite(b) for b in bps):
            raise ValidationError("breakpoints must be finite")
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise ValidationError("breakpoints must be strictly increasing")
        if len(self.levels) != len(bps) + 1:
            raise ValidationError("need exactly one more level than breakpoints")
        levels = tuple(_check_prob("level", v) for v in self.levels)
        atoms = {}
        for b, v in dict(self.atoms).items():
            b = float(b)
            if b not in bps:
                raise ValidationError(f"atom value given at {b}, which is not a breakpoint")
            atoms[b] = _check_prob("atom value", v)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "atoms", atoms)

    # -- evaluation ---------------------------------------------------------

    def at_breakpoint(self, i: int) -> float:
        b = self.breakpoints[i]
        return self.atoms.get(b, self.levels[i])

    def value(self, x: float) -> float:
        i = bisect.bisect_left(self.breakpoints, x)
        if i < len(self.breakpoints) and self.breakpoints[i] == x:
            return self.at_breakpoint(i)
        return self.levels[i]

    __call__ = value

    def evaluate(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        bps = np.asarray(self.breakpoints, dtype=float)
        out = np.asarray(self.levels)[np.searchsorted(bps, xs, side="left")]
        if bps.size:
            idx = np.searchsorted(bps, xs, side="left")
            hit = (idx < bps.size) & (bps[np.minimum(idx, bps.size - 1)] == xs)
            if np.any(hit):
                at = np.array([self.at_breakpoint(i) for i in range(bps.size)])
                out = np.where(hit, at[np.minimum(idx, bps.size - 1)], out)
        return out

    def is_monotone(self) -> bool:
        lv = self.levels
        if any(b < a for a, b in zip(lv, lv[1:])):
            return False
        for i in range(len(self.breakpoints)):
            v = self.at_breakpoint(i)
            if not (lv[i] <= v <= lv[i + 1]):
                return False
        return True

    def simplify(self) -> "DesignFunction":
        """Drop breakpoints that do not change the function."""
        bps, lv, atoms = [], [self.levels[0]], {}
        for i, b in enumerate(self.breakpoints):
            v = self.at_breakpoint(i)
            right = self.levels[i + 1]
            if right == lv[-1] and v == right:
                continue
            bps.append(b)
            lv.append(right)
            if v != lv[-2]:
                atoms[b] = v
        return DesignFunction(tuple(bps), tuple(lv), atoms, self.label)

    def with_label(self, label: str) -> "DesignFunction":
        return DesignFunction(self.breakpoints, self.levels, self.atoms, label)

    # -- serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "breakpoints": list(self.breakpoints),
            "levels": list(self.levels),
            "atoms": {repr(b): v for b, v in self.atoms.items()},
            "monotone": self.is_monotone(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "DesignFunction":
        atoms = {float(k): float(v) for k, v in data.get("atoms", {}).items()}
        return cls(tuple(data["breakpoints"]), tuple(data["levels"]), atoms)

    @classmethod
    def from_json(cls, text: str) -> "DesignFunction":
        return cls.from_dict(json.loads(text))


# -- construction ----------------------------------------------------------


def from_pieces(cuts, levels, atoms=None, label="") -> DesignFunction:
    """Step function with possibly infinite or repeated cut points.

    Pieces of zero width (repeated cuts) and pieces beyond an infinite cut are
    discarded.  ``atoms`` maps cut positions to the value taken exactly there.
    """
    atoms = dict(atoms or {})
    cuts = [float(c) for c in cuts]
    levels = list(levels)
    if len(levels) != len(cuts) + 1:
        raise ValidationError("need exactly one more level than cut points")
    if any(b < a for a, b in zip(cuts, cuts[1:])):
        raise ValidationError("cut points must be nondecreasing")
    # a cut at -inf removes the level to its left, +inf the level to its right
    while cuts and cuts[0] == -math.inf:
        cuts.pop(0)
        levels.pop(0)
    while cuts and cuts[-1] == math.inf:
        cuts.pop()
        levels.pop()
    bps, lv = [], [levels[0]]
    for c, right in zip(cuts, levels[1:]):
        if bps and c == bps[-1]:
            lv[-1] = right
            continue
        bps.append(c)
        lv.append(right)
    kept = {b: v for b, v in atoms.items() if b in bps}
    return DesignFunction(tuple(bps), tuple(lv), kept, label).simplify().with_label(label)


def constant(theta: float) -> DesignFunction:
    return DesignFunction((), (theta,), label=f"constant({theta:g})")


def two_level(lo: float, hi: float, t: float, at: float | None = None) -> DesignFunction:
    """``lo`` for x < t and ``hi`` for x > t (``at`` exactly at t)."""
    atoms = {} if at is None else {t: at}
    return from_pieces([t], [lo, hi], atoms, label=f"two_level({lo:g}, {hi:g}, {t:g})")


def interval_indicator(b1: float, b2: float, atoms=None) -> DesignFunction:
    """1 on (b1, b2), 0 outside [b1, b2]."""
    if b2 < b1:
        raise ValidationError("interval endpoints out of order")
    return from_pieces([b1, b2], [0.0, 1.0, 0.0], atoms, label=f"indicator({b1:g}, {b2:g})")


def complement_interval(a1: float, a2: float, atoms=None) -> DesignFunction:
    """1 outside [a1, a2], 0 on (a1, a2)."""
    if a2 < a1:
        raise ValidationError("interval endpoints out of order")
    return from_pieces([a1, a2], [1.0, 0.0, 1.0], atoms, label=f"complement({a1:g}, {a2:g})")


def three_strata(a1: float, a2: float, a3: float) -> DesignFunction:
    """1 below a1, 0 on (a1, a2), 1 on (a2, a3), 0 above a3."""
    return from_pieces(
        [a1, a2, a3], [1.0, 0.0, 1.0, 0.0], label=f"three_strata({a1:g}, {a2:g}, {a3:g})"
    )


def max_three_level_width(z_tilde: float) -> float:
    return min((1 - z_tilde) / 2, (1 + z_tilde) / 2)


def three_level(z_tilde: float, width: float, dist: Distribution) -> DesignFunction:
    """Quantile three-level tie-breaker: 0, then 1/2 on a window, then 1.

    ``width`` is the half-width of the randomisation window in quantile units.
    """
    limit = max_three_level_width(z_tilde)
    if not (-1 < z_tilde < 1):
        raise ValidationError(f"treatment-fraction parameter must lie in (-1, 1), got {z_tilde}")
    if width < -1e-12 or width > limit + 1e-12:
        raise ValidationError(
            f"window half-width {width} outside [0, {limit}]: no feasible three level "
            "tie-breaker design exists for these constraints",
            width=width,
            max_width=limit,
        )
    width = min(max(width, 0.0), limit)
    c = (1 - z_tilde) / 2
    a = dist.quantile(min(max(c - width, 0.0), 1.0))
    b = dist.quantile(min(max(c + width, 0.0), 1.0))
    label = f"three_level({z_tilde:g}, {width:g})"
    lo_q, hi_q = c - width, c + width

    def at(t, default):
        # an atom straddling a window edge gets the mass-weighted probability
        mass = dist.atom(t)
        if mass <= 0:
            return default
        top = dist.cdf(t)
        bot = top - mass
        half = max(0.0, min(top, hi_q) - max(bot, lo_q))
        full = max(0.0, top - max(bot, hi_q))
        return min(max((0.5 * half + full) / mass, 0.0), 1.0)

    if a == b:
        return from_pieces([b], [0.0, 1.0], {b: at(b, 1.0)}, label=label)
    return from_pieces([a, b], [0.0, 0.5, 1.0], {a: at(a, 0.0), b: at(b, 1.0)}, label=label)


def generalized_rdd(z_tilde: float, dist: Distribution) -> DesignFunction:
    """Threshold design treating exactly a fraction (1 + z)/2, splitting an atom if needed."""
    if not (-1 <= z_tilde <= 1):
        raise ValidationError(f"treatment-fraction parameter must lie in [-1, 1], got {z_tilde}")
    if z_tilde == 1:
        return constant(1.0)
    if z_tilde == -1:
        return constant(0.0)
    q = (1 - z_tilde) / 2
    t = dist.quantile(q)
    if not math.isfinite(t):
        return constant(1.0 if t == -math.inf else 0.0)
    mass = dist.atom(t)
    at = None
    if mass > 0:
        at = min(max((dist.cdf(t) - q) / mass, 0.0), 1.0)
    d = two_level(0.0, 1.0, t, at)
    return d.with_label(f"generalized_rdd({z_tilde:g})")


def build_design(kind: str, params: dict, dist: Distribution | None = None) -> DesignFunction:
    """Dispatch on ``kind`` (constant, two_level, interval_indicator,
    complement_interval, three_level, generalized_rdd)."""
    if kind == "constant":
        return constant(params["theta"])
    if kind == "two_level":
        return two_level(params["lo"], params["hi"], params["t"], params.get("at"))
    if kind == "interval_indicator":
        return interval_indicator(params["b1"], params["b2"], params.get("atoms"))
    if kind == "complement_interval":
        return complement_interval(params["a1"], params["a2"], params.get("atoms"))
    if kind in ("three_level", "generalized_rdd") and dist is None:
        raise ValidationError(f"{kind} needs a distribution")
    if kind == "three_level":
        return three_level(params["z_tilde"], params["width"], dist)
    if kind == "generalized_rdd":
        return generalized_rdd(params["z_tilde"], dist)
    raise ValidationError(f"unknown design kind {kind!r}")


# -- moments ------------------------------------------------------------------


def raw_moments(p: DesignFunction, dist: Distribution) -> tuple:
    """(E p(x), E x p(x), E x^2 p(x))."""
    out = [0.0, 0.0, 0.0]
    bps = p.breakpoints
    for a in range(3):
        total = 0.0
        prev = -math.inf
        for i, b in enumerate(bps):
            lvl = p.levels[i]
            if lvl:
                total += lvl * (
                    dist.truncated_moment(a, b) - dist.truncated_moment(a, prev, include_t=True)
                )
            prev = b
        lvl = p.levels[-1]
        if lvl:
            total += lvl * (dist.moment(a) - dist.truncated_moment(a, prev, include_t=True))
        if dist.is_discrete:
            for i, b in enumerate(bps):
                m = dist.atom(b)
                if m:
                    total += p.at_breakpoint(i) * b**a * m
        out[a] = total
    return tuple(out)


def moments(p: DesignFunction, dist: Distribution) -> MomentTriple:
    """Moment triple via E_p(x^a z) = 2 E(x^a p(x)) - E(x^a)."""
    r = raw_moments(p, dist)
    return MomentTriple(*(2 * r[a] - dist.moment(a) for a in range(3)))


def convex_combination(lam: float, p: DesignFunction, q: DesignFunction) -> DesignFunction:
    """Pointwise ``lam * p + (1 - lam) * q``."""
    if not (0 <= lam <= 1):
        raise ValidationError(f"mixing weight must lie in [0, 1], got {lam}")
    if lam == 1:
        return p
    if lam == 0:
        return q
    cuts = sorted(set(p.breakpoints) | set(q.breakpoints))
    probes = _interval_probes(cuts)
    levels = [lam * p.value(x) + (1 - lam) * q.value(x) for x in probes]
    atoms = {c: lam * p.value(c) + (1 - lam) * q.value(c) for c in cuts}
    return DesignFunction(tuple(cuts), tuple(levels), atoms)


def _interval_probes(cuts):
    if not cuts:
        return [0.0]
    probes = [cuts[0] - 1.0]
    probes += [0.5 * (a + b) for a, b in zip(cuts, cuts[1:])]
    probes.append(cuts[-1] + 1.0)
    return probes


def is_monotone(p: DesignFunction) -> bool:
    return p.is_monotone()


def reflect(p: DesignFunction) -> DesignFunction:
    """The design ``x -> 1 - p(-x)``; maps (ez, exz, ex2z) to (-ez, exz, -ex2z) under x -> -x."""
    n = len(p.breakpoints)
    bps = tuple(-b for b in reversed(p.breakpoints))
    levels = tuple(1.0 - v for v in reversed(p.levels))
    atoms = {-p.breakpoints[i]: 1.0 - p.at_breakpoint(i) for i in range(n)}
    return DesignFunction(bps, levels, atoms)


def equivalent(p: DesignFunction, q: DesignFunction, dist: Distribution, tol: float = 1e-9) -> bool:
    """Equality outside an F-null set, checked at the atoms of F and on
    every interval of positive probability."""
    if dist.is_discrete:
        return bool(np.all(np.abs(p.evaluate(dist.values) - q.evaluate(dist.values)) <= tol))
    cuts = sorted(set(p.breakpoints) | set(q.breakpoints))
    edges = [-math.inf, *cuts, math.inf]
    for lo, hi, x in zip(edges, edges[1:], _interval_probes(cuts)):
        if dist.cdf_left(hi) - dist.cdf(lo) > 0 and abs(p.value(x) - q.value(x)) > tol:
            return False
    return True
