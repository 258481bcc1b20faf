import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from tiebreaker.design import (
    DesignFunction,
    build_design,
    complement_interval,
    constant,
    convex_combination,
    equivalent,
    from_pieces,
    generalized_rdd,
    interval_indicator,
    moments,
    reflect,
    three_level,
    two_level,
)
from tiebreaker.dist import from_sample, make_distribution
from tiebreaker.errors import ValidationError

UNIFORM = make_distribution("uniform")
WEIBULL = make_distribution("weibull")
GAUSS = make_distribution("gaussian")
FIVE = from_sample([-2, -1, 0, 1, 2])


def approx_triple(t, expected, tol):
    assert t.ez == pytest.approx(expected[0], abs=tol)
    assert t.exz == pytest.approx(expected[1], abs=tol)
    assert t.ex2z == pytest.approx(expected[2], abs=tol)


def test_rdd_on_uniform_is_sharp_threshold():
    p = generalized_rdd(-0.7, UNIFORM)
    assert p == two_level(0.0, 1.0, 0.7)
    approx_triple(moments(p, UNIFORM), (-0.7, 0.255, -0.114333333333), 1e-12)


def test_three_level_example():
    p = three_level(-0.7, 0.05, UNIFORM)
    assert p.breakpoints == pytest.approx((0.6, 0.8), abs=1e-14)
    assert p.levels == (0.0, 0.5, 1.0)
    approx_triple(moments(p, UNIFORM), (-0.7, 0.25, -0.121333333333), 1e-12)


def test_three_level_splits_atoms_on_discrete_support():
    d = from_sample([-2, -1, 0, 1, 2])
    for z in (-0.5, -0.2, 0.0, 0.3):
        gains = []
        for width in np.linspace(0, min((1 - z) / 2, (1 + z) / 2), 7):
            m = moments(three_level(z, float(width), d), d)
            assert m.ez == pytest.approx(z, abs=1e-14)
            gains.append(m.exz)
        assert all(b <= a + 1e-14 for a, b in zip(gains, gains[1:]))
        # no jumps: a tiny change of width moves the gain by O(width change)
        g = lambda w: moments(three_level(z, w, d), d).exz
        for w in (0.05, 0.1, 0.15):
            assert abs(g(w + 1e-9) - g(w)) <= 1e-8
    p = three_level(0.0, 0.1, d)
    # median atom 0 holds mass 0.2 and straddles both window edges
    assert p.value(0.0) == pytest.approx(0.5, abs=1e-15)


def test_three_level_infeasible_width():
    with pytest.raises(ValidationError, match="no feasible three level"):
        three_level(-0.7, 0.2, UNIFORM)


def test_constant_design_moments():
    p = constant(0.15)
    assert p.is_monotone()
    approx_triple(moments(p, UNIFORM), (-0.7, 0.0, -0.7 / 3), 1e-15)
    approx_triple(moments(constant(0.3), WEIBULL), (-0.4, 0.0, -0.4 * 20.0), 1e-12)


def test_generalized_rdd_on_atoms():
    # 2 of 5 treated: no fractional atom needed
    p = generalized_rdd(-0.2, FIVE)
    assert list(p.evaluate(FIVE.values)) == [0, 0, 0, 1, 1]
    approx_triple(moments(p, FIVE), (-0.2, 1.2, 0.0), 1e-12)
    # 30% treated on five atoms: the atom at 1 gets half its mass treated
    q = generalized_rdd(-0.4, FIVE)
    assert q.value(1.0) == pytest.approx(0.5)
    assert moments(q, FIVE).ez == pytest.approx(-0.4, abs=1e-14)
    assert q.is_monotone()


def test_generalized_rdd_fraction_037():
    d = from_sample(np.arange(10.0))
    z = 2 * (0.1 * 0.37 + 0.4) - 1  # top four plus 37% of the fifth from the top
    p = generalized_rdd(z, d)
    t = p.breakpoints[0]
    assert p.value(t) == pytest.approx(0.37, abs=1e-12)
    assert p.is_monotone()


def test_monotone_examples():
    assert two_level(0.2, 0.9, 0.0).is_monotone()
    assert not complement_interval(-0.5, 0.5).is_monotone()
    assert not two_level(0.2, 0.9, 0.0, at=0.95).is_monotone()
    assert interval_indicator(0.0, 1.0).value(0.5) == 1.0


def test_atom_default_is_left_level():
    p = two_level(0.2, 0.9, 0.0)
    assert p.value(0.0) == 0.2
    assert two_level(0.2, 0.9, 0.0, at=0.5).value(0.0) == 0.5
    xs = np.array([-1.0, 0.0, 1.0])
    assert list(two_level(0.2, 0.9, 0.0, at=0.5).evaluate(xs)) == [0.2, 0.5, 0.9]


def test_convex_combination_examples():
    p = two_level(0.1, 0.8, 0.3)
    assert convex_combination(1.0, p, constant(0.5)) is p
    half = convex_combination(0.5, constant(0.0), constant(1.0))
    assert half.levels == (0.5,)
    with pytest.raises(ValidationError):
        convex_combination(1.2, p, p)


def test_convex_combination_moments_are_linear():
    from tiebreaker.constraints import constraints
    from tiebreaker.solve_continuous import extremal

    c = constraints(UNIFORM, -0.5, xz=0.1)
    lo = extremal(UNIFORM, c, "min_monotone").design
    hi = extremal(UNIFORM, c, "max_monotone").design
    mix = convex_combination(0.3, lo, hi)
    expected = moments(lo, UNIFORM).blend(0.3, moments(hi, UNIFORM))
    approx_triple(moments(mix, UNIFORM), expected, 1e-12)


def _random_design(rng, lo=-2.0, hi=2.0):
    k = int(rng.integers(0, 5))
    cuts = np.sort(rng.uniform(lo, hi, size=k))
    levels = rng.uniform(0, 1, size=k + 1)
    atoms = {c: float(rng.uniform()) for c in cuts if rng.uniform() < 0.5}
    return from_pieces(cuts, levels, atoms)


def _quad_moment(p, dist, a):
    pts = list(p.breakpoints)
    lo = dist.support_lo if math.isfinite(dist.support_lo) else -12.0
    hi = dist.support_hi if math.isfinite(dist.support_hi) else 400.0
    edges = [lo] + [b for b in pts if lo < b < hi] + [hi]
    total = 0.0
    for left, right in zip(edges, edges[1:]):
        mid = 0.5 * (left + right)
        val, _ = integrate.quad(
            lambda x: x**a * dist.pdf(x), left, right, epsabs=1e-13, epsrel=1e-13, limit=200
        )
        total += p.value(mid) * val
    return 2 * total - dist.moment(a)


@pytest.mark.parametrize("dist", [UNIFORM, GAUSS], ids=lambda d: d.kind)
def test_tower_identity_against_quadrature(dist):
    rng = np.random.default_rng(17)
    for _ in range(20):
        p = _random_design(rng)
        m = moments(p, dist)
        for a, got in enumerate(m):
            assert got == pytest.approx(_quad_moment(p, dist, a), abs=1e-9)


def test_tower_identity_against_enumeration():
    rng = np.random.default_rng(19)
    d = from_sample(rng.integers(-5, 6, size=30).astype(float))
    for _ in range(50):
        cuts = np.sort(rng.choice(d.values, size=3, replace=False))
        p = from_pieces(cuts, rng.uniform(size=4), {c: float(rng.uniform()) for c in cuts})
        pv = p.evaluate(d.values)
        for a, got in enumerate(moments(p, d)):
            ref = 2 * np.sum(d.masses * d.values**a * pv) - np.sum(d.masses * d.values**a)
            assert got == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("dist", [UNIFORM, WEIBULL, GAUSS, FIVE], ids=lambda d: d.kind)
def test_moment_bounds_and_monotone_gain(dist):
    rng = np.random.default_rng(23)
    ex2 = dist.second_moment
    for _ in range(1000):
        p = _random_design(rng)
        t = moments(p, dist)
        assert abs(t.ez) <= 1 + 1e-12
        assert abs(t.ex2z) <= ex2 * (1 + 1e-12)
        if p.is_monotone():
            assert t.exz >= -1e-12


def test_symmetric_design_on_symmetric_law():
    rng = np.random.default_rng(29)
    for _ in range(50):
        base = _random_design(rng, 0.0, 1.0)
        # p(-x) = 1 - p(x) once p is replaced by its antisymmetric part
        sym = convex_combination(0.5, base, reflect(base))
        for dist in (UNIFORM, GAUSS, FIVE):
            t = moments(sym, dist)
            assert abs(t.ez) < 1e-10 and abs(t.ex2z) < 1e-10


def test_reflect_maps_moments():
    rng = np.random.default_rng(31)
    for _ in range(30):
        p = _random_design(rng)
        a, b = moments(p, UNIFORM), moments(reflect(p), UNIFORM)
        approx_triple(b, (-a.ez, a.exz, -a.ex2z), 1e-12)


def test_json_round_trip_is_exact():
    rng = np.random.default_rng(37)
    for _ in range(50):
        p = _random_design(rng)
        q = DesignFunction.from_json(p.to_json())
        assert q == p
        assert q.breakpoints == p.breakpoints and q.atoms == p.atoms


@settings(max_examples=50, deadline=None)
@given(
    cuts=st.lists(st.floats(-5, 5), max_size=4, unique=True),
    data=st.data(),
)
def test_simplify_preserves_values(cuts, data):
    cuts = sorted(cuts)
    levels = data.draw(st.lists(st.sampled_from([0.0, 0.25, 1.0]), min_size=len(cuts) + 1, max_size=len(cuts) + 1))
    p = DesignFunction(tuple(cuts), tuple(levels))
    s = p.simplify()
    probes = [*cuts, *(c + 0.01 for c in cuts), *(c - 0.01 for c in cuts), -10.0, 10.0]
    assert [p.value(x) for x in probes] == [s.value(x) for x in probes]


def test_equivalence_ignores_null_sets():
    a = two_level(0.0, 1.0, 0.5)
    b = two_level(0.0, 1.0, 0.5, at=1.0)
    assert equivalent(a, b, UNIFORM)
    assert not equivalent(a, b, from_sample([0.0, 0.5, 1.0]))
    assert not equivalent(a, two_level(0.0, 1.0, 0.6), UNIFORM)
    # differences outside the support do not count
    assert equivalent(constant(0.0), two_level(0.0, 1.0, 3.0), UNIFORM)


def test_build_design_dispatch():
    assert build_design("constant", {"theta": 0.4}) == constant(0.4)
    assert build_design("generalized_rdd", {"z_tilde": 0.0}, UNIFORM) == two_level(0, 1, 0.0)
    with pytest.raises(ValidationError):
        build_design("three_level", {"z_tilde": 0, "width": 0.1})
    with pytest.raises(ValidationError):
        build_design("spline", {})


@pytest.mark.parametrize(
    "args",
    [((1.0, 0.0), (0.0, 0.0, 0.0)), ((0.0,), (1.5, 0.0)), ((math.inf,), (0.0, 1.0))],
)
def test_invalid_design_functions(args):
    with pytest.raises(ValidationError):
        DesignFunction(*args)
