import math

import numpy as np
import pytest

from tiebreaker.constraints import constraints, xz_max
from tiebreaker.criteria import D_OPT, EFF, efficiency, parse_criterion
from tiebreaker.design import constant, equivalent, generalized_rdd, moments, three_level
from tiebreaker.dist import make_distribution
from tiebreaker.errors import InfeasibleConstraintsError, ValidationError
from tiebreaker.solve_continuous import (
    CSV_COLUMNS,
    EXTREMAL_KINDS,
    canonical_form,
    extremal,
    optimal_design,
    record_row,
    solve_extremal,
    three_level_width,
    tradeoff_sweep,
    uniform_closed_form,
)

U = make_distribution("uniform")
W = make_distribution("weibull")
G = make_distribution("gaussian")
THIRD = 1 / 3


def inv_eff(m):
    return 1 / efficiency(m.ez, m.exz, m.ex2z, THIRD)


@pytest.fixture(scope="module")
def base_case():
    return constraints(U, -0.7, xz=0.25)


def test_constraints_validation():
    c = constraints(U, -0.7, delta=0.5)
    assert c.xz == pytest.approx(0.1275)
    assert constraints(U, -0.7, xz=0.1275).delta == pytest.approx(0.5)
    with pytest.raises(InfeasibleConstraintsError) as err:
        constraints(U, -0.7, xz=0.3)
    assert err.value.context["bounds"]["xz"][1] == pytest.approx(0.255)
    for bad in (dict(delta=1.2), dict(xz=-0.1)):
        with pytest.raises(InfeasibleConstraintsError):
            constraints(U, 0.0, **bad)
    with pytest.raises(InfeasibleConstraintsError):
        constraints(U, 1.0, delta=0.0)
    with pytest.raises(ValidationError):
        constraints(U, 0.0, delta=0.1, xz=0.1)


def test_extremal_examples(base_case):
    e = extremal(U, base_case, "max_monotone")
    assert e.params["l"] == pytest.approx(0.0034482758620689655, abs=1e-12)
    assert e.params["t"] == pytest.approx(0.7058823529411765, abs=1e-12)
    e = extremal(U, base_case, "max")
    assert e.params["a1"] == pytest.approx(-0.9970588235294118, abs=1e-12)
    assert e.params["a2"] == pytest.approx(0.7029411764705882, abs=1e-12)
    e = extremal(U, base_case, "min")
    assert (e.params["b1"], e.params["b2"]) == pytest.approx((0.6833333333333333, 0.9833333333333333), abs=1e-12)
    e = extremal(U, base_case, "min_monotone")
    assert (e.params["u"], e.params["s"]) == pytest.approx((0.9, 2 / 3), abs=1e-12)


@pytest.mark.parametrize("dist", [U, W, G], ids=lambda d: d.kind)
@pytest.mark.parametrize("kind", EXTREMAL_KINDS)
def test_extremal_residuals_and_shape(dist, kind):
    for z in (-0.6, 0.0, 0.45):
        for delta in (0.05, 0.5, 0.95):
            c = constraints(dist, z, delta=delta)
            p = solve_extremal(dist, c, kind)
            m = moments(p, dist)
            assert abs(m.ez - z) <= 1e-10
            assert abs(m.exz - c.xz) <= 1e-10 * max(1.0, c.xz_upper)
            assert p.is_monotone() == kind.endswith("monotone")


@pytest.mark.parametrize("dist", [U, W], ids=lambda d: d.kind)
def test_extremal_ordering(dist):
    for z in (-0.5, 0.2):
        c = constraints(dist, z, delta=0.4)
        vals = {k: moments(solve_extremal(dist, c, k), dist).ex2z for k in EXTREMAL_KINDS}
        assert vals["min"] <= vals["min_monotone"] <= vals["max_monotone"] <= vals["max"]


def test_boundary_cases():
    for z in (-0.7, 0.3):
        c = constraints(U, z, delta=1.0)
        rdd = generalized_rdd(z, U)
        for kind in EXTREMAL_KINDS:
            assert equivalent(solve_extremal(U, c, kind), rdd, U)
        c0 = constraints(W, z, delta=0.0)
        for kind in ("max_monotone", "min_monotone"):
            assert solve_extremal(W, c0, kind) == constant((1 + z) / 2)


def test_unknown_kind(base_case):
    with pytest.raises(ValidationError):
        solve_extremal(U, base_case, "median")


def test_uniform_closed_form_examples(base_case):
    p = uniform_closed_form(base_case, "max_monotone")
    assert p["l"] == pytest.approx(0.003448275862, abs=1e-11)
    assert p["t"] == pytest.approx(0.705882352941, abs=1e-11)
    p = uniform_closed_form(base_case, "min")
    assert (p["b1"], p["b2"]) == pytest.approx((0.683333333333, 0.983333333333), abs=1e-11)
    assert uniform_closed_form(base_case, "three_level")["width"] == pytest.approx(0.05, abs=1e-14)


def test_uniform_closed_forms_match_generic_solver():
    keys = {"max": ("a1", "a2"), "min": ("b1", "b2"), "max_monotone": ("l", "t"), "min_monotone": ("u", "s")}
    count = 0
    for z in np.linspace(-0.8, 0.8, 5):
        for delta in np.linspace(0.05, 0.95, 10):
            c = constraints(U, float(z), delta=float(delta))
            count += 1
            for kind, names in keys.items():
                closed = uniform_closed_form(c, kind)
                generic = extremal(U, c, kind).params
                for name in names:
                    assert closed[name] == pytest.approx(generic[name], abs=1e-8)
            width = three_level_width(U, float(z), c.xz)
            closed_w = uniform_closed_form(c, "three_level")["width"] if width is not None else None
            if width is not None:
                assert closed_w == pytest.approx(width, abs=1e-8)
    assert count == 50


def test_three_level_width_infeasible():
    # at z = -0.7 the widest three-level design has gain 0.255 - 2 * 0.15**2
    assert three_level_width(U, -0.7, 0.1) is None
    with pytest.raises(ValidationError):
        uniform_closed_form(constraints(U, -0.7, xz=0.1), "three_level")


def test_reference_case_values(base_case):
    assert inv_eff(moments(generalized_rdd(-0.7, U), U)) == pytest.approx(223.44, rel=5e-3)
    assert inv_eff(moments(three_level(-0.7, 0.05, U), U)) == pytest.approx(137.56, rel=5e-3)
    mon = optimal_design(U, base_case, EFF, monotone=True)
    opt = optimal_design(U, base_case, EFF, monotone=False)
    assert inv_eff(mon.moments) == pytest.approx(54.90, rel=5e-3)
    assert inv_eff(opt.moments) == pytest.approx(42.37, rel=5e-3)
    assert mon.form == "extremal" and mon.lam == 0.0
    assert equivalent(mon.design, extremal(U, base_case, "max_monotone").design, U)
    assert equivalent(opt.design, extremal(U, base_case, "max").design, U)
    assert opt.interval == pytest.approx((-0.12275, -0.112848), abs=1e-5)


def test_efficiency_points_at_offset_fraction():
    mon0 = optimal_design(U, constraints(U, -0.5, delta=0.0), EFF, monotone=True)
    assert mon0.criterion_value == pytest.approx(0.25, abs=1e-12)
    mon = optimal_design(U, constraints(U, -0.5, xz=0.1), EFF, monotone=True)
    assert mon.criterion_value == pytest.approx(0.28, abs=5e-3)
    opt0 = optimal_design(U, constraints(U, -0.5, delta=0.0), EFF, monotone=False)
    assert opt0.criterion_value == pytest.approx(THIRD, abs=1e-9)


def test_optimal_result_invariants():
    for dist in (U, W, G):
        for z in (-0.5, 0.0, 0.3):
            for delta in (0.0, 0.3, 0.8, 1.0):
                c = constraints(dist, z, delta=delta)
                for mono in (False, True):
                    r = optimal_design(dist, c, EFF, monotone=mono)
                    assert max(r.residuals) <= 1e-8
                    assert r.lam is None or 0 <= r.lam <= 1
                    assert abs(r.moments.ex2z - r.selected_x2z) <= 1e-8 * max(1.0, dist.second_moment)
                    assert r.design.is_monotone() or not mono


def test_zero_treatment_offset_curves_coincide():
    for delta in (0.1, 0.4, 0.7, 0.9):
        c = constraints(U, 0.0, delta=delta)
        e3 = efficiency(*moments(three_level(0.0, three_level_width(U, 0.0, c.xz), U), U), THIRD)
        for mono in (False, True):
            assert optimal_design(U, c, EFF, monotone=mono).criterion_value == pytest.approx(e3, abs=1e-9)


def test_d_criterion_selects_same_design(base_case):
    a = optimal_design(U, constraints(U, -0.3, delta=0.4), EFF)
    b = optimal_design(U, constraints(U, -0.3, delta=0.4), D_OPT)
    assert a.selected_x2z == b.selected_x2z


def test_custom_criterion_through_solver():
    spec = parse_criterion("custom:-(x2z - 0.01)**2")
    c = constraints(U, -0.5, xz=0.1)
    r = optimal_design(U, c, spec, monotone=True)
    lo, hi = r.interval
    assert r.selected_x2z == pytest.approx(min(max(0.01, lo), hi), abs=1e-7)


def test_canonical_monotone_endpoint_and_interior(base_case):
    top = canonical_form(U, base_case, optimal_design(U, base_case, EFF, True).interval[1], monotone=True)
    assert top.levels[-1] == 1.0
    c = constraints(W, 0.0, delta=0.5)
    r = optimal_design(W, c, EFF, monotone=True)
    p = canonical_form(W, c, r.selected_x2z, monotone=True)
    assert len(p.breakpoints) == 1 and p.is_monotone()
    m = moments(p, W)
    assert (m.ez, m.exz, m.ex2z) == pytest.approx((0.0, c.xz, r.selected_x2z), abs=1e-8)


def test_canonical_strata_matches_blend():
    c = constraints(U, -0.5, xz=0.1)
    r = optimal_design(U, c, EFF, monotone=False)
    assert r.form == "blend"
    p = canonical_form(U, c, r.selected_x2z, monotone=False)
    assert len(p.breakpoints) <= 3 and p.levels[0] == 1.0
    m = moments(p, U)
    assert efficiency(*m, THIRD) == pytest.approx(r.criterion_value, abs=1e-9)


def test_canonical_rejects_unreachable_target(base_case):
    with pytest.raises(InfeasibleConstraintsError):
        canonical_form(U, base_case, 0.5, monotone=True)


def test_sweep_records_and_schema():
    recs = tradeoff_sweep(U, -0.5, np.linspace(0, 1, 101), EFF, workers=1)
    assert len(recs) == 101
    upper = xz_max(U, -0.5)
    for r in recs:
        assert r.xz == pytest.approx(r.delta * upper, abs=1e-12)
        assert 1 / r.eff_inv_opt >= 1 / r.eff_inv_opt_monotone - 1e-9
        if r.eff_inv_three_level is not None:
            assert 1 / r.eff_inv_opt_monotone >= 1 / r.eff_inv_three_level - 1e-9
    assert 1 / recs[0].eff_inv_opt_monotone == pytest.approx(0.25, abs=1e-12)
    assert 1 / recs[0].eff_inv_opt == pytest.approx(THIRD, abs=1e-9)
    near = min(recs, key=lambda r: abs(r.xz - 0.1))
    assert 1 / near.eff_inv_opt_monotone == pytest.approx(0.28, abs=5e-3)
    row = record_row(recs[50])
    assert tuple(row) == CSV_COLUMNS


def test_sweep_marks_missing_three_level():
    recs = tradeoff_sweep(U, -0.7, [0.1, 0.99], EFF, workers=1)
    assert recs[0].eff_inv_three_level is None
    assert record_row(recs[0])["three_level_width"] is None
    assert recs[1].eff_inv_three_level is not None


def test_sweep_parallel_matches_serial():
    grid = np.linspace(0, 1, 21)
    a = tradeoff_sweep(W, 0.0, grid, EFF, workers=1)
    b = tradeoff_sweep(W, 0.0, grid, EFF, workers=4)
    assert [record_row(r) for r in a] == [record_row(r) for r in b]


def test_sweep_rejects_bad_grid():
    with pytest.raises(ValidationError):
        tradeoff_sweep(U, 0.0, [0.5, 1.5])


def test_sign_flip_symmetry():
    grid = np.linspace(0, 1, 11)
    for z in (0.2, 0.5):
        a = tradeoff_sweep(U, z, grid, EFF, workers=1)
        b = tradeoff_sweep(U, -z, grid, EFF, workers=1)
        for ra, rb in zip(a, b):
            assert ra.eff_inv_opt == pytest.approx(rb.eff_inv_opt, rel=1e-9)
            assert ra.eff_inv_opt_monotone == pytest.approx(rb.eff_inv_opt_monotone, rel=1e-9)


def test_optimal_efficiency_decreases_in_gain():
    grid = np.linspace(0, 1, 101)
    for z in (0.0, -0.2, -0.5, -0.7):
        vals = [1 / r.eff_inv_opt for r in tradeoff_sweep(U, z, grid, EFF, workers=1)]
        assert all(b < a for a, b in zip(vals, vals[1:]))


def test_rct_is_inadmissible_for_monotone_designs():
    grid = np.linspace(0, 1, 101)
    for z in (-0.2, -0.5, -0.7):
        recs = tradeoff_sweep(U, z, grid, EFF, workers=1)
        base = 1 / recs[0].eff_inv_opt_monotone
        assert any(1 / r.eff_inv_opt_monotone > base for r in recs[1:])


def test_weibull_optimal_beats_three_level_by_far():
    recs = tradeoff_sweep(W, 0.0, [0.5, 0.9, 0.99], EFF, workers=1)
    ratios = [r.eff_inv_three_level / r.eff_inv_opt for r in recs]
    assert ratios[0] == pytest.approx(4.0, rel=0.05)
    assert ratios[-1] > 10
    assert math.isfinite(ratios[-1])
