"""Walk arithmetic against the exhaustive cycle oracle."""

from fractions import Fraction

import pytest
from mpmath import mp

from infraquad.distance import (
    ApproxReal,
    InfrastructureError,
    PrecisionBudget,
    SizingError,
    WalkState,
    anchor_dist,
    approx_ln,
    form_left_of,
    giant_step,
    pip_eval,
    power_form,
    step_distance,
    unit_state,
)
from infraquad.forms import Discriminant, Form, unit_form
from infraquad.oracle import enumerate_cycle, order_and_s

mp.prec = 220


def _mp_frac(x):
    return Fraction(x).numerator / mp.mpf(Fraction(x).denominator)


def _circle_gap(a: Fraction, b: Fraction, period: Fraction) -> Fraction:
    gap = (a - b) % period
    return min(gap, period - gap)


@pytest.fixture(scope="module")
def budget97():
    return PrecisionBudget.for_walks(Discriminant(97))


@pytest.fixture(scope="module")
def cycle97():
    return enumerate_cycle(Discriminant(97))


def test_approx_ln_is_sound_and_deterministic():
    cases = [Fraction(3, 2), Fraction(2), Fraction(1, 7), Fraction(97), Fraction(10**9 + 7, 13)]
    for prec_bits in (20, 53, 140):
        precision = Fraction(1, 1 << prec_bits)
        for x in cases:
            got = approx_ln(x, precision)
            truth = mp.log(_mp_frac(x))
            approx = mp.mpf(got.mantissa) / mp.mpf(2) ** got.frac_bits
            assert abs(approx - truth) <= mp.mpf(float(precision)) * (1 + mp.mpf(2) ** -40)
            assert got.err_bound == precision
            again = approx_ln(x, precision)
            assert (again.mantissa, again.frac_bits) == (got.mantissa, got.frac_bits)
    with pytest.raises(ValueError):
        approx_ln(0, Fraction(1, 1024))
    with pytest.raises(ValueError):
        approx_ln(Fraction(-3), Fraction(1, 1024))


def test_step_distance_matches_reference_log():
    for d in (40, 97, 316):
        disc = Discriminant(d)
        cycle = enumerate_cycle(disc)
        sqd = mp.sqrt(d)
        for f in cycle.forms[:6]:
            got = step_distance(f, Fraction(1, 1 << 80))
            truth = mp.log((sqd + f.b) / (sqd - f.b)) / 2
            assert abs(float(got.value) - float(truth)) <= 2.0**-79
            assert 0 < float(got.value) < float(mp.log(sqd))


def test_approx_real_arithmetic_propagates_error_bounds():
    a = ApproxReal.from_fraction(Fraction(22, 7), 64)
    b = ApproxReal.from_fraction(Fraction(-3, 11), 80)
    assert a.err_bound <= Fraction(1, 1 << 64)
    s = a + b
    assert s.frac_bits == 80
    assert s.err_bound == a.err_bound + b.err_bound
    assert (a - b).value == a.value - b.value
    assert (-a).value == -a.value
    t = a.scale_int(-5)
    assert t.value == -5 * a.value
    assert t.err_bound == 5 * a.err_bound
    h = ApproxReal(3, 2, Fraction(1, 64)).half()
    assert h.value == Fraction(1, 4)  # floor of 3/8 at 2 bits
    assert h.err_bound == Fraction(1, 128) + Fraction(1, 8)
    round_trip = ApproxReal.from_text(a.to_text(), a.err_bound)
    assert round_trip.value == a.value


def test_walk_state_rejects_spent_error_budget():
    disc = Discriminant(40)
    f = unit_form(disc)
    with pytest.raises(InfrastructureError):
        WalkState(f, ApproxReal(0, 16, Fraction(1, 8)))


def test_budget_sizes_reject_out_of_range_walks():
    disc = Discriminant(97)
    budget = PrecisionBudget.for_walks(disc, x_max=1 << 16)
    with pytest.raises(SizingError):
        budget.check_x(-1)
    with pytest.raises(SizingError):
        budget.check_x((1 << 16) + 1)
    relaxed = PrecisionBudget.for_walks(disc, x_max=1 << 16, relaxed=True)
    relaxed.check_x((1 << 20))  # no raise
    with pytest.raises(ValueError):
        PrecisionBudget(disc, 7, 1 << 40, Fraction(1, 4), 64, 1 << 16)


def test_unit_state_and_trivial_anchors(budget97):
    st = unit_state(budget97)
    assert st.form == unit_form(Discriminant(97))
    assert st.dist.value == 0
    assert anchor_dist(st.form, budget97).value == 0


def test_anchor_dist_matches_cycle_oracle(budget97, cycle97):
    reg = cycle97.regulator_narrow.value
    for j, f in enumerate(cycle97.forms):
        got = anchor_dist(f, budget97)
        gap = _circle_gap(got.value, cycle97.dists[j].value, reg)
        assert gap <= got.err_bound + cycle97.dists[j].err_bound + Fraction(1, 1 << 100)


def test_anchor_dist_is_zero_off_the_principal_cycle():
    disc = Discriminant(40)
    budget = PrecisionBudget.for_walks(disc)
    assert anchor_dist(Form(3, 4, -2, disc), budget).value == 0


def test_form_left_of_agrees_with_cycle_positions(budget97, cycle97):
    reg = cycle97.regulator_narrow.value
    dists = [d.value for d in cycle97.dists]
    edge_slack = Fraction(1, 1 << 60)
    for y in range(0, int(8 * reg)):
        pos = Fraction(y, 4) % reg
        if any(_circle_gap(pos, e, reg) <= edge_slack for e in dists):
            continue  # undecidable at the boundary of a block
        expect = max(j for j, e in enumerate(dists) if e <= pos)
        got = form_left_of(y, budget97)
        assert got.form == cycle97.forms[expect], f"y={y}"


def test_giant_step_distance_is_position_of_landed_form(budget97, cycle97):
    reg = cycle97.regulator_narrow.value
    forms = cycle97.forms
    for i in range(0, len(forms), 2):
        for j in range(0, len(forms), 3):
            s1 = WalkState(forms[i], anchor_dist(forms[i], budget97))
            s2 = WalkState(forms[j], anchor_dist(forms[j], budget97))
            out = giant_step(s1, s2, budget97)
            k = cycle97.index_of(out.form)
            assert k is not None
            gap = _circle_gap(out.dist.value, cycle97.dists[k].value, reg)
            assert gap <= out.dist.err_bound + Fraction(1, 1 << 100)


def test_power_form_tracks_the_landed_representative(budget97, cycle97):
    reg = cycle97.regulator_narrow.value
    g = cycle97.forms[1]
    for x in (1, 2, 3, 7, 19, 50):
        st = power_form(g, x, budget97)
        k = cycle97.index_of(st.form)
        assert k is not None
        gap = _circle_gap(st.dist.value, cycle97.dists[k].value, reg)
        assert gap <= st.dist.err_bound + Fraction(1, 1 << 100)
    zero = power_form(g, 0, budget97)
    assert zero.form == unit_form(Discriminant(97))
    assert zero.dist.value == 0
    with pytest.raises(SizingError):
        power_form(g, -1, budget97)


def test_pip_eval_identity_cases(budget97, cycle97):
    g = cycle97.forms[1]
    assert pip_eval(g, 1, 0, budget97).form == g
    u = unit_form(Discriminant(97))
    assert pip_eval(u, 0, 0, budget97).form == u
    with pytest.raises(SizingError):
        pip_eval(g, -1, 0, budget97)
    with pytest.raises(SizingError):
        pip_eval(g, 0, -1, budget97)


def test_pip_eval_follows_the_product_ideal_position(budget97, cycle97):
    # the value at (x, y) is the last form at ideal-position x*delta(g) + y/4
    reg = cycle97.regulator_narrow.value
    dists = [d.value for d in cycle97.dists]
    g = cycle97.forms[1]
    delta = cycle97.dists[1].value
    edge_slack = Fraction(1, 1 << 20)
    checked = 0
    for x in (0, 1, 2, 3, 5, 11):
        for y in range(0, 28, 3):
            pos = (x * delta + Fraction(y, 4)) % reg
            if any(_circle_gap(pos, e, reg) <= edge_slack for e in dists):
                continue
            expect = max(j for j, e in enumerate(dists) if e <= pos)
            got = pip_eval(g, x, y, budget97)
            assert got.form == cycle97.forms[expect], f"x={x} y={y}"
            checked += 1
    assert checked > 40


def test_pip_eval_walks_backward_when_corrections_overshoot():
    # large powers accumulate reduction corrections; y = 0 then needs the
    # retreat branch whenever the landed representative sits past the ideal
    disc = Discriminant(129)
    budget = PrecisionBudget.for_walks(disc, x_max=1 << 20)
    cycle = enumerate_cycle(disc)
    reg = cycle.regulator_narrow.value
    dists = [d.value for d in cycle.dists]
    g = cycle.forms[1]
    delta = cycle.dists[1].value
    from infraquad.distance import _power_state

    hit_retreat = False
    for x in (4, 8, 16, 31, 57, 64):
        if _power_state(g, x, budget).dist.value > 0:
            hit_retreat = True
        pos = (x * delta) % reg
        if min(_circle_gap(pos, e, reg) for e in dists) <= Fraction(1, 1 << 20):
            continue
        expect = max(j for j, e in enumerate(dists) if e <= pos)
        assert pip_eval(g, x, 0, budget).form == cycle.forms[expect], f"x={x}"
    assert hit_retreat, "no tested power exercised the backward branch"


def test_pip_eval_nonprincipal_powers_reach_the_principal_cycle():
    # squares of an order-2 class are principal; their positions follow the
    # class-order distance reported by the oracle
    disc = Discriminant(40)
    budget = PrecisionBudget.for_walks(disc)
    cycle = enumerate_cycle(disc)
    g = Form(3, 4, -2, disc)
    n, s_dist = order_and_s(g, cycle)
    assert n == 2
    reg = cycle.regulator_narrow.value
    dists = [d.value for d in cycle.dists]
    for y in range(0, 20, 4):
        pos = (s_dist.value + Fraction(y, 4)) % reg
        if min(_circle_gap(pos, e, reg) for e in dists) <= Fraction(1, 1 << 20):
            continue
        expect = max(j for j, e in enumerate(dists) if e <= pos)
        got = pip_eval(g, 2, y, budget)
        assert got.form == cycle.forms[expect], f"y={y}"
