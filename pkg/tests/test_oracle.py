"""Classical number-theoretic references: Pell units, cycles, class data."""

import json
from fractions import Fraction
from math import isqrt, log
from pathlib import Path

import pytest
from mpmath import mp

from infraquad.distance import PrecisionBudget
from infraquad.forms import Discriminant, Form, to_positive_rep, unit_form
from infraquad.oracle import (
    CycleCapExceeded,
    OrderSearchExceeded,
    class_count,
    default_cycle_cap,
    enumerate_cycle,
    form_classes,
    fundamental_unit,
    order_and_s,
    principal_test_bruteforce,
    regulator_classical,
    regulator_float,
    scan_discriminants,
)

GOLDEN = Path(__file__).parent / "golden"

mp.prec = 200


def _valid_discs(limit):
    for d in range(5, limit + 1):
        if d % 4 in (0, 1) and isqrt(d) ** 2 != d:
            yield d


def test_cycle_regulator_matches_pell_reference_to_1e20():
    tol = Fraction(1, 10**20)
    for d in _valid_discs(10_000):
        disc = Discriminant(d)
        cycle = enumerate_cycle(disc)
        ref = regulator_classical(disc, tol / 2)
        diff = abs(cycle.regulator_narrow.value - ref.value)
        assert diff <= tol, f"d={d} diff={float(diff)}"


@pytest.mark.parametrize(
    "d,expr",
    [
        (8, lambda: mp.log(3 + 2 * mp.sqrt(2))),
        (13, lambda: mp.log((11 + 3 * mp.sqrt(13)) / 2)),
        (5, lambda: mp.log((3 + mp.sqrt(5)) / 2)),
        (12, lambda: mp.log(2 + mp.sqrt(3))),
    ],
)
def test_regulator_spot_values(d, expr):
    got = regulator_classical(Discriminant(d), Fraction(1, 10**25))
    approx = mp.mpf(got.mantissa) / mp.mpf(2) ** got.frac_bits
    assert abs(approx - expr()) < mp.mpf(10) ** -24


def test_fundamental_unit_solves_pell_exactly():
    for d in _valid_discs(500):
        t, u, norm = fundamental_unit(Discriminant(d))
        assert norm in (1, -1)
        assert t > 0 and u > 0
        assert t * t - d * u * u == 4 * norm, f"d={d}"


def test_fundamental_unit_finds_half_integral_units():
    # (1 + sqrt(5))/2 has norm -1; (3 + sqrt(13))/2 likewise
    assert fundamental_unit(Discriminant(5)) == (1, 1, -1)
    assert fundamental_unit(Discriminant(13)) == (3, 1, -1)
    assert fundamental_unit(Discriminant(8)) == (2, 1, -1)


def test_cycle_distances_are_sorted_and_bounded():
    for d in (40, 97, 316, 5569):
        cycle = enumerate_cycle(Discriminant(d))
        vals = [x.value for x in cycle.dists]
        assert vals[0] == 0
        assert all(a < b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < cycle.regulator_narrow.value
        assert cycle.forms[0] == unit_form(Discriminant(d))
        assert cycle.rho_steps >= 2 * len(cycle.forms) - 2
        for x in cycle.dists:
            assert x.err_bound < Fraction(1, 1 << 100)


def test_golden_cycle_dump_is_stable(tmp_path):
    cycle = enumerate_cycle(Discriminant(40))
    out = tmp_path / "cycle_40.jsonl"
    cycle.dump_jsonl(str(out))
    assert out.read_text() == (GOLDEN / "cycle_40.jsonl").read_text()
    row = json.loads(out.read_text().splitlines()[0])
    assert (row["a"], row["b"], row["c"]) == (1, 6, -1)
    assert row["dist_mantissa"] == 0


def test_principal_membership_with_distance():
    disc = Discriminant(97)
    cycle = enumerate_cycle(disc)
    for j, f in enumerate(cycle.forms):
        ok, dist = principal_test_bruteforce(f, cycle)
        assert ok and dist is not None
        assert dist.value == cycle.dists[j].value
    ok, dist = principal_test_bruteforce(Form(3, 4, -2, Discriminant(40)))
    assert not ok and dist is None


def test_principal_test_reduces_its_input_first():
    disc = Discriminant(40)
    u = unit_form(disc)
    from infraquad.forms import compose

    big = compose(compose(u, u), u)  # unreduced principal representative
    ok, dist = principal_test_bruteforce(big)
    assert ok
    assert dist.value == 0


def test_order_and_s_on_the_known_order_two_class():
    disc = Discriminant(40)
    cycle = enumerate_cycle(disc)
    g = Form(3, 4, -2, disc)
    n, s = order_and_s(g, cycle)
    assert n == 2
    assert abs(float(s) - 2.145897) < 1e-5
    # a principal input reports order 1 and its own position, correction-free
    n_u, s_u = order_and_s(cycle.forms[0], cycle)
    assert (n_u, s_u.value) == (1, Fraction(0))


def test_order_and_s_matches_the_walk_arithmetic():
    # the oracle's corrected position must equal the product-ideal position
    # that the ladder computes: pos(rep) - correction total, mod R
    from infraquad.distance import _power_state, anchor_dist

    for d in (40, 57, 60, 105, 124):
        disc = Discriminant(d)
        cycle = enumerate_cycle(disc)
        reg = cycle.regulator_narrow.value
        budget = PrecisionBudget.for_walks(disc)
        for cyc in form_classes(disc):
            g = to_positive_rep(cyc[0])
            n, s = order_and_s(g, cycle)
            st = _power_state(g, n, budget)
            ladder = (anchor_dist(st.form, budget).value - st.dist.value) % reg
            gap = (s.value - ladder) % reg
            gap = min(gap, reg - gap)
            assert gap < Fraction(1, 10**9), f"d={d} g={g.triple} n={n}"


def test_order_search_cap_raises():
    disc = Discriminant(40)
    cycle = enumerate_cycle(disc)
    with pytest.raises(OrderSearchExceeded):
        order_and_s(Form(3, 4, -2, disc), cycle, order_cap=1)


def test_class_partition_counts():
    assert class_count(Discriminant(5)) == 1
    assert class_count(Discriminant(40)) == 2
    assert class_count(Discriminant(60)) == 4
    for d in (40, 60, 97):
        disc = Discriminant(d)
        classes = form_classes(disc)
        total = sum(len(c) for c in classes)
        from infraquad.forms import reduced_forms

        assert total == len(reduced_forms(disc))


def test_cycle_cap_and_env_default(monkeypatch):
    with pytest.raises(CycleCapExceeded):
        enumerate_cycle(Discriminant(9412), cap=2)
    monkeypatch.setenv("INFRAQUAD_CYCLE_CAP", "123")
    assert default_cycle_cap() == 123
    monkeypatch.setenv("INFRAQUAD_CYCLE_CAP", "junk")
    assert default_cycle_cap() > 123  # malformed values fall back
    monkeypatch.delenv("INFRAQUAD_CYCLE_CAP")
    assert default_cycle_cap() > 123


def test_scan_discriminants_filters_and_limits():
    rows = scan_discriminants(5, 150, min_ratio=2.0, limit=3)
    assert [d for d, _ in rows] == [41, 73, 89]
    for d, reg in rows:
        assert reg >= 2.0 * log(d)
        assert abs(reg - regulator_float(Discriminant(d))) < 1e-9
    assert scan_discriminants(26, 28) == []  # 26, 27 invalid residues


def test_regulator_float_agrees_with_exact():
    for d in (8, 13, 97, 5569):
        exact = regulator_classical(Discriminant(d), Fraction(1, 10**15))
        assert abs(regulator_float(Discriminant(d)) - float(exact.value)) < 1e-9
