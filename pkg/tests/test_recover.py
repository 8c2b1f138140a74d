"""Continued-fraction and extended-gcd recovery, plus anchored refinement."""

import random
from fractions import Fraction
from math import gcd, isqrt

import pytest

from infraquad.distance import (
    ApproxReal,
    InfrastructureError,
    PrecisionBudget,
    WalkState,
    unit_state,
)
from infraquad.forms import Discriminant, unit_form
from infraquad.recover import (
    RecoveryResult,
    _first_unit_return,
    cf_recover,
    pip_recover,
    refine_distance,
)

Q = 1 << 20


def _dual_pair(z1: int, z2: int, alpha: Fraction, q: int = Q) -> tuple[int, int]:
    # one rounded dual sample per component, the way measurement bins land
    return round(Fraction(q) * z1 / alpha), round(Fraction(q) * z2 / alpha)


# ---------------------------------------------------------------------------
# cf_recover


def test_round_trip_random_instances():
    """10^4 coprime pairs with z2 <= sqrt(q)/2 survive the rounding and come
    back exactly.  alpha plays the regulator: positive, with q well above
    alpha^2 so the continuation denominator overshoots the search window."""
    rng = random.Random(0xC0FFEE)
    half = isqrt(Q) // 2
    checked = 0
    while checked < 10_000:
        z2 = rng.randrange(2, half + 1)
        z1 = rng.randrange(1, z2)
        if gcd(z1, z2) != 1:
            continue
        alpha = Fraction(rng.randrange(2 << 20, half << 20), 1 << 20)
        y1, y2 = _dual_pair(z1, z2, alpha)
        assert 0 < y1 <= y2
        assert cf_recover(y1, y2, Q) == (z1, z2)
        checked += 1


@pytest.mark.parametrize(
    "y1,y2,z1,z2",
    [
        (1035377, 1043579, 505, 509),
        (1038597, 1042695, 507, 509),
        (1023701, 1031908, 499, 503),
    ],
)
def test_round_trip_near_boundary(y1, y2, z1, z2):
    """Adversarial instances sitting close to the |y1/y2 - z1/z2| <= 1/(2*z2^2)
    qualification edge, found by a corner scan of the admissible range."""
    off = abs(Fraction(y1, y2) - Fraction(z1, z2))
    assert Fraction(9, 20) < off * 2 * z2 * z2 <= 1
    assert cf_recover(y1, y2, Q) == (z1, z2)


@pytest.mark.parametrize(
    "z1,z2",
    [(3, 980), (659, 997), (512, 1003), (161, 1009), (578, 1019), (1023, 1024)],
)
@pytest.mark.parametrize("sign", [1, -1])
def test_boundary_offset_recovers(z1, z2, sign):
    """Offset exactly (1 - 10^-6)/(2*z2^2) from z1/z2, either side.  The pairs
    are chosen so the continuation convergent (denominator z2 + penultimate,
    or its mirror for the other side) overshoots the isqrt(q) window."""
    off = Fraction(10**6 - 1, 10**6) / (2 * z2 * z2)
    x = Fraction(z1, z2) + sign * off
    assert cf_recover(x.numerator, x.denominator, Q) == (z1, z2)


def test_exact_ratio_recovers_itself():
    assert cf_recover(3 * 12345, 7 * 12345, Q) == (3, 7)
    assert cf_recover(8, 8, Q) == (1, 1)


def test_dual_sample_example():
    # two samples off the same peak lattice, regulator-scale denominator
    reg = Fraction(18648801, 10**6)
    y1, y2 = _dual_pair(3, 7, reg)
    assert cf_recover(y1, y2, Q) == (3, 7)


def test_tiny_ratio_yields_coarse_convergent():
    """0/1 qualifies vacuously for small ratios; the refined-most rule keeps
    that from shadowing real pairs, but with nothing finer in the window the
    coarse convergent is what comes back."""
    assert cf_recover(1, 10**6, 4) == (0, 1)


def test_cf_recover_preconditions():
    with pytest.raises(ValueError):
        cf_recover(1, 0, Q)
    with pytest.raises(ValueError):
        cf_recover(0, 5, Q)
    with pytest.raises(ValueError):
        cf_recover(7, 5, Q)
    with pytest.raises(ValueError):
        cf_recover(-3, 5, Q)


# ---------------------------------------------------------------------------
# pip_recover


def test_pip_recover_bezout_combination():
    q = 1024
    reg = Fraction(73, 10)
    r_plus = ApproxReal.from_fraction(reg, 48)
    y2 = round(2 * q * 3 / reg)
    y2p = round(2 * q * 5 / reg)
    got = pip_recover((777, y2), (4321, y2p), q, r_plus)
    assert got is not None
    s_prime, z2, z2p = got
    assert (z2, z2p) == (3, 5)
    # xgcd(3, 5) = (1, 2, -1), so the combined sample is (2*777 - 4321) mod 8q
    p = (2 * 777 - 4321) % (8 * q)
    expect = Fraction(p) * reg / (8 * q)
    assert abs(s_prime.value - expect) <= s_prime.err_bound
    assert s_prime.err_bound > 0


def test_pip_recover_gcd_failure():
    q = 1024
    reg = Fraction(73, 10)
    r_plus = ApproxReal.from_fraction(reg, 48)
    y2 = round(2 * q * 2 / reg)
    y2p = round(2 * q * 4 / reg)
    assert pip_recover((1, y2), (2, y2p), q, r_plus) is None


def test_pip_rounding_identity():
    q = 1 << 14
    reg = Fraction(41, 8)
    r_plus = ApproxReal.from_fraction(reg, 30)
    for z2 in range(1, 40):
        y2 = round(2 * q * z2 / reg)
        back = round(Fraction(y2) * r_plus.value / (2 * q))
        assert back == z2


def test_pip_recover_ties_to_even():
    # y2 * R / (2q) lands exactly on 20.5; round halves to even, so z2 = 20
    q = 2048
    reg = Fraction(41, 8)  # dyadic: from_fraction keeps it exact
    r_plus = ApproxReal.from_fraction(reg, 30)
    assert r_plus.value == reg
    y2 = 16384
    assert Fraction(y2) * reg / (2 * q) == Fraction(41, 2)
    y2p = round(2 * q * 3 / reg)
    got = pip_recover((5, y2), (9, y2p), q, r_plus)
    assert got is not None
    assert (got[1], got[2]) == (20, 3)


# ---------------------------------------------------------------------------
# anchored refinement


def test_refine_distance_pins_regulator():
    disc = Discriminant(97)
    budget = PrecisionBudget.for_walks(disc)
    exact, _ = _first_unit_return(disc, Fraction(40), 200)
    tol = Fraction(1, 1 << 30)
    coarse = Fraction(round(exact * 64), 64)  # candidate known to 1/64
    refined = refine_distance(unit_state(budget), coarse, tol)
    assert abs(refined.value - exact) <= tol + refined.err_bound
    assert refined.err_bound <= tol


def test_refine_distance_target_zero():
    disc = Discriminant(97)
    budget = PrecisionBudget.for_walks(disc)
    refined = refine_distance(unit_state(budget), Fraction(0), Fraction(1, 1 << 20))
    assert refined.value == 0


def test_refine_distance_validation():
    disc = Discriminant(97)
    budget = PrecisionBudget.for_walks(disc)
    with pytest.raises(ValueError):
        refine_distance(unit_state(budget), Fraction(1), Fraction(0))
    coarse_anchor = WalkState(
        unit_form(disc), ApproxReal(0, 20, Fraction(1, 16))
    )
    with pytest.raises(InfrastructureError):
        refine_distance(coarse_anchor, Fraction(1), Fraction(1, 1 << 10))


def test_first_unit_return_is_regulator():
    val, steps = _first_unit_return(Discriminant(40), Fraction(4), 160)
    assert abs(val - Fraction(36368929184641337, 10**16)) < Fraction(1, 10**12)
    assert steps == 2
    val8, _ = _first_unit_return(Discriminant(8), Fraction(2), 160)
    assert abs(val8 - Fraction(1762747174039086, 10**15)) < Fraction(1, 10**12)


def test_first_unit_return_respects_upper():
    # the 97 cycle does not close within distance 1, so the walk gives up
    assert _first_unit_return(Discriminant(97), Fraction(1), 160) is None


# ---------------------------------------------------------------------------
# result envelope


def test_recovery_result_dict_shape():
    value = ApproxReal.from_fraction(Fraction(7, 2), 20)
    out = RecoveryResult("regulator", value, (3, 7), 2).as_dict()
    assert out["kind"] == "regulator"
    assert out["value"] == 3.5
    assert out["z_pair"] == [3, 7]
    assert out["attempts"] == 2
    assert out["diagnostics"] == []
    empty = RecoveryResult("fail", None, None, 5).as_dict()
    assert empty["value"] is None
    assert empty["value_err_bound"] is None
    assert empty["z_pair"] is None
