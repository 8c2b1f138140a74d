"""Exhaustive form-arithmetic checks over a fixed family of discriminants."""

import pytest

from infraquad.forms import (
    Discriminant,
    Form,
    FormError,
    compose,
    format_form,
    is_reduced,
    orbit_equal,
    orbit_key,
    parse_form,
    reduce_form,
    reduced_forms,
    rho,
    rho_inv,
    to_positive_rep,
    unit_form,
)

DISCS = [5, 8, 12, 13, 17, 21, 24, 28, 29, 33, 40, 41, 44, 60]


@pytest.fixture(params=DISCS, ids=lambda d: f"d{d}")
def disc(request):
    return Discriminant(request.param)


def test_reduced_enumeration_is_exhaustive(disc):
    found = reduced_forms(disc)
    assert found, "every real quadratic discriminant has reduced forms"
    seen = {f.triple for f in found}
    assert len(seen) == len(found)
    # brute force over the coefficient box that contains all reduced forms
    d, s = disc.value, disc.sqrt_floor
    for b in range(1, s + 1):
        if (d - b * b) % 4:
            continue
        ac = (b * b - d) // 4
        for a in range(-s - 1, s + 2):
            if a == 0 or ac % a:
                continue
            f = Form(a, b, ac // a, disc) if _primitive(a, b, ac // a) else None
            if f is not None and is_reduced(f):
                assert f.triple in seen
    for f in found:
        assert is_reduced(f)
        assert f.b * f.b - 4 * f.a * f.c == d


def _primitive(a, b, c):
    from math import gcd

    return gcd(gcd(a, b), c) == 1


def test_rho_round_trip_and_sign_alternation(disc):
    for f in reduced_forms(disc):
        g = rho(f)
        assert g.disc == disc
        assert is_reduced(g)
        assert (g.a > 0) != (f.a > 0), "leading coefficient alternates sign"
        assert rho_inv(g) == f
        assert rho(rho_inv(f)) == f


def test_cycles_close_and_partition(disc):
    remaining = {f.triple: f for f in reduced_forms(disc)}
    while remaining:
        _, start = remaining.popitem()
        cur = rho(start)
        length = 1
        while cur != start:
            remaining.pop(cur.triple, None)
            cur = rho(cur)
            length += 1
            assert length <= 10_000, "cycle failed to close"
        assert length % 2 == 0, "sign alternation forces even cycle length"


def test_compose_lands_reduced_with_same_disc(disc):
    forms = reduced_forms(disc)
    unit = unit_form(disc)
    for f in forms[:8]:
        g, steps = reduce_form(compose(f, unit))
        assert is_reduced(g)
        assert g.disc == disc
        assert steps >= 0
        # composing with the unit stays in the class
        h = g
        same = False
        for _ in range(2 * len(forms) + 2):
            if orbit_equal(h, f):
                same = True
                break
            h = rho(h)
        assert same


def test_unit_form_is_principal_and_reduced(disc):
    u = unit_form(disc)
    assert u.a == 1
    assert is_reduced(u)
    assert u.b <= disc.sqrt_floor
    assert (u.b - disc.value) % 2 == 0


def test_reduce_form_is_identity_on_reduced(disc):
    for f in reduced_forms(disc)[:6]:
        g, steps = reduce_form(f)
        assert g == f
        assert steps == 0


def test_to_positive_rep(disc):
    for f in reduced_forms(disc):
        g = to_positive_rep(f)
        assert g.a > 0
        assert is_reduced(g)
        assert g == f or g == rho(f)
        assert orbit_key(g) == orbit_key(to_positive_rep(g))


def test_reduce_form_handles_large_coefficients():
    disc = Discriminant(40)
    f = Form(3, 4, -2, disc)
    big = compose(compose(f, f), compose(f, f))
    g, steps = reduce_form(big)
    assert is_reduced(g)
    assert steps <= 2 * max(abs(big.a), abs(big.c)).bit_length() + 64


def test_composition_example_reduces_into_principal_cycle():
    disc = Discriminant(8)
    f = Form(1, 2, -1, disc)
    g, _ = reduce_form(compose(f, f))
    assert g.triple in {(1, 2, -1), (-1, 2, 1)}


@pytest.mark.parametrize("value", [7, 9, 16, 0, -4, 2])
def test_invalid_discriminants_rejected(value):
    with pytest.raises(FormError):
        Discriminant(value)


def test_form_validation():
    disc = Discriminant(40)
    with pytest.raises(FormError):
        Form(1, 2, -1, disc)  # wrong discriminant
    with pytest.raises(FormError):
        Form(2, 4, -2, Discriminant(48))  # imprimitive


def test_format_parse_round_trip():
    f = Form(3, 4, -2, Discriminant(40))
    assert parse_form(format_form(f)) == f
    with pytest.raises(FormError):
        parse_form("3,4,-2")
    with pytest.raises(FormError):
        parse_form("40:3,4")
