"""Classical ground truth for the infrastructure.

Two independent routes to the narrow regulator:

* enumerate_cycle walks the full cycle of reduced principal forms, summing
  per-step logs at ~180 bits (mpmath), which also yields every form's exact
  cycle distance;
* regulator_classical solves the Pell equation by continued fractions,
  producing the exact fundamental unit as integers, and takes a single log.

Agreement of the two to far beyond all working tolerances is itself part of
the test suite.  The production distance arithmetic never touches mpmath;
it lives here and in the tests only.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from fractions import Fraction
from math import isqrt, log

import mpmath as mp

from .distance import ApproxReal
from .forms import (
    Discriminant,
    Form,
    _normalized,
    _rho_step,
    compose,
    is_reduced,
    orbit_key,
    reduce_form,
    reduced_forms,
    rho,
    to_positive_rep,
    unit_form,
)

DEFAULT_CYCLE_CAP = 10_000_000
_ENV_CYCLE_CAP = "INFRAQUAD_CYCLE_CAP"

_ORACLE_PREC = 180  # working bits for cycle sums
_ORACLE_FRAC_BITS = 140  # storage resolution of oracle distances


class CycleCapExceeded(RuntimeError):
    """The principal cycle walk hit its configured step cap."""

    def __init__(self, cap: int):
        super().__init__(f"principal cycle exceeded the step cap of {cap}")
        self.cap = cap


class OrderSearchExceeded(RuntimeError):
    """Class-order search ran past its cap without reaching the identity."""


def default_cycle_cap() -> int:
    raw = os.environ.get(_ENV_CYCLE_CAP)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return DEFAULT_CYCLE_CAP


@dataclass(frozen=True)
class PrincipalCycle:
    """The ordered positive reduced principal forms with exact distances."""

    disc: Discriminant
    forms: tuple[Form, ...]
    dists: tuple[ApproxReal, ...]
    regulator_narrow: ApproxReal
    rho_steps: int  # full cycle length counting both signs of a

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "_orbit_index",
            {orbit_key(f): i for i, f in enumerate(self.forms)},
        )

    def index_of(self, f: Form) -> int | None:
        return self._orbit_index.get(orbit_key(f))

    def true_dist(self, i: int) -> Fraction:
        return self.dists[i].value

    def dump_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for f, d in zip(self.forms, self.dists):
                fh.write(
                    json.dumps(
                        {
                            "a": f.a,
                            "b": f.b,
                            "c": f.c,
                            "dist_mantissa": d.mantissa,
                            "dist_frac_bits": d.frac_bits,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


def _mpf_to_approx(x, n_ops: int) -> ApproxReal:
    """Store an mpf at the oracle resolution with a conservative error claim."""
    m = int(mp.floor(mp.ldexp(x, _ORACLE_FRAC_BITS)))
    return ApproxReal(m, _ORACLE_FRAC_BITS, Fraction(n_ops + 4, 1 << 135))


def enumerate_cycle(disc: Discriminant, cap: int | None = None) -> PrincipalCycle:
    """Walk rho from the unit form all the way around the principal cycle."""
    if cap is None:
        cap = default_cycle_cap()
    d = disc.value
    s = disc.sqrt_floor
    u = unit_form(disc)
    forms = [u]
    with mp.workprec(_ORACLE_PREC):
        sqd = mp.sqrt(d)
        gap_floor = mp.mpf(443) / 1024  # same floor the walk ladder relies on
        cum = mp.mpf(0)
        dists = [mp.mpf(0)]
        a, b, c = u.triple
        steps = 0
        while True:
            for _ in range(2):  # two rho-steps return to positive a
                cum += mp.log((sqd + b) / (sqd - b)) / 2
                a, b, c = _rho_step(a, b, c, d, s)
                steps += 1
            if steps > cap:
                raise CycleCapExceeded(cap)
            if cum - dists[-1] <= gap_floor:
                raise RuntimeError("oracle successor gap violated its floor")
            if (a, b, c) == u.triple:
                break
            forms.append(Form(a, b, c, disc))
            dists.append(cum)
        regulator = cum
        out_dists = tuple(_mpf_to_approx(x, steps) for x in dists)
        reg = _mpf_to_approx(regulator, steps)
    cycle = PrincipalCycle(
        disc=disc,
        forms=tuple(forms),
        dists=out_dists,
        regulator_narrow=reg,
        rho_steps=steps,
    )
    if len({orbit_key(f) for f in cycle.forms}) != len(cycle.forms):
        raise RuntimeError("oracle cycle contains duplicate orbits")
    return cycle


def _continued_fraction_unit(n: int) -> tuple[int, int, int]:
    """Minimal (x, y, norm) with x^2 - n*y^2 = norm in {1, -1}, x, y > 0."""
    a0 = isqrt(n)
    if a0 * a0 == n:
        raise ValueError("square argument has no Pell solution")
    p_acc, q_acc, a = 0, 1, a0
    h_prev, h_cur = 1, a0
    k_prev, k_cur = 0, 1
    i = 0
    guard = 50 * a0 + 1000
    while True:
        p_acc = a * q_acc - p_acc
        q_acc = (n - p_acc * p_acc) // q_acc
        a = (a0 + p_acc) // q_acc
        i += 1
        if q_acc == 1:
            return h_cur, k_cur, (-1) ** i
        h_prev, h_cur = h_cur, a * h_cur + h_prev
        k_prev, k_cur = k_cur, a * k_cur + k_prev
        if i > guard:
            raise RuntimeError("continued fraction period ran past its guard")


def fundamental_unit(disc: Discriminant) -> tuple[int, int, int]:
    """(t, u, norm): the fundamental unit (t + u*sqrt(d))/2 > 1 of the order.

    For d = 0 (mod 4) this is the unit x + y*sqrt(d/4) rewritten over sqrt(d).
    For d = 1 (mod 4) the half-integral unit is found, when it exists, as the
    exact cube root of the minimal integral unit (unit index 1 or 3).
    """
    d = disc.value
    if d % 4 == 0:
        x, y, norm = _continued_fraction_unit(d // 4)
        return 2 * x, y, norm
    x, y, norm = _continued_fraction_unit(d)
    # search the only window that can hold a half-integral cube root:
    # eps = (t + u*sqrt(d))/2 with u = (eps - conj(eps))/sqrt(d), so
    # u lies within 1 of cbrt(eta)/sqrt(d)
    with mp.workprec(4 * x.bit_length() // 3 + 80):
        eta = x + y * mp.sqrt(d)
        u_est = int(mp.floor(mp.cbrt(eta) / mp.sqrt(d)))
    for uu in range(max(1, u_est - 3), u_est + 5):
        if uu % 2 == 0:
            continue
        for norm_c in (1, -1):
            tt_sq = d * uu * uu + 4 * norm_c
            if tt_sq <= 0:
                continue
            tt = isqrt(tt_sq)
            if tt * tt != tt_sq or tt % 2 == 0:
                continue
            # exact check: ((tt + uu*sqrt(d))/2)^3 == x + y*sqrt(d); units in
            # the window that are not the cube root (possible at tiny d, where
            # the window is wide relative to the unit ladder) fail it
            if (
                tt**3 + 3 * tt * uu * uu * d == 8 * x
                and 3 * tt * tt * uu + uu**3 * d == 8 * y
            ):
                return tt, uu, norm_c
    return 2 * x, 2 * y, norm


def regulator_classical(disc: Discriminant, target_err) -> ApproxReal:
    """|result - narrow regulator| <= target_err, via the exact Pell unit."""
    target_err = Fraction(target_err)
    if target_err <= 0:
        raise ValueError("target error must be positive")
    t, u, norm = fundamental_unit(disc)
    bits_needed = (
        target_err.denominator.bit_length() - target_err.numerator.bit_length() + 2
    )
    out_bits = max(bits_needed + 20, 64)
    with mp.workprec(out_bits + t.bit_length() + 60):
        eps = (t + u * mp.sqrt(disc.value)) / 2
        reg = mp.log(eps)
        if norm == -1:
            reg *= 2
        mantissa = int(mp.floor(mp.ldexp(reg, out_bits)))
    return ApproxReal(mantissa, out_bits, target_err)


def regulator_float(disc: Discriminant) -> float:
    """Quick float narrow regulator via the exact Pell unit."""
    t, u, norm = fundamental_unit(disc)
    with mp.workprec(64):
        reg = mp.log((t + u * mp.sqrt(disc.value)) / 2)
    return float(reg) * (2 if norm == -1 else 1)


def scan_discriminants(
    start: int, stop: int, min_ratio: float = 0.0, limit: int | None = None
) -> list[tuple[int, float]]:
    """Valid discriminants in [start, stop) with R+ / ln d >= min_ratio,
    ascending, as (d, R+ float) pairs; optionally capped at `limit` hits."""
    out: list[tuple[int, float]] = []
    for d in range(max(start, 5), stop):
        if d % 4 not in (0, 1) or isqrt(d) ** 2 == d:
            continue
        disc = Discriminant(d)
        reg = regulator_float(disc)
        if reg >= min_ratio * log(d):
            out.append((d, reg))
            if limit is not None and len(out) >= limit:
                break
    return out


def principal_test_bruteforce(
    g: Form, cycle: PrincipalCycle | None = None, cap: int | None = None
) -> tuple[bool, ApproxReal | None]:
    """Membership of g's orbit in the principal cycle, with its exact distance."""
    if cycle is None:
        cycle = enumerate_cycle(g.disc, cap)
    f = g if is_reduced(g) else reduce_form(g)[0]
    f = to_positive_rep(f)
    idx = cycle.index_of(f)
    if idx is None:
        return False, None
    return True, cycle.dists[idx]


def order_and_s(
    g: Form,
    cycle: PrincipalCycle | None = None,
    cap: int | None = None,
    order_cap: int = 100_000,
) -> tuple[int, ApproxReal]:
    """Order n of g's class and the cycle position S of the ideal g^n.

    S is the exact product ideal's position, not its reduced representative's:
    the signed log distances spent re-reducing each product are accumulated
    and subtracted from the representative's cycle distance, modulo the
    regulator.  The value lattice of the two-variable walk is periodic under
    exactly this S; the representative's own position differs from it by the
    corrections and would not close the lattice.  For reduced principal g the
    result is g's own cycle distance, correction-free.
    """
    if cycle is None:
        cycle = enumerate_cycle(g.disc, cap)
    d = g.disc.value
    s = g.disc.sqrt_floor
    base = to_positive_rep(g if is_reduced(g) else reduce_form(g)[0])
    acc = base
    n = 1
    with mp.workprec(_ORACLE_PREC):
        sqd = mp.sqrt(d)
        corr = mp.mpf(0)
        steps = 0
        while True:
            ok, dist = principal_test_bruteforce(acc, cycle)
            if ok:
                assert dist is not None
                if steps == 0:
                    return n, dist
                sign, man, exp, _ = mp.mpf(corr)._mpf_
                corr_frac = Fraction(-man if sign else man) * Fraction(2) ** exp
                pos = (dist.value - corr_frac) % cycle.regulator_narrow.value
                base_approx = ApproxReal.from_fraction(pos, _ORACLE_FRAC_BITS)
                err = base_approx.err_bound + Fraction(steps + 8, 1 << 135)
                return n, ApproxReal(base_approx.mantissa, _ORACLE_FRAC_BITS, err)
            raw = _normalized(compose(acc, base))
            a, b, c = raw.triple
            guard = 2 * max(abs(a), abs(c), 2).bit_length() + 64
            while not is_reduced(Form(a, b, c, g.disc)):
                # |b| can exceed sqrt(d) on unreduced intermediates; the step
                # value is ln of the magnitude ratio, signed by which side of
                # 1 it falls on, same as the production walk arithmetic
                corr += mp.log(abs(sqd + b) / abs(sqd - b)) / 2
                a, b, c = _rho_step(a, b, c, d, s)
                steps += 1
                if steps > guard * n:
                    raise OrderSearchExceeded("power reduction exceeded its step cap")
            acc = Form(a, b, c, g.disc)
            if acc.a < 0:
                corr += mp.log(abs(sqd + acc.b) / abs(sqd - acc.b)) / 2
                acc = rho(acc)
                steps += 1
            n += 1
            if n > order_cap:
                raise OrderSearchExceeded(f"class order search passed {order_cap}")


def form_classes(disc: Discriminant) -> list[list[Form]]:
    """All reduced forms partitioned into rho-cycles (one cycle per class)."""
    todo = {orbit_key(f): f for f in reduced_forms(disc)}
    classes = []
    while todo:
        _, start = todo.popitem()
        cyc = [start]
        cur = rho(start)
        while orbit_key(cur) != orbit_key(start):
            todo.pop(orbit_key(cur), None)
            cyc.append(cur)
            cur = rho(cur)
        classes.append(cyc)
    classes.sort(key=lambda c: (len(c), c[0].triple))
    return classes


def class_count(disc: Discriminant) -> int:
    return len(form_classes(disc))
