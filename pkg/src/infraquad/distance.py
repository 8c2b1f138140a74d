"""Certified fixed-point distances and infrastructure walks.

All real quantities live in ApproxReal: a dyadic mantissa/frac_bits pair plus
an exact rational error bound that is propagated conservatively through every
operation.  The natural log is evaluated by a deterministic integer-only
algorithm (power-of-two argument reduction + truncating atanh series), so the
same input always yields the same bits; each call certifies its own arithmetic
error against the requested precision before returning.

Walks over the cycle of reduced forms accumulate per-step distances
(1/2)*ln(|sqrt(d)+b| / |sqrt(d)-b|), signed by b, which also covers the
correction terms picked up while re-reducing a composite.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import isqrt, log

from .forms import (
    Discriminant,
    Form,
    _normalized,
    _rho_step,
    compose,
    is_reduced,
    require_positive_reduced,
    require_reduced,
    rho,
    rho_inv,
    unit_form,
)

ONE_EIGHTH = Fraction(1, 8)
# conservative dyadic stand-in for ln 2 - 1/4 = 0.4431...; successor gaps must clear it
_DOUBLE_STEP_FLOOR = Fraction(443, 1024)
# anchoring walks are one principal lap; this caps runaway cycles, not honest ones
_ANCHOR_STEP_CAP = 1 << 22


class SizingError(ValueError):
    """Input outside the budget's sizing contract (negative or above x_max)."""


class InfrastructureError(RuntimeError):
    """A walk guardrail failed: a distance left its proven range."""


@dataclass(frozen=True, slots=True)
class ApproxReal:
    """value = mantissa / 2^frac_bits, |value - true| <= err_bound (exact)."""

    mantissa: int
    frac_bits: int
    err_bound: Fraction

    @property
    def value(self) -> Fraction:
        return Fraction(self.mantissa, 1 << self.frac_bits)

    def __float__(self) -> float:
        return float(self.value)

    @classmethod
    def zero(cls, frac_bits: int) -> "ApproxReal":
        return cls(0, frac_bits, Fraction(0))

    @classmethod
    def from_fraction(cls, x: Fraction, frac_bits: int) -> "ApproxReal":
        x = Fraction(x)
        m = (x.numerator << frac_bits) // x.denominator
        err = abs(x - Fraction(m, 1 << frac_bits))
        return cls(m, frac_bits, err)

    def _pair(self, other: "ApproxReal") -> tuple[int, int, int]:
        fb = max(self.frac_bits, other.frac_bits)
        return (
            self.mantissa << (fb - self.frac_bits),
            other.mantissa << (fb - other.frac_bits),
            fb,
        )

    def __add__(self, other: "ApproxReal") -> "ApproxReal":
        m1, m2, fb = self._pair(other)
        return ApproxReal(m1 + m2, fb, self.err_bound + other.err_bound)

    def __sub__(self, other: "ApproxReal") -> "ApproxReal":
        m1, m2, fb = self._pair(other)
        return ApproxReal(m1 - m2, fb, self.err_bound + other.err_bound)

    def __neg__(self) -> "ApproxReal":
        return ApproxReal(-self.mantissa, self.frac_bits, self.err_bound)

    def scale_int(self, n: int) -> "ApproxReal":
        return ApproxReal(self.mantissa * n, self.frac_bits, self.err_bound * abs(n))

    def half(self) -> "ApproxReal":
        err = self.err_bound / 2
        if self.mantissa % 2:
            err += Fraction(1, 1 << (self.frac_bits + 1))
        return ApproxReal(self.mantissa >> 1, self.frac_bits, err)

    def abs(self) -> "ApproxReal":
        return ApproxReal(abs(self.mantissa), self.frac_bits, self.err_bound)

    # ordering is on represented values, ignoring error bounds
    def __lt__(self, other: "ApproxReal") -> bool:
        m1, m2, _ = self._pair(other)
        return m1 < m2

    def __le__(self, other: "ApproxReal") -> bool:
        m1, m2, _ = self._pair(other)
        return m1 <= m2

    def to_text(self) -> str:
        return f"{self.mantissa} p {self.frac_bits}"

    @classmethod
    def from_text(cls, text: str, err_bound: Fraction = Fraction(0)) -> "ApproxReal":
        m_txt, sep, f_txt = text.partition(" p ")
        if not sep:
            raise ValueError("dyadic text must look like 'mantissa p frac_bits'")
        return cls(int(m_txt), int(f_txt), err_bound)


def _precision_bits(precision: Fraction) -> int:
    """Smallest k with 2^-k <= precision."""
    if precision <= 0:
        raise ValueError("precision must be positive")
    k = precision.denominator.bit_length() - precision.numerator.bit_length()
    while Fraction(1, 1 << max(k, 0)) > precision:
        k += 1
    while k > 0 and Fraction(1, 1 << (k - 1)) <= precision:
        k -= 1
    return max(k, 0)


_LN2_SCALED_CACHE: dict[int, int] = {}


def _atanh_scaled(z_int: int, width: int) -> int:
    """sum z^(2k+1)/(2k+1) with truncating fixed-point ops at scale 2^width.

    Requires z_int <= 2^width / 3 (series argument in [0, 1/3]); the result
    under-estimates the true scaled value by at most 3*terms + 2.
    """
    terms = width // 3 + 4
    z2 = (z_int * z_int) >> width
    acc = 0
    zpow = z_int
    for k in range(terms):
        acc += zpow // (2 * k + 1)
        zpow = (zpow * z2) >> width
    return acc


def _ln2_scaled(width: int) -> int:
    got = _LN2_SCALED_CACHE.get(width)
    if got is None:
        got = 2 * _atanh_scaled((1 << width) // 3, width)
        _LN2_SCALED_CACHE[width] = got
    return got


def approx_ln(x, precision) -> ApproxReal:
    """Deterministic ln(x) with |result - ln x| <= precision, err_bound = precision."""
    x = Fraction(x)
    precision = Fraction(precision)
    if x <= 0:
        raise ValueError("logarithm argument must be positive")
    out_bits = _precision_bits(precision) + 2

    # exact exponent e with 2^e <= x < 2^(e+1)
    e = x.numerator.bit_length() - x.denominator.bit_length()
    if Fraction(2) ** e > x:
        e -= 1
    if Fraction(2) ** (e + 1) <= x:
        e += 1

    width = out_bits + 40 + max(abs(e), 1).bit_length()
    m = x / Fraction(2) ** e  # in [1, 2)
    z = (m - 1) / (m + 1)  # in [0, 1/3]
    z_int = (z.numerator << width) // z.denominator
    total = 2 * _atanh_scaled(z_int, width) + e * _ln2_scaled(width)
    mantissa = total >> (width - out_bits)

    terms = width // 3 + 4
    arith_err = Fraction((1 + abs(e)) * (6 * terms + 4), 1 << width) + Fraction(
        1, 1 << out_bits
    )
    assert arith_err <= precision, "internal ln error bound exceeded request"
    return ApproxReal(mantissa, out_bits, precision)


def _signed_step_value(b: int, d: int, precision: Fraction) -> ApproxReal:
    """(1/2)*ln(|sqrt(d)+b| / |sqrt(d)-b|); negative for b < 0."""
    if b == 0:
        return ApproxReal(0, _precision_bits(precision) + 2, precision)
    width = max(
        _precision_bits(precision) + abs(b).bit_length() + 18, d.bit_length() + 2
    )
    while True:
        st = isqrt(d << (2 * width))
        bs = b << width
        p_num = abs(st + bs)
        q_num = abs(st - bs)
        if q_num != 0 and p_num != 0:
            break
        width += 16
    val = approx_ln(Fraction(p_num, q_num), precision).half()
    # sqrt truncation feeds through |d/ds| = |b|/|s^2-b^2| with |d - b^2| >= 4
    sqrt_err = Fraction(abs(b), 1 << width)
    return ApproxReal(val.mantissa, val.frac_bits, val.err_bound + sqrt_err)


def step_distance(f: Form, precision) -> ApproxReal:
    """Distance advanced by one rho-step from reduced f; in (0, ln sqrt(d))."""
    require_reduced(f)
    precision = Fraction(precision)
    d = f.disc.value
    val = _signed_step_value(f.b, d, precision)
    if val.mantissa <= 0:
        raise InfrastructureError("reduced step distance must be positive")
    # (sqrt(d)+b)/(sqrt(d)-b) < d  <=>  step < ln(sqrt(d)); exact in integers:
    # sqrt(d)(d-1) > b(d+1)  <=>  d*(d-1)^2 > b^2*(d+1)^2
    if d * (d - 1) ** 2 <= f.b * f.b * (d + 1) ** 2:
        raise InfrastructureError("reduced step distance must stay below ln sqrt(d)")
    return val


@dataclass(frozen=True, slots=True)
class PrecisionBudget:
    """Sizes every log evaluation so a whole walk stays within 1/8 error."""

    disc: Discriminant
    delta_bits: int
    op_count_bound: int
    per_log_precision: Fraction
    frac_bits: int
    x_max: int
    relaxed: bool = False

    def __post_init__(self) -> None:
        if self.per_log_precision * self.op_count_bound > ONE_EIGHTH:
            raise ValueError("per-log precision too coarse for the operation bound")

    @classmethod
    def for_walks(
        cls, disc: Discriminant, x_max: int | None = None, relaxed: bool = False
    ) -> "PrecisionBudget":
        if x_max is None:
            x_max = disc.value * disc.value
        bits_l = disc.value.bit_length()
        ops = (2 * x_max.bit_length() + 8) * (bits_l + 6) + 4 * bits_l + 64
        k = ops.bit_length()
        return cls(
            disc=disc,
            delta_bits=bits_l,
            op_count_bound=ops,
            per_log_precision=Fraction(1, 1 << (k + 33)),
            frac_bits=max(64, k + 40),
            x_max=x_max,
            relaxed=relaxed,
        )

    @classmethod
    def for_tabulation(
        cls, disc: Discriminant, q: int, two_d: bool = False, relaxed: bool = False
    ) -> "PrecisionBudget":
        bits_l = disc.value.bit_length()
        if two_d:
            ops = q * (bits_l + 8) + q * q + 4 * bits_l + 256
        else:
            ops = 4 * q + (2 * q.bit_length() + 8) * (bits_l + 6) + 256
        k = ops.bit_length()
        return cls(
            disc=disc,
            delta_bits=bits_l,
            op_count_bound=ops,
            per_log_precision=Fraction(1, 1 << (k + 33)),
            frac_bits=max(64, k + 40),
            x_max=max(disc.value * disc.value, 4 * q),
            relaxed=relaxed,
        )

    def check_x(self, x: int) -> None:
        if x < 0:
            raise SizingError("walk target must be non-negative")
        if x > self.x_max and not self.relaxed:
            raise SizingError(
                f"walk target {x} exceeds the sizing bound {self.x_max}"
            )


@dataclass(frozen=True, slots=True)
class WalkState:
    """A positive reduced form with its accumulated approximate distance."""

    form: Form
    dist: ApproxReal

    def __post_init__(self) -> None:
        if self.dist.err_bound >= ONE_EIGHTH:
            raise InfrastructureError("walk distance error bound reached 1/8")


# per-form step distances, shared by every walk strategy so the same form
# always carries the same increment bits: {(d, per_log): {(a, b): ApproxReal}}
_STEP_CACHE: dict[tuple[int, Fraction], dict[tuple[int, int], ApproxReal]] = {}


def cached_step(f: Form, per_log: Fraction) -> ApproxReal:
    table = _STEP_CACHE.setdefault((f.disc.value, per_log), {})
    key = (f.a, f.b)
    got = table.get(key)
    if got is None:
        got = step_distance(f, per_log)
        table[key] = got
    return got


def unit_state(budget: PrecisionBudget) -> WalkState:
    return WalkState(unit_form(budget.disc), ApproxReal.zero(budget.frac_bits))


def giant_step(s1: WalkState, s2: WalkState, budget: PrecisionBudget) -> WalkState:
    """compose-then-reduce with the reduction corrections tracked exactly."""
    d = budget.disc.value
    f = compose(s1.form, s2.form)
    g = _normalized(f)
    correction = ApproxReal.zero(budget.frac_bits)
    a, b, c = g.triple
    s = budget.disc.sqrt_floor
    guard = 4 * max(abs(a), 2).bit_length() + 64
    steps = 0
    while not (
        b > 0 and b * b < d and (2 * abs(a) + b) ** 2 > d
        and (2 * abs(a) - b < 0 or (2 * abs(a) - b) ** 2 < d)
    ):
        correction = correction + _signed_step_value(b, d, budget.per_log_precision)
        a, b, c = _rho_step(a, b, c, d, s)
        steps += 1
        if steps > guard:
            raise InfrastructureError("post-composition reduction exceeded its cap")
    g = Form(a, b, c, budget.disc)
    if g.a < 0:
        correction = correction + cached_step(g, budget.per_log_precision)
        g = rho(g)
    # the correction is provably within +-ln(d); allow slack for approximation
    if abs(float(correction)) > log(d) + 0.5:
        raise InfrastructureError("reduction correction left its +-ln(d) range")
    return WalkState(g, s1.dist + s2.dist + correction)


@lru_cache(maxsize=64)
def _ladder_base(budget: PrecisionBudget) -> WalkState:
    u = unit_form(budget.disc)
    f1 = rho(u)
    h = rho(f1)
    dist = cached_step(u, budget.per_log_precision) + cached_step(
        f1, budget.per_log_precision
    )
    return WalkState(h, dist)


_LADDERS: dict[PrecisionBudget, list[WalkState]] = {}


def _ladder(budget: PrecisionBudget, target: Fraction) -> list[WalkState]:
    """Base-step doublings h, h^2, h^4, ... with dist <= target."""
    rungs = _LADDERS.setdefault(budget, [_ladder_base(budget)])
    while rungs[-1].dist.value <= target:
        rungs.append(giant_step(rungs[-1], rungs[-1], budget))
    return [r for r in rungs if r.dist.value <= target]


def _advance_to(state: WalkState, target: Fraction, budget: PrecisionBudget) -> WalkState:
    """Last position (by rho^2 steps) whose accumulated distance is <= target."""
    per_log = budget.per_log_precision
    gap = target - state.dist.value
    if gap > 0:
        for rung in reversed(_ladder(budget, gap)):
            if state.dist.value + rung.dist.value > target:
                continue
            cand = giant_step(state, rung, budget)
            if cand.dist.value <= target:
                state = cand
    # linear tail: rho^2 with canonical per-form increments
    guard = 6 * budget.delta_bits + 24
    steps = 0
    while True:
        mid = rho(state.form)
        inc = cached_step(state.form, per_log) + cached_step(mid, per_log)
        if inc.value <= _DOUBLE_STEP_FLOOR:
            raise InfrastructureError("successor gap fell under its ln2 floor")
        cand_dist = state.dist + inc
        if cand_dist.value > target:
            return state
        state = WalkState(rho(mid), cand_dist)
        steps += 1
        if steps > guard:
            raise InfrastructureError("linear walk tail exceeded its step cap")


def form_left_of(x_quarters: int, budget: PrecisionBudget) -> WalkState:
    """The last positive reduced principal form at distance <= x/4."""
    budget.check_x(x_quarters)
    return _advance_to(unit_state(budget), Fraction(x_quarters, 4), budget)


_ANCHORS: dict[tuple[PrecisionBudget, Form], ApproxReal] = {}


def anchor_dist(g: Form, budget: PrecisionBudget) -> ApproxReal:
    """Distance of g on the principal cycle, by walking from the unit form.

    Off-cycle forms anchor at zero: without a principal representative their
    distance is only defined relative to other forms of the same class, and
    every consumer here needs just that relative structure.
    """
    require_positive_reduced(g)
    key = (budget, g)
    got = _ANCHORS.get(key)
    if got is not None:
        return got
    unit = unit_form(budget.disc)
    per_log = budget.per_log_precision
    state = unit_state(budget)
    dist = state.dist
    cur = unit
    found = ApproxReal.zero(budget.frac_bits) if g == unit else None
    steps = 0
    while found is None:
        mid = rho(cur)
        inc = cached_step(cur, per_log) + cached_step(mid, per_log)
        if inc.value <= _DOUBLE_STEP_FLOOR:
            raise InfrastructureError("successor gap fell under its ln2 floor")
        cur = rho(mid)
        dist = dist + inc
        steps += 1
        if cur == g:
            found = dist
        elif cur == unit:
            found = ApproxReal.zero(budget.frac_bits)
        elif steps > _ANCHOR_STEP_CAP:
            raise InfrastructureError("anchoring walk exceeded its step cap")
    _ANCHORS[key] = found
    return found


def _power_state(g: Form, x: int, budget: PrecisionBudget) -> WalkState:
    """Reduced representative of g^x with the pure correction total.

    The dist field starts at zero for the base, so after the ladder it is the
    sum of every reduction correction: the landed representative sits at that
    (signed, small) offset from the exact product ideal g^x on its own class
    cycle.  That offset is what class-relative walks need.
    """
    require_positive_reduced(g)
    if x < 0:
        raise SizingError("exponent must be non-negative")
    if x == 0:
        return unit_state(budget)
    base = WalkState(g, ApproxReal.zero(budget.frac_bits))
    state = base
    for bit_pos in range(x.bit_length() - 2, -1, -1):
        state = giant_step(state, state, budget)
        if (x >> bit_pos) & 1:
            state = giant_step(state, base, budget)
    return state


def power_form(g: Form, x: int, budget: PrecisionBudget) -> WalkState:
    """Reduced positive representative of g^x with accumulated distance.

    The base form carries its own cycle distance, and corrections from every
    compose-then-reduce are included, so the result's distance tracks the
    landed representative exactly (winding included).
    """
    state = _power_state(g, x, budget)
    if x == 0:
        return state
    return WalkState(state.form, anchor_dist(g, budget).scale_int(x) + state.dist)


def _retreat_to(state: WalkState, target: Fraction, budget: PrecisionBudget) -> WalkState:
    """Last position at accumulated distance <= target, walking backward."""
    per_log = budget.per_log_precision
    # every rho^2 step retreats at least the ln2 floor, so 4 steps per unit
    # of gap is a safe cap; the flat term covers tiny gaps
    guard = 4 * (int(state.dist.value - target) + 1) + 6 * budget.delta_bits + 24
    steps = 0
    while state.dist.value > target:
        mid = rho_inv(state.form)
        prev = rho_inv(mid)
        inc = cached_step(prev, per_log) + cached_step(mid, per_log)
        if inc.value <= _DOUBLE_STEP_FLOOR:
            raise InfrastructureError("successor gap fell under its ln2 floor")
        state = WalkState(prev, state.dist - inc)
        steps += 1
        if steps > guard:
            raise InfrastructureError("backward walk exceeded its step cap")
    return state


def pip_eval(g: Form, x: int, y: int, budget: PrecisionBudget) -> WalkState:
    """Last form of g^x's class at distance <= pos(g^x) + y/4.

    The x-axis position is the exact product ideal's, not its reduced
    representative's: the representative drifts from x * dist(g) by the
    reduction corrections, which at desk scale alias away the value lattice
    spanned by (n, -4*dist(g^n)) and (0, 4R) that the recovery step reads
    off.  The walk therefore starts at the representative and moves by the
    negated correction total plus y/4, staying on the class cycle (giant
    steps against principal rungs preserve the class).  For non-principal g
    the positions are class-relative; for principal g they agree with the
    principal-cycle positions modulo the period.
    """
    if x < 0 or y < 0:
        raise SizingError("walk inputs must be non-negative")
    budget.check_x(y)
    rep = _power_state(g, x, budget)
    start = WalkState(rep.form, ApproxReal.zero(budget.frac_bits))
    target = Fraction(y, 4) - rep.dist.value
    if target >= 0:
        return _advance_to(start, target, budget)
    return _retreat_to(start, target, budget)
