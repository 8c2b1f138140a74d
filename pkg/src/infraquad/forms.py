"""Exact integer arithmetic on indefinite binary quadratic forms.

A form (a, b, c) of positive non-square discriminant d = b^2 - 4ac stands in
for a reduced ideal of the real quadratic order O_d.  Everything here is pure
integer arithmetic; inequalities against sqrt(d) are decided by squaring with
sign case analysis, never through floats.  Since d is never a perfect square,
no comparison against sqrt(d) can tie.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd, isqrt


class FormError(ValueError):
    """Invariant violation in a discriminant or form; message names the invariant."""


@dataclass(frozen=True, slots=True)
class Discriminant:
    """Positive integer d with d = 0 or 1 (mod 4) that is not a perfect square."""

    value: int

    def __post_init__(self) -> None:
        v = self.value
        if not isinstance(v, int) or isinstance(v, bool):
            raise FormError("discriminant must be an integer")
        if v <= 0:
            raise FormError("discriminant must be positive")
        if v % 4 not in (0, 1):
            raise FormError("discriminant must be congruent to 0 or 1 (mod 4)")
        if isqrt(v) ** 2 == v:
            raise FormError("discriminant must not be a perfect square")

    @property
    def sqrt_floor(self) -> int:
        return isqrt(self.value)

    def __int__(self) -> int:
        return self.value

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True, slots=True)
class Form:
    """Primitive integral form a*X^2 + b*X*Y + c*Y^2 with b^2 - 4ac = disc."""

    a: int
    b: int
    c: int
    disc: Discriminant

    def __post_init__(self) -> None:
        if self.b * self.b - 4 * self.a * self.c != self.disc.value:
            raise FormError("b^2 - 4ac must equal the discriminant")
        if gcd(gcd(self.a, self.b), self.c) != 1:
            raise FormError("coefficients must be coprime")

    @property
    def triple(self) -> tuple[int, int, int]:
        return (self.a, self.b, self.c)

    def __str__(self) -> str:
        return format_form(self)


def is_reduced(f: Form) -> bool:
    """True iff |sqrt(d) - 2|a|| < b < sqrt(d), decided exactly."""
    d = f.disc.value
    b = f.b
    if b <= 0 or b * b >= d:
        return False
    ta = 2 * abs(f.a)
    # |sqrt(d) - ta| < b  <=>  (ta + b)^2 > d  and  (ta - b < 0 or (ta - b)^2 < d)
    if (ta + b) ** 2 <= d:
        return False
    lo = ta - b
    return lo < 0 or lo * lo < d


def is_positive_reduced(f: Form) -> bool:
    return f.a > 0 and is_reduced(f)


def require_reduced(f: Form) -> Form:
    if not is_reduced(f):
        raise FormError("form must be reduced")
    return f


def require_positive_reduced(f: Form) -> Form:
    if not is_positive_reduced(f):
        raise FormError("form must be reduced with positive first coefficient")
    return f


def unit_form(disc: Discriminant) -> Form:
    """The reduced principal form with a = 1 (the walk origin)."""
    d = disc.value
    s = disc.sqrt_floor
    b = s if (s - d) % 2 == 0 else s - 1
    return Form(1, b, (b * b - d) // 4, disc)


def _select_b(residue_of: int, modulus_coeff: int, d: int, s: int) -> int:
    """Unique B = residue_of (mod 2|modulus_coeff|) in the reduction window.

    Window is (sqrt(d) - 2|t|, sqrt(d)) when t^2 < d, else (-|t|, |t|].
    """
    t = abs(modulus_coeff)
    m2 = 2 * t
    r = residue_of % m2
    if t * t < d:
        return s - ((s - r) % m2)
    return r if r <= t else r - m2


def _rho_step(a: int, b: int, c: int, d: int, s: int) -> tuple[int, int, int]:
    big_b = _select_b(-b, c, d, s)
    num = big_b * big_b - d
    q4 = 4 * c
    assert num % q4 == 0
    return (c, big_b, num // q4)


def rho(f: Form) -> Form:
    """Advance one position along the cycle of reduced forms."""
    require_reduced(f)
    a, b, c = _rho_step(f.a, f.b, f.c, f.disc.value, f.disc.sqrt_floor)
    return Form(a, b, c, f.disc)


def rho_inv(f: Form) -> Form:
    """Inverse step: rho(rho_inv(f)) == f for reduced f."""
    require_reduced(f)
    d = f.disc.value
    big_b = _select_b(-f.b, f.a, d, f.disc.sqrt_floor)
    q4 = 4 * f.a
    num = big_b * big_b - d
    assert num % q4 == 0
    return Form(num // q4, big_b, f.a, f.disc)


def _normalized(f: Form) -> Form:
    """Translate b into the reduction window for a; a Gamma-move of distance zero."""
    d = f.disc.value
    b = _select_b(f.b, f.a, d, f.disc.sqrt_floor)
    if b == f.b:
        return f
    c = (b * b - d) // (4 * f.a)
    assert b * b - 4 * f.a * c == d
    return Form(f.a, b, c, f.disc)


def reduce_form(f: Form) -> tuple[Form, int]:
    """Equivalent reduced form plus the number of rho-steps spent.

    The initial b-normalization is not counted (it moves distance zero);
    each subsequent rho application counts one step.  For |a| > sqrt(d) the
    count stays within log2(|a|/sqrt(d)) + 2.
    """
    if is_reduced(f):
        return f, 0
    d = f.disc.value
    s = f.disc.sqrt_floor
    g = _normalized(f)
    a, b, c = g.triple
    steps = 0
    # |c| at least halves per step while |c| > sqrt(d), so this terminates fast
    cap = 2 * max(abs(a), abs(c), 2).bit_length() + 64
    while True:
        gf = Form(a, b, c, f.disc)
        if is_reduced(gf):
            return gf, steps
        a, b, c = _rho_step(a, b, c, d, s)
        steps += 1
        if steps > cap:
            raise FormError("reduction failed to terminate within its step cap")


def _xgcd(x: int, y: int) -> tuple[int, int, int]:
    """(g, u, v) with u*x + v*y = g = gcd(x, y), g >= 0."""
    old_r, r = x, y
    old_u, u = 1, 0
    old_v, v = 0, 1
    while r:
        qt = old_r // r
        old_r, r = r, old_r - qt * r
        old_u, u = u, old_u - qt * u
        old_v, v = v, old_v - qt * v
    if old_r < 0:
        old_r, old_u, old_v = -old_r, -old_u, -old_v
    return old_r, old_u, old_v


def compose(f1: Form, f2: Form) -> Form:
    """Gauss composition; result is generally not reduced.

    Uses j*a2 + k*a1 + l*(b1+b2)/2 = m = gcd(a1, a2, (b1+b2)/2) and returns
    (a1*a2/m^2, B, c) with B normalized to the minimal-magnitude residue
    mod 2a.
    """
    if f1.disc.value != f2.disc.value:
        raise FormError("composition requires forms of equal discriminant")
    d = f1.disc.value
    a1, b1 = f1.a, f1.b
    a2, b2 = f2.a, f2.b
    s2 = (b1 + b2) // 2
    assert (b1 + b2) % 2 == 0
    g0, alpha, beta = _xgcd(a1, a2)
    m, gamma, l = _xgcd(g0, s2)
    j = beta * gamma
    k = alpha * gamma
    assert j * a2 + k * a1 + l * s2 == m
    a = (a1 // m) * (a2 // m)
    num = j * a2 * b1 + k * a1 * b2 + l * ((b1 * b2 + d) // 2)
    assert num % m == 0
    big_b = num // m
    # minimal-magnitude representative of B mod 2a
    aa = abs(a)
    b = big_b % (2 * aa)
    if b > aa:
        b -= 2 * aa
    num_c = b * b - d
    assert num_c % (4 * a) == 0
    return Form(a, b, num_c // (4 * a), f1.disc)


def to_positive_rep(f: Form) -> Form:
    """Canonical representative with a > 0; one rho-step flips the sign."""
    require_reduced(f)
    return f if f.a > 0 else rho(f)


def orbit_key(f: Form) -> tuple[int, int]:
    """Key identifying f's Gamma-orbit: (a, b mod 2|a|)."""
    return (f.a, f.b % (2 * abs(f.a)))


def orbit_equal(f: Form, g: Form) -> bool:
    """Equal as ideals: same a and b congruent mod 2a."""
    return f.disc.value == g.disc.value and orbit_key(f) == orbit_key(g)


def reduced_forms(disc: Discriminant) -> list[Form]:
    """All reduced forms of the discriminant (finitely many; 0 < b < sqrt(d))."""
    d = disc.value
    s = disc.sqrt_floor
    out = []
    b0 = 1 if d % 2 else 2
    for b in range(b0, s + 1, 2):
        prod = (b * b - d) // 4  # a*c, negative
        n = -prod
        for div in range(1, isqrt(n) + 1):
            if n % div:
                continue
            for aa in {div, n // div}:
                for a in (aa, -aa):
                    c = prod // a
                    if gcd(gcd(a, b), c) != 1:
                        continue
                    f = Form(a, b, c, disc)
                    if is_reduced(f):
                        out.append(f)
    out.sort(key=lambda f: (f.a, f.b, f.c))
    return out


def format_form(f: Form) -> str:
    return f"{f.disc.value}:{f.a},{f.b},{f.c}"


def parse_form(text: str) -> Form:
    """Parse 'd:a,b,c'; raises FormError naming the violated invariant."""
    head, sep, tail = text.strip().partition(":")
    if not sep:
        raise FormError("form text must look like 'd:a,b,c'")
    parts = tail.split(",")
    if len(parts) != 3:
        raise FormError("form text must carry exactly three coefficients")
    try:
        d = int(head)
        a, b, c = (int(p) for p in parts)
    except ValueError as exc:
        raise FormError("form text fields must be decimal integers") from exc
    return Form(a, b, c, Discriminant(d))
