"""Classical post-processing and end-to-end pipelines.

Continued-fraction recovery turns two measured dual samples into the lattice
pair (z1, z2); extended-gcd recovery turns two 2-D samples into a distance
candidate S'.  Candidates are pinned to the true cycle value by an anchored
high-precision walk, verified by an independent landing check, and retried
under Monte Carlo semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd, isqrt, log

import numpy as np
from mpmath import mp

from .distance import (
    ApproxReal,
    InfrastructureError,
    PrecisionBudget,
    WalkState,
    form_left_of,
    unit_state,
)
from .forms import Discriminant, Form, _rho_step, _xgcd, orbit_key, to_positive_rep, unit_form
from .oracle import (
    CycleCapExceeded,
    default_cycle_cap,
    principal_test_bruteforce,
    regulator_classical,
    regulator_float,
)
from .qsim import (
    DualParams1D,
    DualParams2D,
    choose_q_1d,
    choose_q_2d,
    simulate_pip_dual,
    simulate_regulator_dual,
    tabulate_pip,
    tabulate_reg,
)


class DivergenceError(RuntimeError):
    """No cycle point matched the coarse candidate within its window."""


@dataclass
class RecoverConfig:
    max_attempts: int = 64
    seed: int | None = None
    q_override: int | None = None
    force_path: str = "auto"  # auto | classical | quantum
    refine_tolerance: Fraction = Fraction(1, 1 << 20)
    use_oracle: bool = True
    cycle_cap: int | None = None


@dataclass
class RecoveryResult:
    kind: str  # regulator | pip_distance | not_principal | fail
    value: ApproxReal | None
    z_pair: tuple[int, int] | None
    attempts: int
    diagnostics: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "value": float(self.value) if self.value is not None else None,
            "value_err_bound": float(self.value.err_bound) if self.value is not None else None,
            "z_pair": list(self.z_pair) if self.z_pair else None,
            "attempts": self.attempts,
            "diagnostics": self.diagnostics,
        }


# ---------------------------------------------------------------------------
# continued-fraction recovery


def cf_recover(y1: int, y2: int, q: int) -> tuple[int, int] | None:
    """The convergent z1/z2 of y1/y2 with |y1/y2 - z1/z2| <= 1/(2*z2^2).

    Among qualifying convergents with z2 <= sqrt(q) the most refined one is
    returned: the recoverable pair is unique in that range, while coarser
    convergents (0/1 in particular) qualify vacuously whenever the ratio is
    small.
    """
    if y2 == 0:
        raise ValueError("denominator sample must be nonzero")
    if not 0 < y1 <= y2:
        raise ValueError("samples must satisfy 0 < y1 <= y2")
    cap = isqrt(q)
    ratio = Fraction(y1, y2)
    # convergent recurrence on the Euclid expansion of y1/y2
    h_prev, h_cur = 1, y1 // y2
    k_prev, k_cur = 0, 1
    r_prev, r_cur = y1, y2
    best: tuple[int, int] | None = None
    while True:
        if k_cur > cap:
            break
        if k_cur > 0 and abs(ratio - Fraction(h_cur, k_cur)) <= Fraction(1, 2 * k_cur * k_cur):
            best = (h_cur, k_cur)
        rem = r_prev - (r_prev // r_cur) * r_cur
        if rem == 0:
            break
        a = r_cur // rem
        r_prev, r_cur = r_cur, rem
        h_prev, h_cur = h_cur, a * h_cur + h_prev
        k_prev, k_cur = k_cur, a * k_cur + k_prev
    return best


# ---------------------------------------------------------------------------
# anchored high-precision refinement


def _tolerance_bits(tol: Fraction) -> int:
    bits = 0
    while Fraction(1, 1 << bits) > tol:
        bits += 1
        if bits > 4096:
            raise ValueError("tolerance too small")
    return bits


def _anchored_walk(
    anchor: WalkState, target: Fraction, prec: int
) -> tuple[Form, Fraction, int]:
    """Walk rho-pairs from the anchor; return the positive form whose true
    cumulative distance lies nearest the target within the +-1 window."""
    disc = anchor.form.disc
    d = disc.value
    s = disc.sqrt_floor
    rel_target = target - anchor.dist.value
    if rel_target < -1:
        raise DivergenceError("target lies behind the anchor")
    cap = default_cycle_cap()
    best_form = None
    best_cum = None
    with mp.workprec(prec):
        sqd = mp.sqrt(d)
        t = mp.mpf(rel_target.numerator) / rel_target.denominator
        cum = mp.mpf(0)
        a, b, c = anchor.form.triple
        steps = 0
        while True:
            if abs(cum - t) <= 1:
                if best_cum is None or abs(cum - t) < abs(best_cum - t):
                    best_form = Form(a, b, c, disc)
                    best_cum = cum
            if cum > t + 1:
                break
            for _ in range(2):
                cum += mp.log((sqd + b) / (sqd - b)) / 2
                a, b, c = _rho_step(a, b, c, d, s)
                steps += 1
            if steps > cap:
                raise CycleCapExceeded(cap)
        if best_form is None:
            raise DivergenceError("no cycle point within 1 of the candidate")
        # exact mantissa/exponent extraction of the mpf value
        sign, man, exp, _ = mp.mpf(best_cum)._mpf_
        exact = Fraction(-int(man) if sign else int(man)) * Fraction(2) ** exp
    return best_form, exact + anchor.dist.value, steps


def refine_distance(
    anchor: WalkState, target_dist, tolerance
) -> ApproxReal:
    """Pin the true cycle distance nearest target_dist to within tolerance by
    re-walking with high-precision step values from the anchor."""
    form, value, _ = _refine_with_form(anchor, target_dist, tolerance)
    return value


def _first_unit_return(
    disc: Discriminant, upper: Fraction, prec: int
) -> tuple[Fraction, int] | None:
    """True distance of the first return to the unit form, walking from it;
    None if the cycle does not close by `upper`.  The first return is the
    regulator itself, so acceptance against it cannot confuse a multiple of
    the period for the period."""
    d = disc.value
    s = disc.sqrt_floor
    u = unit_form(disc).triple
    cap = default_cycle_cap()
    with mp.workprec(prec):
        sqd = mp.sqrt(d)
        bound = mp.mpf(upper.numerator) / upper.denominator
        cum = mp.mpf(0)
        a, b, c = u
        steps = 0
        while True:
            for _ in range(2):
                cum += mp.log((sqd + b) / (sqd - b)) / 2
                a, b, c = _rho_step(a, b, c, d, s)
                steps += 1
            if steps > cap:
                raise CycleCapExceeded(cap)
            if (a, b, c) == u:
                sign, man, exp, _ = mp.mpf(cum)._mpf_
                value = Fraction(-int(man) if sign else int(man)) * Fraction(2) ** exp
                return value, steps
            if cum > bound:
                return None


def _refine_with_form(
    anchor: WalkState, target_dist, tolerance
) -> tuple[Form, ApproxReal, int]:
    tol = Fraction(tolerance)
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if anchor.dist.err_bound > tol / 2:
        raise InfrastructureError("anchor distance too coarse for the tolerance")
    target = (
        target_dist.value if isinstance(target_dist, ApproxReal) else Fraction(target_dist)
    )
    bits = _tolerance_bits(tol)
    prec = bits + 48
    form, exact, steps = _anchored_walk(anchor, target, prec)
    out_bits = bits + 40
    base = ApproxReal.from_fraction(exact, out_bits)
    err = (
        base.err_bound
        + anchor.dist.err_bound
        + Fraction(steps + 16, 1 << (prec - 8))
    )
    return form, ApproxReal(base.mantissa, out_bits, err), steps


# ---------------------------------------------------------------------------
# regulator pipeline


def _fold(y: int, modulus: int) -> int:
    return min(y, modulus - y) if y else 0


def regulator_pipeline(disc: Discriminant, config: RecoverConfig | None = None) -> RecoveryResult:
    """Regulator recovery: classical route below the smallness threshold,
    otherwise two dual samples -> continued fractions -> anchored refinement,
    retried under the configured budget."""
    cfg = config or RecoverConfig()
    diags: list[dict] = []
    reg_quick = regulator_float(disc)
    quantum = cfg.force_path == "quantum" or (
        cfg.force_path == "auto" and reg_quick >= 32 * log(disc.value)
    )
    if cfg.force_path not in ("auto", "classical", "quantum"):
        raise ValueError("force_path must be auto, classical, or quantum")
    if not quantum:
        value = regulator_classical(disc, cfg.refine_tolerance)
        diags.append({"path": "classical", "threshold": 32 * log(disc.value)})
        return RecoveryResult("regulator", value, None, 0, diags)

    q = cfg.q_override if cfg.q_override is not None else choose_q_1d(disc)
    params = DualParams1D(disc, q, relaxed=cfg.q_override is not None)
    table = tabulate_reg(params)
    gen = np.random.default_rng(cfg.seed)
    diags.append({"path": "quantum", "q": q})

    oracle_reg = None
    if cfg.use_oracle:
        try:
            oracle_reg = regulator_classical(disc, Fraction(1, 1 << 40))
        except (CycleCapExceeded, RuntimeError, OverflowError):
            oracle_reg = None

    for attempt in range(1, cfg.max_attempts + 1):
        ya = simulate_regulator_dual(params, mode="sample", rng=gen, table=table)
        yb = simulate_regulator_dual(params, mode="sample", rng=gen, table=table)
        rec: dict = {"attempt": attempt, "y_raw": [ya, yb]}
        diags.append(rec)
        fa, fb = _fold(ya, 4 * q), _fold(yb, 4 * q)
        if fa == 0 or fb == 0:
            rec["skip"] = "zero sample"
            continue
        if fa == fb:
            rec["skip"] = "duplicate samples"
            continue
        y1, y2 = sorted((fa, fb))
        pair = cf_recover(y1, y2, q)
        if pair is None:
            rec["skip"] = "cf found no qualifying convergent"
            continue
        z1, z2 = pair
        rec["z_pair"] = [z1, z2]
        if z1 == 0:
            rec["skip"] = "z1 = 0"
            continue
        candidate = Fraction(q) * z1 / y1
        rec["candidate"] = float(candidate)
        # noise samples can mimic teeth of any multiple of the period, so the
        # candidate is checked against the walk's first return to the unit,
        # which is the regulator itself; a plain landing test cannot tell
        # k*R from R on short cycles
        if candidate > isqrt(q) // 4 + 1:
            rec["skip"] = "candidate exceeds the q-window bound"
            continue
        bits = _tolerance_bits(cfg.refine_tolerance)
        prec = bits + 48
        try:
            hit = _first_unit_return(disc, candidate + 1, prec)
        except CycleCapExceeded as exc:
            rec["skip"] = f"refinement: {exc}"
            continue
        if hit is None:
            rec["skip"] = "cycle does not close inside the candidate window"
            continue
        first_return, steps = hit
        if abs(first_return - candidate) > 1:
            rec["skip"] = "candidate is not within 1 of the first unit return"
            continue
        out_bits = bits + 40
        base = ApproxReal.from_fraction(first_return, out_bits)
        err = base.err_bound + Fraction(steps + 16, 1 << (prec - 8))
        refined = ApproxReal(base.mantissa, out_bits, err)
        rec["verdict"] = "accepted"
        if oracle_reg is not None:
            rec["oracle_abs_err"] = abs(float(refined) - float(oracle_reg))
        return RecoveryResult("regulator", refined, (z1, z2), attempt, diags)
    diags.append({"failure": "attempt budget exhausted"})
    return RecoveryResult("fail", None, None, cfg.max_attempts, diags)


# ---------------------------------------------------------------------------
# PIP recovery


def pip_recover(
    y: tuple[int, int], y_prime: tuple[int, int], q: int, R_plus: ApproxReal
) -> tuple[ApproxReal, int, int] | None:
    """Extended-gcd distance recovery from two 2-D samples.

    z2-components are rounded from y2*R+/(2q) (ties to even); requires the
    pair to be coprime, combines the y1-components with the Bezout weights,
    and scales back by R+/(8q).
    """
    y1, y2 = y
    y1p, y2p = y_prime
    z2 = round(Fraction(y2) * R_plus.value / (2 * q))
    z2p = round(Fraction(y2p) * R_plus.value / (2 * q))
    if gcd(z2, z2p) != 1:
        return None
    _, k1, k2 = _xgcd(z2, z2p)
    p = (y1 * k1 + y1p * k2) % (8 * q)
    val = Fraction(p) * R_plus.value / (8 * q)
    base = ApproxReal.from_fraction(val, R_plus.frac_bits)
    err = base.err_bound + R_plus.err_bound * Fraction(p, 8 * q)
    return ApproxReal(base.mantissa, base.frac_bits, err), z2, z2p


def pip_pipeline(
    g: Form, R_plus: ApproxReal | None = None, config: RecoverConfig | None = None
) -> RecoveryResult:
    """Principality decision with distance recovery.

    Classical route below the smallness threshold; otherwise sample pairs of
    2-D dual vectors, recover S', verify by an independent landing walk, and
    refine.  Verification failures exhaust retries into not_principal; the
    landing check makes a false principal verdict structurally impossible.
    """
    cfg = config or RecoverConfig()
    disc = g.disc
    diags: list[dict] = []
    reg_quick = regulator_float(disc)
    quantum = cfg.force_path == "quantum" or (
        cfg.force_path == "auto" and reg_quick >= 64 * log(disc.value)
    )
    if not quantum:
        principal, dist = principal_test_bruteforce(g, cap=cfg.cycle_cap)
        diags.append({"path": "classical", "threshold": 64 * log(disc.value)})
        if principal:
            return RecoveryResult("pip_distance", dist, None, 0, diags)
        return RecoveryResult("not_principal", None, None, 0, diags)

    q = cfg.q_override if cfg.q_override is not None else choose_q_2d(disc)
    params = DualParams2D(disc, g, q, relaxed=cfg.q_override is not None)
    table = tabulate_pip(params)
    budget = PrecisionBudget.for_walks(disc)
    gen = np.random.default_rng(cfg.seed)
    diags.append({"path": "quantum", "q": q})

    # the rounding argument needs R+ tighter than the sample scale
    if R_plus is None:
        R_plus = regulator_classical(disc, Fraction(1, 64 * q))
    elif R_plus.err_bound >= Fraction(1, 32 * q):
        R_plus = refine_distance(
            unit_state(budget), R_plus, Fraction(1, 64 * q)
        )
    rep = to_positive_rep(g)
    unit_key = orbit_key(unit_form(disc))
    saw_verification_miss = False

    for attempt in range(1, cfg.max_attempts + 1):
        ya = simulate_pip_dual(params, mode="sample", rng=gen, table=table)
        yb = simulate_pip_dual(params, mode="sample", rng=gen, table=table)
        rec: dict = {"attempt": attempt, "y": list(ya), "y_prime": list(yb)}
        diags.append(rec)
        if ya == yb:
            rec["skip"] = "duplicate samples"
            continue
        got = pip_recover(ya, yb, q, R_plus)
        if got is None:
            rec["skip"] = "gcd(z2, z2') > 1"
            continue
        s_prime, z2, z2p = got
        rec["z2_pair"] = [z2, z2p]
        rec["s_prime"] = float(s_prime)
        x_star = round(4 * s_prime.value)
        landed = False
        for x_probe in (x_star, x_star - 1, x_star + 1):
            if x_probe < 0:
                continue
            if orbit_key(form_left_of(x_probe, budget).form) == orbit_key(rep):
                landed = True
                break
        if not landed:
            saw_verification_miss = True
            rec["verdict"] = "verification miss"
            continue
        try:
            form, refined, _ = _refine_with_form(
                unit_state(budget), s_prime.value, cfg.refine_tolerance
            )
        except (DivergenceError, CycleCapExceeded) as exc:
            rec["skip"] = f"refinement: {exc}"
            continue
        if orbit_key(form) != orbit_key(rep):
            # nearest cycle point is not g: the coarse S' was a lucky miss
            saw_verification_miss = True
            rec["verdict"] = "refined point is not g"
            continue
        rec["verdict"] = "accepted"
        return RecoveryResult("pip_distance", refined, (z2, z2p), attempt, diags)

    diags.append({"failure": "attempt budget exhausted"})
    if saw_verification_miss:
        return RecoveryResult("not_principal", None, None, cfg.max_attempts, diags)
    return RecoveryResult("fail", None, None, cfg.max_attempts, diags)
