"""Exact classical simulation of the dual-lattice measurement subroutines.

The two quantum procedures are simulated in full: the register tables are
computed with the same certified fixed-point walks the evaluator uses, the
Fourier transform of each measured-form indicator is taken numerically
(float64 FFT, backward-stable to ~2^-50 per bin), and the resulting outcome
distributions are exact up to FFT roundoff.  Sampling mode draws a uniform
register value to pick the measured form (which reproduces the p_g/q weights
exactly) and then inverts the conditional CDF.

Also here: the target sets Y of both theorems, the probability-bound
verifier, the run-structure and lattice-structure harnesses, and the qubit
estimator.
"""

from __future__ import annotations

import bisect
from array import array
from collections.abc import Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil, fsum, log, log2, pi
from typing import Iterator

import numpy as np

from .distance import (
    _DOUBLE_STEP_FLOOR,
    ApproxReal,
    InfrastructureError,
    PrecisionBudget,
    WalkState,
    approx_ln,
    cached_step,
    giant_step,
    pip_eval,
    unit_state,
)
from .forms import (
    Discriminant,
    Form,
    orbit_key,
    require_positive_reduced,
    rho,
    unit_form,
)
from .oracle import PrincipalCycle, order_and_s

TABLE_CELL_CAP = 1 << 26  # tabulated cells (q in 1-D, q^2 in 2-D)
FFT_CELL_CAP = 1 << 26  # transform length (4q in 1-D, (8q)^2 in 2-D)


class ParamError(ValueError):
    """Simulation parameters outside their admissible window."""


class TableCapExceeded(RuntimeError):
    """A requested tabulation or transform is over the desk-scale cap."""


# ---------------------------------------------------------------------------
# parameter windows, certified by dyadic log intervals


def _scaled_interval(disc: Discriminant, mult: int, bits: int) -> tuple[Fraction, Fraction]:
    """Exact enclosure of mult * d * (ln d)^2 at 2^-bits log precision."""
    ln = approx_ln(disc.value, Fraction(1, 1 << bits))
    lo = ln.value - ln.err_bound
    hi = ln.value + ln.err_bound
    return mult * disc.value * lo * lo, mult * disc.value * hi * hi


def q_valid_1d(disc: Discriminant, q: int) -> bool:
    """Certified check of q/2 <= 5 d (ln d)^2 < q for a power of two q."""
    if q <= 0 or q & (q - 1):
        return False
    half = Fraction(q, 2)
    for bits in (40, 80, 160):
        lo, hi = _scaled_interval(disc, 5, bits)
        if half <= lo and hi < q:
            return True
        if hi < half or lo >= q:
            return False
    raise ParamError("cannot separate q from its window boundary")


def choose_q_1d(disc: Discriminant) -> int:
    _, hi = _scaled_interval(disc, 5, 60)
    q = 1 << int(hi).bit_length()
    for cand in (q >> 1, q, q << 1):
        if cand > 0 and q_valid_1d(disc, cand):
            return cand
    raise ParamError(f"no admissible power-of-two q for discriminant {disc}")


def q_valid_2d(disc: Discriminant, q: int) -> bool:
    """Certified check of 2q < d (ln d)^2 < 4q."""
    if q <= 0:
        return False
    for bits in (40, 80, 160):
        lo, hi = _scaled_interval(disc, 1, bits)
        if 2 * q < lo and hi < 4 * q:
            return True
        if hi <= 2 * q or lo >= 4 * q:
            return False
    raise ParamError("cannot separate q from its window boundary")


def choose_q_2d(disc: Discriminant) -> int:
    """The power of two inside (T/4, T/2); admissible and FFT-friendly."""
    lo, _ = _scaled_interval(disc, 1, 60)
    q = 1 << max(int(lo).bit_length() - 2, 0)
    for cand in (q >> 1, q, q << 1):
        if cand > 0 and q_valid_2d(disc, cand):
            return cand
    raise ParamError(f"no admissible power-of-two q for discriminant {disc}")


@dataclass(frozen=True)
class DualParams1D:
    disc: Discriminant
    q: int
    relaxed: bool = False

    def __post_init__(self) -> None:
        if self.q <= 0 or self.q & (self.q - 1):
            raise ParamError("q must be a positive power of two")
        if not self.relaxed and not q_valid_1d(self.disc, self.q):
            raise ParamError(
                f"q={self.q} violates q/2 <= 5d(ln d)^2 < q for d={self.disc}"
            )


@dataclass(frozen=True)
class DualParams2D:
    disc: Discriminant
    g: Form
    q: int
    relaxed: bool = False

    def __post_init__(self) -> None:
        require_positive_reduced(self.g)
        if self.g.disc != self.disc:
            raise ParamError("form discriminant mismatch")
        if self.q <= 0:
            raise ParamError("q must be positive")
        if not self.relaxed and not q_valid_2d(self.disc, self.q):
            raise ParamError(
                f"q={self.q} violates 2q < d(ln d)^2 < 4q for d={self.disc}"
            )


# ---------------------------------------------------------------------------
# register tabulation


def _lap_profile(
    budget: PrecisionBudget, start: Form, cap: int
) -> tuple[list[Form], list[ApproxReal], ApproxReal | None]:
    """Forms and cumulative distances of one cycle lap from a reduced form.

    Returns (forms, cums, total) where cums[j] is the distance of forms[j]
    relative to the start and total is the full-lap distance, or None if the
    cap cut the walk before closure.  The additions are the same canonical
    per-form increments the pointwise walk uses, so values agree exactly.
    """
    per_log = budget.per_log_precision
    key0 = orbit_key(start)
    forms = [start]
    cums = [ApproxReal.zero(budget.frac_bits)]
    cur = start
    dist = cums[0]
    while True:
        mid = rho(cur)
        inc = cached_step(cur, per_log) + cached_step(mid, per_log)
        if inc.value <= _DOUBLE_STEP_FLOOR:
            raise InfrastructureError("successor gap fell under its ln2 floor")
        cur = rho(mid)
        dist = dist + inc
        if orbit_key(cur) == key0:
            return forms, cums, dist
        if len(forms) >= cap:
            return forms, cums, None
        forms.append(cur)
        cums.append(dist)


class RegTable:
    """Block-compressed Reg values over x in [0, q).

    Acts as a read-only map x -> positive reduced form.  Blocks are the
    maximal runs of consecutive x mapping to the same form occurrence; the
    boundary convention matches the pointwise evaluator exactly (a block
    starts at the first x with 4*dist <= x).
    """

    def __init__(
        self,
        disc: Discriminant,
        span: int,
        forms: list[Form],
        starts: array,
        form_ids: array,
        err_bound: Fraction,
        laps: int,
    ):
        self.disc = disc
        self.span = span
        self.forms = forms
        self._starts = starts
        self._form_ids = form_ids
        self.err_bound = err_bound
        self.laps = laps

    def __len__(self) -> int:
        return self.span

    def block_count(self) -> int:
        return len(self._starts)

    def form_id_at(self, x: int) -> int:
        if not 0 <= x < self.span:
            raise IndexError("x outside the tabulated range")
        return self._form_ids[bisect.bisect_right(self._starts, x) - 1]

    def form_at(self, x: int) -> Form:
        return self.forms[self.form_id_at(x)]

    __getitem__ = form_at

    def blocks(self) -> Iterator[tuple[int, int, int]]:
        """Yield (start, end, form_id) with end exclusive."""
        n = len(self._starts)
        for i in range(n):
            end = self._starts[i + 1] if i + 1 < n else self.span
            yield self._starts[i], end, self._form_ids[i]

    def runs(self) -> list[tuple[int, int, int]]:
        """Blocks merged over equal adjacent form ids: (start, length, id)."""
        out: list[tuple[int, int, int]] = []
        for start, end, fid in self.blocks():
            if out and out[-1][2] == fid and out[-1][0] + out[-1][1] == start:
                prev = out[-1]
                out[-1] = (prev[0], prev[1] + end - start, fid)
            else:
                out.append((start, end - start, fid))
        return out

    def run_bounds(self) -> tuple[int, int]:
        """(m_min, m_max) over complete runs; the final truncated run is
        dropped when anything else is available."""
        runs = self.runs()
        if len(runs) > 1:
            runs = runs[:-1]
        lengths = [r[1] for r in runs]
        return min(lengths), max(lengths)

    def support_sizes(self) -> list[int]:
        sizes = [0] * len(self.forms)
        for start, end, fid in self.blocks():
            sizes[fid] += end - start
        return sizes

    def support_array(self, form_id: int) -> np.ndarray:
        parts = [
            np.arange(start, end, dtype=np.int64)
            for start, end, fid in self.blocks()
            if fid == form_id
        ]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(parts)


def _ceil_quarters(mantissa: int, frac_bits: int) -> int:
    """ceil(4 * mantissa / 2^frac_bits) by exact shifts."""
    return -((-mantissa) >> (frac_bits - 2))


def _tabulate_span(disc: Discriminant, span: int, budget: PrecisionBudget) -> RegTable:
    if span > TABLE_CELL_CAP:
        raise TableCapExceeded(f"table of {span} cells exceeds the cap")
    forms, cums, total = _lap_profile(budget, unit_form(disc), cap=span + 2)
    fstar = max(c.frac_bits for c in cums)
    if total is not None:
        fstar = max(fstar, total.frac_bits)
    ms = [c.mantissa << (fstar - c.frac_bits) for c in cums]
    mt = total.mantissa << (fstar - total.frac_bits) if total is not None else 0
    starts = array("q")
    form_ids = array("i")
    lap = 0
    done = False
    while not done:
        base = lap * mt
        for j, mj in enumerate(ms):
            x0 = _ceil_quarters(mj + base, fstar)
            if x0 >= span:
                done = True
                break
            starts.append(x0)
            form_ids.append(j)
        else:
            if total is None:
                done = True  # profile was truncated; nothing periodic to add
            else:
                lap += 1
        if total is None:
            done = True
    if not starts or starts[0] != 0:
        raise InfrastructureError("tabulation lost the x=0 anchor")
    err = max(c.err_bound for c in cums)
    if total is not None:
        err += (lap + 1) * total.err_bound
    if err >= Fraction(1, 8):
        raise InfrastructureError("tabulated distance error reached 1/8")
    return RegTable(disc, span, forms, starts, form_ids, err, lap + 1)


def tabulate_reg(params: DualParams1D, budget: PrecisionBudget | None = None) -> RegTable:
    """Reg(x) for all x in [0, q), by the incremental block walk."""
    if budget is None:
        budget = PrecisionBudget.for_tabulation(
            params.disc, params.q, relaxed=params.relaxed
        )
    return _tabulate_span(params.disc, params.q, budget)


# ---------------------------------------------------------------------------
# outcome distributions


class _Probs1D(Mapping):
    """Read-only y -> probability view over a dense float array."""

    def __init__(self, arr: np.ndarray):
        self.array = arr

    def __getitem__(self, y: int) -> float:
        return float(self.array[y])

    def __iter__(self):
        return iter(range(len(self.array)))

    def __len__(self) -> int:
        return len(self.array)


class _Probs2D(Mapping):
    """Read-only (y1, y2) -> probability view over a dense 2-D array."""

    def __init__(self, arr: np.ndarray):
        self.array = arr

    def __getitem__(self, key: tuple[int, int]) -> float:
        return float(self.array[key[0], key[1]])

    def __iter__(self):
        m = self.array.shape[0]
        return ((y1, y2) for y1 in range(m) for y2 in range(m))

    def __len__(self) -> int:
        return self.array.shape[0] * self.array.shape[1]


@dataclass
class DualDistribution:
    """Exact conditional outcome distribution given one measured form."""

    dimension: int
    modulus: int
    probabilities: Mapping
    measured_form: Form
    support_size: int
    weight: Fraction  # probability of measuring this form: p_g / q (or /q^2)
    support: object = field(repr=False, default=None)

    def total(self) -> float:
        return float(self.probabilities.array.sum())


def _conditional_1d(
    table: RegTable, form_id: int, q: int
) -> DualDistribution:
    xs = table.support_array(form_id)
    p = len(xs)
    n = 4 * q
    ind = np.zeros(n, dtype=np.float64)
    ind[xs] = 1.0
    half = np.fft.rfft(ind)
    mags = np.abs(half) ** 2
    probs = np.empty(n, dtype=np.float64)
    probs[: len(mags)] = mags
    probs[len(mags):] = mags[-2:0:-1]  # real input: bin n-k mirrors bin k
    probs /= float(n) * p
    return DualDistribution(
        dimension=1,
        modulus=n,
        probabilities=_Probs1D(probs),
        measured_form=table.forms[form_id],
        support_size=p,
        weight=Fraction(p, q),
        support=xs,
    )


def iter_regulator_conditionals(
    params: DualParams1D,
    budget: PrecisionBudget | None = None,
    table: RegTable | None = None,
) -> Iterator[DualDistribution]:
    """Per-form conditional distributions, one at a time (memory-friendly)."""
    if 4 * params.q > FFT_CELL_CAP:
        raise TableCapExceeded("transform length exceeds the cap")
    if table is None:
        table = tabulate_reg(params, budget)
    for form_id in range(len(table.forms)):
        yield _conditional_1d(table, form_id, params.q)


def simulate_regulator_dual(
    params: DualParams1D,
    budget: PrecisionBudget | None = None,
    mode: str = "full",
    rng: np.random.Generator | int | None = None,
    table: RegTable | None = None,
):
    """Full mode: list of per-form conditional distributions.  Sample mode:
    one measured y, drawn with the exact lattice of form weights."""
    if table is None:
        table = tabulate_reg(params, budget)
    if mode == "full":
        return list(iter_regulator_conditionals(params, table=table))
    if mode != "sample":
        raise ValueError("mode must be 'full' or 'sample'")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    x = int(gen.integers(0, params.q))
    dist = _conditional_1d(table, table.form_id_at(x), params.q)
    cdf = np.cumsum(dist.probabilities.array)
    y = int(np.searchsorted(cdf, gen.random() * cdf[-1], side="right"))
    return min(y, dist.modulus - 1)


# ---------------------------------------------------------------------------
# 2-D (order/distance) tabulation and simulation


class PipTable:
    """Block-compressed PIP values over (x1, x2) in [0, q)^2."""

    def __init__(self, disc: Discriminant, g: Form, q: int):
        self.disc = disc
        self.g = g
        self.q = q
        self.forms: list[Form] = []
        self._ids: dict[tuple[int, int], int] = {}
        self._row_starts: list[array] = []
        self._row_ids: list[array] = []

    def _form_id(self, f: Form) -> int:
        key = (f.a, f.b)
        got = self._ids.get(key)
        if got is None:
            got = len(self.forms)
            self._ids[key] = got
            self.forms.append(f)
        return got

    def form_id_at(self, x1: int, x2: int) -> int:
        starts = self._row_starts[x1]
        return self._row_ids[x1][bisect.bisect_right(starts, x2) - 1]

    def form_at(self, x1: int, x2: int) -> Form:
        return self.forms[self.form_id_at(x1, x2)]

    def __getitem__(self, key: tuple[int, int]) -> Form:
        return self.form_at(key[0], key[1])

    def support_sizes(self) -> list[int]:
        sizes = [0] * len(self.forms)
        for x1 in range(self.q):
            starts = self._row_starts[x1]
            ids = self._row_ids[x1]
            n = len(starts)
            for i in range(n):
                end = starts[i + 1] if i + 1 < n else self.q
                sizes[ids[i]] += end - starts[i]
        return sizes

    def support_pairs(self, form_id: int) -> tuple[np.ndarray, np.ndarray]:
        xs1: list[np.ndarray] = []
        xs2: list[np.ndarray] = []
        for x1 in range(self.q):
            starts = self._row_starts[x1]
            ids = self._row_ids[x1]
            n = len(starts)
            for i in range(n):
                if ids[i] != form_id:
                    continue
                end = starts[i + 1] if i + 1 < n else self.q
                seg = np.arange(starts[i], end, dtype=np.int64)
                xs2.append(seg)
                xs1.append(np.full(len(seg), x1, dtype=np.int64))
        if not xs1:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return np.concatenate(xs1), np.concatenate(xs2)

    def row_run_bounds(self) -> tuple[int, int]:
        """(m_min, m_max) over complete runs across all rows."""
        m_min, m_max = self.q + 1, 0
        for x1 in range(self.q):
            starts = self._row_starts[x1]
            n = len(starts)
            for i in range(n - 1):  # final run of each row is truncated
                length = starts[i + 1] - starts[i]
                m_min = min(m_min, length)
                m_max = max(m_max, length)
        if m_max == 0:  # degenerate: single block rows
            return self.q, self.q
        return m_min, m_max


class _ClassProfiles:
    """Lazily built lap profiles, one per form class encountered.

    Each profile stores its forms' cumulative positions as mantissas at one
    shared fixed point, plus the lap total; the registry maps every profile
    form to (profile, index) so a row's representative locates its class and
    its position within it in O(1).
    """

    def __init__(self, budget: PrecisionBudget, table: PipTable, cap: int):
        self.budget = budget
        self.table = table
        self.cap = cap
        self.registry: dict[Form, tuple[dict, int]] = {}

    def locate(self, rep: Form) -> tuple[dict, int]:
        got = self.registry.get(rep)
        if got is not None:
            return got
        forms, cums, total = _lap_profile(self.budget, rep, cap=self.cap)
        if total is None:
            raise TableCapExceeded("a class cycle did not close within the profile cap")
        fstar = max(max(c.frac_bits for c in cums), total.frac_bits)
        profile = {
            "fstar": fstar,
            "ms": [c.mantissa << (fstar - c.frac_bits) for c in cums],
            "mt": total.mantissa << (fstar - total.frac_bits),
            "fids": [self.table._form_id(f) for f in forms],
            "cum_err": max(c.err_bound for c in cums),
            "total_err": total.err_bound,
        }
        for j, f in enumerate(forms):
            self.registry[f] = (profile, j)
        return profile, 0


def tabulate_pip(params: DualParams2D, budget: PrecisionBudget | None = None) -> PipTable:
    """PIP(x1, x2) over the q x q grid, row by row.

    Row x1 walks the class cycle of g^x1 with the acceptance threshold
    anchored at the exact product ideal's position: the representative's
    profile position minus the ladder's correction total, matching the
    pointwise rule dist <= pos(g^x1) + x2/4 with exact dyadic boundary
    arithmetic.  Anchoring on the representative's own accumulated path
    instead would drift by the reduction corrections and destroy the dual
    lattice the recovery step reads off.
    """
    q = params.q
    if q * q > TABLE_CELL_CAP:
        raise TableCapExceeded(f"table of {q*q} cells exceeds the cap")
    if budget is None:
        budget = PrecisionBudget.for_tabulation(
            params.disc, q, two_d=True, relaxed=params.relaxed
        )
    table = PipTable(params.disc, params.g, q)
    profiles = _ClassProfiles(budget, table, cap=4 * q + 4)
    base = WalkState(params.g, ApproxReal.zero(budget.frac_bits))
    state = unit_state(budget)
    for x1 in range(q):
        profile, ci = profiles.locate(state.form)
        fstar = profile["fstar"]
        ms, mt, fids = profile["ms"], profile["mt"], profile["fids"]
        t = state.dist
        if t.frac_bits > fstar:
            shift = t.frac_bits - fstar
            fstar = t.frac_bits
            ms = [m << shift for m in ms]
            mt <<= shift
            mt0 = ms[ci] - t.mantissa
        else:
            mt0 = ms[ci] - (t.mantissa << (fstar - t.frac_bits))
        starts = array("q")
        ids = array("i")
        first_lap = mt0 // mt  # the lap holding the x2 = 0 anchor block
        lap = first_lap
        done = False
        while not done:
            off = lap * mt - mt0
            for j, mj in enumerate(ms):
                x2 = _ceil_quarters(mj + off, fstar)
                if x2 >= q:
                    done = True
                    break
                if x2 <= 0:
                    if starts:
                        ids[0] = fids[j]  # still left of 0; takes the anchor over
                    else:
                        starts.append(0)
                        ids.append(fids[j])
                else:
                    starts.append(x2)
                    ids.append(fids[j])
            lap += 1
        if not starts or starts[0] != 0:
            raise InfrastructureError("row tabulation lost its x2=0 anchor")
        err = (
            t.err_bound
            + profile["cum_err"]
            + (lap - first_lap + 1) * profile["total_err"]
        )
        if err >= Fraction(1, 8):
            raise InfrastructureError("tabulated distance error reached 1/8")
        table._row_starts.append(starts)
        table._row_ids.append(ids)
        if x1 + 1 < q:
            state = giant_step(state, base, budget)
    return table


def _conditional_2d(table: PipTable, form_id: int, q: int) -> DualDistribution:
    x1s, x2s = table.support_pairs(form_id)
    p = len(x1s)
    m = 8 * q
    if m * m > FFT_CELL_CAP:
        raise TableCapExceeded("2-D transform exceeds the cap")
    ind = np.zeros((m, m), dtype=np.float64)
    ind[x1s, x2s] = 1.0
    spec = np.fft.fft2(ind)
    probs = np.abs(spec) ** 2
    probs /= float(m) * m * p
    return DualDistribution(
        dimension=2,
        modulus=m,
        probabilities=_Probs2D(probs),
        measured_form=table.forms[form_id],
        support_size=p,
        weight=Fraction(p, q * q),
        support=(x1s, x2s),
    )


def iter_pip_conditionals(
    params: DualParams2D,
    budget: PrecisionBudget | None = None,
    table: PipTable | None = None,
) -> Iterator[DualDistribution]:
    """Per-form conditional 2-D distributions, one at a time; at the cell cap
    a single conditional takes ~GB-scale scratch, so callers that only reduce
    over the distributions should consume this lazily."""
    if (8 * params.q) ** 2 > FFT_CELL_CAP:
        raise TableCapExceeded("2-D transform exceeds the cap")
    if table is None:
        table = tabulate_pip(params, budget)
    for form_id in range(len(table.forms)):
        yield _conditional_2d(table, form_id, params.q)


def simulate_pip_dual(
    params: DualParams2D,
    budget: PrecisionBudget | None = None,
    mode: str = "full",
    rng: np.random.Generator | int | None = None,
    table: PipTable | None = None,
):
    """Full mode: per-form conditional 2-D distributions.  Sample mode: one
    measured (y1, y2) pair."""
    if table is None:
        table = tabulate_pip(params, budget)
    if mode == "full":
        return list(iter_pip_conditionals(params, table=table))
    if mode != "sample":
        raise ValueError("mode must be 'full' or 'sample'")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    x1 = int(gen.integers(0, params.q))
    x2 = int(gen.integers(0, params.q))
    dist = _conditional_2d(table, table.form_id_at(x1, x2), params.q)
    flat = dist.probabilities.array.reshape(-1)
    cdf = np.cumsum(flat)
    idx = int(np.searchsorted(cdf, gen.random() * cdf[-1], side="right"))
    idx = min(idx, len(flat) - 1)
    return idx // dist.modulus, idx % dist.modulus


# ---------------------------------------------------------------------------
# target sets


@dataclass(frozen=True)
class TargetSet1D:
    disc: Discriminant
    q: int
    members: dict  # y -> z
    y_cap: int
    m_min: int
    m_max: int
    card_lower_bound: float

    def __iter__(self):
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, y: int) -> bool:
        return y in self.members


def target_set_1d(
    params: DualParams1D, cycle: PrincipalCycle, m_min: int, m_max: int
) -> TargetSet1D:
    """Y = {0 <= y <= q/(4(m_max+1)) : |y - q z / R| <= 1/2 for some z}."""
    q = params.q
    reg = cycle.regulator_narrow.value
    y_cap = int(Fraction(q, 4 * (m_max + 1)))
    members: dict[int, int] = {}
    z = 0
    while True:
        center = Fraction(q) * z / reg
        if center > y_cap + 1:
            break
        for y in (int(center), int(center) + 1):
            if 0 <= y <= y_cap and abs(Fraction(y) - center) <= Fraction(1, 2):
                members.setdefault(y, z)
        z += 1
    return TargetSet1D(
        disc=params.disc,
        q=q,
        members=members,
        y_cap=y_cap,
        m_min=m_min,
        m_max=m_max,
        card_lower_bound=float(reg) / (8 * (m_max + 1)),
    )


@dataclass(frozen=True)
class TargetSet2D:
    disc: Discriminant
    q: int
    members: dict  # (y1, y2) -> (z1, z2)
    y2_cap: int
    m_min: int
    m_max: int
    n: int
    card_lower_bound: float

    def __iter__(self):
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, pair: tuple[int, int]) -> bool:
        return pair in self.members


def target_set_2d(
    params: DualParams2D,
    cycle: PrincipalCycle,
    n: int,
    s_dist: ApproxReal,
    m_min: int,
    m_max: int,
) -> TargetSet2D:
    """Y from the 2-D dual basis [[1/n, 0], [S/(4nR), 1/(2^2 R)]].

    y1/(8q) = z1/n + z2 S/(4nR) + w1 and y2/(8q) = z2/(4R), |w_i| <= 1/(16q),
    0 <= y2 < q/(m_max+2), with y1 read modulo 8q.  S is the quarter-grid
    distance 4*dist(g^n); with s_dist in real units the tooth sits at
    z2 * dist / (n R).
    """
    q = params.q
    m8 = 8 * q
    reg = cycle.regulator_narrow.value
    s_val = s_dist.value
    y2_cap_frac = Fraction(q, m_max + 2)
    members: dict[tuple[int, int], tuple[int, int]] = {}
    half = Fraction(1, 2)
    z2 = 0
    while True:
        c2 = Fraction(2 * q) * z2 / reg  # 8q * z2/(4R)
        if c2 - half >= y2_cap_frac:
            break
        for y2 in (int(c2), int(c2) + 1):
            if not (0 <= y2 < y2_cap_frac and abs(Fraction(y2) - c2) <= half):
                continue
            for z1 in range(n):
                c1 = (Fraction(m8) * z1 / n + Fraction(m8) * z2 * s_val / (n * reg)) % m8
                for y1 in (int(c1), int(c1) + 1):
                    delta = abs(Fraction(y1 % m8) - c1)
                    delta = min(delta, m8 - delta)
                    if delta <= half:
                        members.setdefault((y1 % m8, y2), (z1, z2))
        z2 += 1
    return TargetSet2D(
        disc=params.disc,
        q=q,
        members=members,
        y2_cap=int(y2_cap_frac) if y2_cap_frac != int(y2_cap_frac) else int(y2_cap_frac) - 1,
        m_min=m_min,
        m_max=m_max,
        n=n,
        card_lower_bound=n * float(reg) / (8 * (m_max + 2)),
    )


# ---------------------------------------------------------------------------
# bound verification


@dataclass
class BoundReport:
    dimension: int
    preconditions: dict
    measured: dict
    checks: dict  # name -> "pass" | "fail" | "not applicable"
    notes: list

    def as_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "preconditions": dict(self.preconditions),
            "measured": dict(self.measured),
            "checks": dict(self.checks),
            "notes": list(self.notes),
        }

    def failed(self) -> list[str]:
        return [k for k, v in self.checks.items() if v == "fail"]


def _phase_arc(phases: np.ndarray) -> float:
    """Width of the smallest arc containing all phases (radians)."""
    if len(phases) <= 1:
        return 0.0
    sp = np.sort(phases)
    gaps = np.diff(sp)
    wrap = 2 * pi - (sp[-1] - sp[0])
    return float(2 * pi - max(gaps.max(initial=0.0), wrap))


def verify_probability_bounds(
    dist: DualDistribution,
    target,
    cycle: PrincipalCycle | None = None,
    order_n: int = 1,
) -> BoundReport:
    """Measure the proof's intermediate quantities on one conditional
    distribution and report each inequality as pass / fail / not applicable."""
    p = dist.support_size
    q = dist.modulus // (4 if dist.dimension == 1 else 8)
    d = dist.measured_form.disc.value
    reg = float(cycle.regulator_narrow) if cycle is not None else None
    ln_d = log(d)
    pre_name = "R > 32 ln d" if dist.dimension == 1 else "R >= 64 ln d"
    pre_ok = reg is not None and (
        reg > 32 * ln_d if dist.dimension == 1 else reg >= 64 * ln_d
    )
    m_min = getattr(target, "m_min", None)
    m_max = getattr(target, "m_max", None)

    if dist.dimension == 1:
        floor_per_element = p / (8 * q)
        mass_floor = 2.0**-11
        xs = dist.support
        modulus = dist.modulus
        phase_of = lambda y: (xs * y) % modulus
    else:
        floor_per_element = p / (128 * q * q)
        mass_floor = 2.0**-16
        x1s, x2s = dist.support
        modulus = dist.modulus
        phase_of = lambda pair: (x1s * pair[0] + x2s * pair[1]) % modulus

    arcs = {}
    per_element = {}
    probs = dist.probabilities
    for y in target:
        arcs[y] = _phase_arc(phase_of(y).astype(np.float64) * (2 * pi / modulus))
        per_element[y] = probs[y]
    mass = fsum(per_element.values())

    arc_limit = pi / 2 + 1e-9
    arc_ok_all = all(a <= arc_limit for a in arcs.values())
    elem_checked = {y: per_element[y] >= floor_per_element * (1 - 1e-9)
                    for y, a in arcs.items() if a <= arc_limit}

    checks = {}
    measured = {
        "p": p,
        "q": q,
        "target_card": len(per_element),
        "target_mass": mass,
        "per_element_floor": floor_per_element,
        "max_phase_arc": max(arcs.values()) if arcs else 0.0,
        "arc_ok_count": sum(1 for a in arcs.values() if a <= arc_limit),
    }
    notes = []

    checks["phase_arc"] = "pass" if arc_ok_all else (
        "fail" if pre_ok else "not applicable"
    )
    if not arc_ok_all and not pre_ok:
        notes.append("phase arcs over pi/2 with preconditions unmet")
    if elem_checked:
        checks["per_element_floor"] = (
            "pass" if all(elem_checked.values()) else "fail"
        )
    else:
        checks["per_element_floor"] = "not applicable"

    if reg is None or m_min is None:
        checks["support_lower_bound"] = "not applicable"
        checks["card_lower_bound"] = "not applicable"
    else:
        if dist.dimension == 1:
            support_floor = (q / (8 * reg)) * (m_min + 1)
            card_floor = reg / (8 * (m_max + 1))
        else:
            support_floor = (q / order_n) * (q / (8 * reg)) * (m_min + 1)
            card_floor = order_n * reg / (8 * (m_max + 2))
        measured["support_floor"] = support_floor
        measured["card_floor"] = card_floor
        if pre_ok:
            checks["support_lower_bound"] = "pass" if p >= support_floor else "fail"
            checks["card_lower_bound"] = (
                "pass" if len(per_element) >= card_floor else "fail"
            )
        else:
            checks["support_lower_bound"] = "not applicable"
            checks["card_lower_bound"] = "not applicable"
    measured["mass_floor"] = mass_floor
    if pre_ok:
        checks["target_mass_floor"] = "pass" if mass >= mass_floor else "fail"
    else:
        checks["target_mass_floor"] = "not applicable"
        notes.append(f"precondition {pre_name} unmet; floors reported only")
    return BoundReport(
        dimension=dist.dimension,
        preconditions={pre_name: pre_ok},
        measured=measured,
        checks=checks,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# distribution helpers


def mixture_array(dists: list[DualDistribution]) -> np.ndarray:
    """Weighted marginal outcome distribution over y (or flattened pairs)."""
    out = None
    for dist in dists:
        arr = dist.probabilities.array * float(dist.weight)
        out = arr if out is None else out + arr
    return out


def top_peaks(arr: np.ndarray, k: int) -> list[int]:
    """Indices of the k most probable local maxima (circular neighborhood).

    Bins on the slope of a stronger neighbor are not peaks; without the
    local-max filter the side bins of a strong lattice tooth would outrank
    weaker teeth.
    """
    flat = arr.reshape(-1)
    is_peak = (flat > np.roll(flat, 1)) & (flat >= np.roll(flat, -1))
    idx = np.flatnonzero(is_peak)
    if len(idx) == 0:
        idx = np.array([int(np.argmax(flat))])
    order = np.argsort(-flat[idx], kind="stable")
    return [int(i) for i in idx[order[: min(k, len(idx))]]]


def unitarity_defect(dist: DualDistribution) -> float:
    return abs(dist.total() - 1.0)


def dc_probability(dist: DualDistribution) -> float:
    if dist.dimension == 1:
        return dist.probabilities[0]
    return dist.probabilities[(0, 0)]


# ---------------------------------------------------------------------------
# run-structure and lattice-structure harnesses


def reg_run_report(
    disc: Discriminant,
    cycle: PrincipalCycle,
    periods: int = 3,
    budget: PrecisionBudget | None = None,
) -> dict:
    """Scan >= `periods` periods of Reg and check the run-structure clauses:
    run lengths in [1, ln d + 3), per-form length variation <= 4, and run
    starts within |eps| <= 1 of 4*delta + 1/2 + 4kR against the oracle."""
    reg = float(cycle.regulator_narrow)
    d = disc.value
    span = ceil(4 * reg * periods) + 8
    if budget is None:
        budget = PrecisionBudget.for_tabulation(disc, span)
    table = _tabulate_span(disc, span, budget)
    runs = table.runs()
    if len(runs) > 1:
        runs = runs[:-1]  # final run is truncated by the span
    ln_d = log(d)
    length_bound = ln_d + 3
    counterexamples = []
    lengths_by_form: dict[int, list[int]] = {}
    max_eps = 0.0
    for start, length, fid in runs:
        lengths_by_form.setdefault(fid, []).append(length)
        if not 1 <= length < length_bound:
            counterexamples.append(
                {"clause": "run_length", "form": table.forms[fid].triple,
                 "start": start, "length": length, "bound": length_bound}
            )
        idx = cycle.index_of(table.forms[fid])
        if idx is None:
            counterexamples.append(
                {"clause": "oracle_membership", "form": table.forms[fid].triple}
            )
            continue
        delta = float(cycle.dists[idx])
        k = round((start - 4 * delta - 0.5) / (4 * reg))
        eps = start - 4 * delta - 0.5 - 4 * k * reg
        max_eps = max(max_eps, abs(eps))
        if abs(eps) > 1.0:
            counterexamples.append(
                {"clause": "start_offset", "form": table.forms[fid].triple,
                 "start": start, "eps": eps}
            )
    max_variation = 0
    for fid, lengths in lengths_by_form.items():
        variation = max(lengths) - min(lengths)
        max_variation = max(max_variation, variation)
        if variation > 4:
            counterexamples.append(
                {"clause": "length_variation", "form": table.forms[fid].triple,
                 "lengths": sorted(set(lengths)), "variation": variation}
            )
    m_all = [r[1] for r in runs]
    applicable = reg > 5 * ln_d
    return {
        "disc": d,
        "regulator": reg,
        "precondition_met": applicable,
        "runs_checked": len(runs),
        "m_min": min(m_all) if m_all else None,
        "m_max": max(m_all) if m_all else None,
        "max_eps": max_eps,
        "max_variation": max_variation,
        "length_bound": length_bound,
        "counterexamples": counterexamples,
        # the clauses are only claimed above the regulator threshold; below it
        # the report is observational and passed is None (not applicable)
        "passed": (not counterexamples) if applicable else None,
    }


def pip_lattice_report(
    disc: Discriminant,
    g: Form,
    cycle: PrincipalCycle,
    budget: PrecisionBudget | None = None,
    x1_multiples: int = 3,
    x2_periods: float = 2.5,
) -> dict:
    """Empirical iff-check of the 2-D value lattice of PIP against the
    oracle's (n, S): equality with PIP(0,0) happens exactly on translates of
    the lattice spanned by (n, -4S) and (0, 4R), up to the block width."""
    n, s_dist = order_and_s(g, cycle)
    reg = float(cycle.regulator_narrow)
    s_val = float(s_dist)
    gap1 = 4 * (float(cycle.dists[1]) if len(cycle.dists) > 1 else reg)
    x1_hi = x1_multiples * n + 1
    x2_hi = ceil(4 * reg * x2_periods)
    if budget is None:
        budget = PrecisionBudget.for_walks(disc, x_max=max(16 * x2_hi, disc.value**2))
    base_id = orbit_key(unit_form(disc))
    slack = 0.6
    stats = {"definite_in": 0, "definite_out": 0, "boundary_skipped": 0}
    mismatches = []
    for dx1 in range(x1_hi):
        for dx2 in range(x2_hi):
            equal = orbit_key(pip_eval(g, dx1, dx2, budget).form) == base_id
            if dx1 % n != 0:
                # different form class: equality is structurally impossible
                if equal:
                    mismatches.append({"dx1": dx1, "dx2": dx2, "kind": "off-class"})
                else:
                    stats["definite_out"] += 1
                continue
            k = dx1 // n
            r = (dx2 / 4 + k * s_val) % reg  # residual within one period, [0, reg)
            hi = gap1 / 4  # the unit block occupies distances [0, hi) mod reg
            if slack / 4 <= r <= hi - slack / 4:
                predicted = True
            elif hi + slack / 4 <= r <= reg - slack / 4:
                predicted = False
            else:
                # within slack of a block edge (0, hi, or the wrap at reg)
                stats["boundary_skipped"] += 1
                continue
            if equal != predicted:
                mismatches.append(
                    {"dx1": dx1, "dx2": dx2, "kind": "lattice",
                     "residual": r, "predicted": predicted, "observed": equal}
                )
            else:
                stats["definite_in" if predicted else "definite_out"] += 1
    return {
        "disc": disc.value,
        "g": g.triple,
        "n": n,
        "s_dist": float(s_dist),
        "regulator": reg,
        "window": [x1_hi, x2_hi],
        "stats": stats,
        "mismatches": mismatches,
        "passed": not mismatches,
    }


# ---------------------------------------------------------------------------
# resource estimation


@dataclass(frozen=True)
class ResourceReport:
    which: str
    disc_value: int
    log_disc: float
    log_ln_disc: float
    registers: tuple  # ((name, qubits), ...)
    n_cap: int
    formula_total: float
    parts_total: int

    def as_dict(self) -> dict:
        return {
            "which": self.which,
            "disc": self.disc_value,
            "log2_disc": self.log_disc,
            "log2_ln_disc": self.log_ln_disc,
            "registers": {name: bits for name, bits in self.registers},
            "n_cap": self.n_cap,
            "formula_total": self.formula_total,
            "parts_total": self.parts_total,
        }


def estimate_qubits(disc, which: str) -> ResourceReport:
    """Register sizes for the two subroutines.

    Accepts a plain integer (the formulas are evaluated at any size, even
    where no valid discriminant exists) or a Discriminant.
    """
    d = int(disc)
    if d < 2:
        raise ValueError("size parameter must be at least 2")
    big_l = log2(d)
    lam = log2(log(d))
    n_cap = ceil(10.5 * big_l)
    form_register = ceil(big_l) + 2
    if which == "regulator":
        first = ceil(big_l + 2 * lam) + 5
        registers = (
            ("first", first),
            ("form", form_register),
            ("workspace", n_cap),
        )
        formula_total = 2 * big_l + 2 * lam + n_cap + 7
    elif which == "pip":
        x_reg = ceil(big_l + 2 * lam)
        registers = (
            ("first", x_reg),
            ("second", x_reg),
            ("form", form_register),
            ("workspace", n_cap),
        )
        formula_total = 3 * big_l + 4 * lam + n_cap
    else:
        raise ValueError("which must be 'regulator' or 'pip'")
    return ResourceReport(
        which=which,
        disc_value=d,
        log_disc=big_l,
        log_ln_disc=lam,
        registers=registers,
        n_cap=n_cap,
        formula_total=formula_total,
        parts_total=sum(bits for _, bits in registers),
    )
