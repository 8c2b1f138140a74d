"""Command-line front end: one JSON report per run.

Every subcommand resolves its options from flags, an optional JSON config
file, and built-in defaults (in that precedence order), runs one library
pipeline, and emits a single JSON document with the effective configuration,
a build id, and the oracle provenance embedded.  Reruns with the same config
and seed are byte-identical apart from the timestamp field.

Exit codes: 0 success (a clean not_principal verdict counts), 2 failed
verdict or violated clause, 3 rejected input or malformed config, 4 resource
cap exceeded.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from fractions import Fraction
from math import log
from pathlib import Path

import numpy as np

from . import __version__
from .forms import Discriminant, Form, FormError, is_reduced, reduce_form, to_positive_rep
from .oracle import (
    CycleCapExceeded,
    OrderSearchExceeded,
    enumerate_cycle,
    form_classes,
    order_and_s,
    regulator_float,
    scan_discriminants,
)
from .qsim import (
    DualParams1D,
    DualParams2D,
    TableCapExceeded,
    _conditional_1d,
    _conditional_2d,
    choose_q_1d,
    choose_q_2d,
    estimate_qubits,
    pip_lattice_report,
    reg_run_report,
    simulate_pip_dual,
    simulate_regulator_dual,
    tabulate_pip,
    tabulate_reg,
    target_set_1d,
    target_set_2d,
    verify_probability_bounds,
)
from .recover import DivergenceError, RecoverConfig, pip_pipeline, regulator_pipeline

_DEFAULT_EXPORT_CAP = 4096

_ORACLES = {
    "pell": "continued-fraction expansion of sqrt(d), exact integer recurrence",
    "cycle": "principal-cycle enumeration with fixed-point step logs",
    "order": "brute-force class order with signed reduction-log accounting",
}


@dataclass
class RunConfig:
    """Options shared by every subcommand, resolved before dispatch."""

    disc: int | None = None
    seed: int | None = None
    precision_frac_bits: int = 20
    q_override: int | None = None
    cycle_cap: int | None = None
    max_attempts: int = 64
    relaxed: bool = False
    mode: str = "full"  # full | sample
    output_path: str | None = None


_EXTRA_KEYS = {
    "form", "measured_form", "which", "path", "samples", "export_cap",
    "periods", "x1_multiples", "x2_periods", "classes", "start", "stop",
    "min_ratio", "limit", "plain",
}
_CONFIG_KEYS = set(RunConfig.__dataclass_fields__) | _EXTRA_KEYS


class _Parser(argparse.ArgumentParser):
    # bad flags are an input problem, not a failed verdict
    def error(self, message: str) -> None:  # type: ignore[override]
        self.exit(3, f"{self.prog}: error: {message}\n")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = sorted(set(data) - _CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return data


def _resolve(args: argparse.Namespace, file_cfg: dict, name: str, default=None):
    value = getattr(args, name, None)
    if value is None:
        value = file_cfg.get(name, default)
    return value


def _run_config(args: argparse.Namespace, file_cfg: dict) -> RunConfig:
    cfg = RunConfig(
        disc=_resolve(args, file_cfg, "disc"),
        seed=_resolve(args, file_cfg, "seed"),
        precision_frac_bits=int(_resolve(args, file_cfg, "precision_frac_bits", 20)),
        q_override=_resolve(args, file_cfg, "q_override"),
        cycle_cap=_resolve(args, file_cfg, "cycle_cap"),
        max_attempts=int(_resolve(args, file_cfg, "max_attempts", 64)),
        relaxed=bool(_resolve(args, file_cfg, "relaxed", False)),
        mode=str(_resolve(args, file_cfg, "mode", "full")),
        output_path=_resolve(args, file_cfg, "output_path"),
    )
    if cfg.seed is not None:
        cfg.seed = int(cfg.seed)
        if not 0 <= cfg.seed < 1 << 64:
            raise ValueError("seed must fit in 64 unsigned bits")
    if cfg.precision_frac_bits < 1:
        raise ValueError("precision_frac_bits must be positive")
    if cfg.max_attempts < 1:
        raise ValueError("max_attempts must be positive")
    if cfg.mode not in ("full", "sample"):
        raise ValueError("mode must be 'full' or 'sample'")
    if cfg.disc is not None:
        cfg.disc = int(cfg.disc)
    if cfg.q_override is not None:
        cfg.q_override = int(cfg.q_override)
    if cfg.cycle_cap is not None:
        cfg.cycle_cap = int(cfg.cycle_cap)
    return cfg


def _require_disc(cfg: RunConfig) -> Discriminant:
    if cfg.disc is None:
        raise ValueError("a discriminant is required (--disc or config)")
    return Discriminant(cfg.disc)


def _parse_form(text: str, disc: Discriminant) -> Form:
    parts = text.replace("(", "").replace(")", "").split(",")
    if len(parts) != 3:
        raise ValueError("a form is written as three integers 'a,b,c'")
    a, b, c = (int(p.strip()) for p in parts)
    return Form(a, b, c, disc)


def _positive_rep(f: Form) -> Form:
    if not is_reduced(f):
        f = reduce_form(f)[0]
    return to_positive_rep(f)


def _recover_config(cfg: RunConfig, path: str) -> RecoverConfig:
    return RecoverConfig(
        max_attempts=cfg.max_attempts,
        seed=cfg.seed,
        q_override=cfg.q_override,
        force_path=path,
        refine_tolerance=Fraction(1, 1 << cfg.precision_frac_bits),
        cycle_cap=cfg.cycle_cap,
    )


def _build_id() -> str:
    root = Path(__file__).resolve().parents[2]
    try:
        got = subprocess.run(
            ["git", "-C", str(root), "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if got.returncode == 0 and got.stdout.strip():
            return f"infraquad {__version__} ({got.stdout.strip()})"
    except OSError:
        pass
    return f"infraquad {__version__}"


def _json_coerce(value):
    if isinstance(value, Fraction):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def _emit(envelope: dict, output_path: str | None) -> None:
    text = json.dumps(envelope, sort_keys=True, indent=2, default=_json_coerce) + "\n"
    if output_path:
        Path(output_path).write_text(text)
    else:
        sys.stdout.write(text)


def _envelope(command: str, cfg: RunConfig, extras: dict, oracles: dict, result: dict) -> dict:
    shown = asdict(cfg)
    shown.update(extras)
    return {
        "command": command,
        "config": shown,
        "build": _build_id(),
        "oracle_provenance": oracles,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "result": result,
    }


# ---------------------------------------------------------------------------
# subcommands


def _cmd_regulator(cfg: RunConfig, args, file_cfg) -> tuple[int, dict, dict, dict]:
    disc = _require_disc(cfg)
    path = _resolve(args, file_cfg, "path", "auto")
    res = regulator_pipeline(disc, _recover_config(cfg, path))
    result = res.as_dict()
    result["reference_float"] = regulator_float(disc)
    oracles = {"regulator_reference": _ORACLES["pell"], "cycle": _ORACLES["cycle"]}
    code = 2 if res.kind == "fail" else 0
    return code, {"path": path}, oracles, result


def _cmd_pip(cfg: RunConfig, args, file_cfg) -> tuple[int, dict, dict, dict]:
    disc = _require_disc(cfg)
    form_text = _resolve(args, file_cfg, "form")
    if form_text is None:
        raise ValueError("pip needs a form (--form a,b,c)")
    path = _resolve(args, file_cfg, "path", "auto")
    given = _parse_form(str(form_text), disc)
    rep = _positive_rep(given)
    res = pip_pipeline(rep, config=_recover_config(cfg, path))
    result = res.as_dict()
    result["input_form"] = list(given.triple)
    result["reduced_rep"] = list(rep.triple)
    oracles = {
        "principality": _ORACLES["cycle"],
        "regulator_reference": _ORACLES["pell"],
    }
    code = 2 if res.kind == "fail" else 0
    return code, {"form": str(form_text), "path": path}, oracles, result


def _export_distribution(dist, cap: int) -> dict:
    arr = dist.probabilities.array
    if dist.dimension == 1:
        flat = arr
    else:
        flat = arr.reshape(-1)
    if len(flat) <= cap:
        idx = np.arange(len(flat))
        truncated = False
    else:
        # ties break toward the lower index; re-sorting keeps bin order stable
        idx = np.sort(np.argsort(-flat, kind="stable")[:cap])
        truncated = True
    if dist.dimension == 1:
        entries = {str(int(i)): float(flat[i]) for i in idx}
    else:
        m = dist.modulus
        entries = {f"{int(i) // m},{int(i) % m}": float(flat[i]) for i in idx}
    return {
        "entries": entries,
        "truncated": truncated,
        "exported_mass": float(flat[idx].sum()),
    }


def _cmd_simulate(cfg: RunConfig, args, file_cfg) -> tuple[int, dict, dict, dict]:
    disc = _require_disc(cfg)
    which = _resolve(args, file_cfg, "which")
    if which not in ("regulator", "pip"):
        raise ValueError("simulate needs --which regulator|pip")
    form_text = _resolve(args, file_cfg, "form")
    measured_text = _resolve(args, file_cfg, "measured_form")
    samples = int(_resolve(args, file_cfg, "samples", 1))
    export_cap = int(_resolve(args, file_cfg, "export_cap", _DEFAULT_EXPORT_CAP))
    if samples < 1 or export_cap < 1:
        raise ValueError("samples and export_cap must be positive")
    extras = {
        "which": which, "form": form_text, "measured_form": measured_text,
        "samples": samples, "export_cap": export_cap,
    }
    oracles = {"r_plus": _ORACLES["cycle"]}

    if which == "regulator":
        q = cfg.q_override if cfg.q_override is not None else choose_q_1d(disc)
        relaxed = cfg.relaxed or cfg.q_override is not None
        params = DualParams1D(disc, q, relaxed=relaxed)
        table = tabulate_reg(params)
        if cfg.mode == "sample":
            gen = np.random.default_rng(cfg.seed)
            drawn = [
                int(simulate_regulator_dual(params, mode="sample", rng=gen, table=table))
                for _ in range(samples)
            ]
            result = {
                "samples": drawn,
                "metadata": {"disc": disc.value, "q": q, "seed": cfg.seed,
                             "modulus": 4 * q, "dimension": 1},
            }
            return 0, extras, {"r_plus": "none (raw samples)"}, result
        target_form = (
            _positive_rep(_parse_form(str(form_text), disc))
            if form_text is not None else table.forms[0]
        )
        try:
            fid = table.forms.index(target_form)
        except ValueError:
            raise ValueError(
                f"form {target_form.triple} does not appear in the register table"
            ) from None
        dist = _conditional_1d(table, fid, q)
        cycle = enumerate_cycle(disc, cfg.cycle_cap)
        m_min, m_max = table.run_bounds()
        target = target_set_1d(params, cycle, m_min, m_max)
        report = verify_probability_bounds(dist, target, cycle=cycle)
        oracles["target_lattice"] = _ORACLES["cycle"]
    else:
        if form_text is None:
            raise ValueError("simulate --which pip needs a base form (--form a,b,c)")
        g = _positive_rep(_parse_form(str(form_text), disc))
        q = cfg.q_override if cfg.q_override is not None else choose_q_2d(disc)
        relaxed = cfg.relaxed or cfg.q_override is not None
        params = DualParams2D(disc, g, q, relaxed=relaxed)
        table = tabulate_pip(params)
        if cfg.mode == "sample":
            gen = np.random.default_rng(cfg.seed)
            drawn = [
                list(simulate_pip_dual(params, mode="sample", rng=gen, table=table))
                for _ in range(samples)
            ]
            result = {
                "samples": drawn,
                "metadata": {"disc": disc.value, "q": q, "seed": cfg.seed,
                             "modulus": 8 * q, "dimension": 2},
            }
            return 0, extras, {"r_plus": "none (raw samples)"}, result
        if measured_text is not None:
            target_form = _positive_rep(_parse_form(str(measured_text), disc))
        else:
            # the landed representative of the ideal g, always in the table
            target_form = table.form_at(min(1, q - 1), 0)
        try:
            fid = table.forms.index(target_form)
        except ValueError:
            raise ValueError(
                f"form {target_form.triple} does not appear in the register table"
            ) from None
        dist = _conditional_2d(table, fid, q)
        cycle = enumerate_cycle(disc, cfg.cycle_cap)
        n, s_dist = order_and_s(g, cycle)
        m_min, m_max = table.row_run_bounds()
        target = target_set_2d(params, cycle, n, s_dist, m_min, m_max)
        report = verify_probability_bounds(dist, target, cycle=cycle, order_n=n)
        oracles["target_lattice"] = _ORACLES["order"]

    result = {
        "bound_report": report.as_dict(),
        "distribution": _export_distribution(dist, export_cap),
        "metadata": {
            "disc": disc.value,
            "q": q,
            "seed": cfg.seed,
            "measured_form": list(dist.measured_form.triple),
            "support_size": dist.support_size,
            "weight": float(dist.weight),
            "m_min": m_min,
            "m_max": m_max,
            "modulus": dist.modulus,
            "dimension": dist.dimension,
            "r_plus_source": _ORACLES["cycle"],
        },
    }
    code = 2 if report.failed() else 0
    return code, extras, oracles, result


def _cmd_verify_lemmas(cfg: RunConfig, args, file_cfg) -> tuple[int, dict, dict, dict]:
    disc = _require_disc(cfg)
    periods = int(_resolve(args, file_cfg, "periods", 3))
    x1_multiples = int(_resolve(args, file_cfg, "x1_multiples", 3))
    x2_periods = float(_resolve(args, file_cfg, "x2_periods", 2.5))
    classes = _resolve(args, file_cfg, "classes")
    if classes is not None:
        classes = int(classes)
    extras = {"periods": periods, "x1_multiples": x1_multiples,
              "x2_periods": x2_periods, "classes": classes}
    cycle = enumerate_cycle(disc, cfg.cycle_cap)

    run_report = reg_run_report(disc, cycle, periods=periods)
    skipped = []
    if run_report["passed"] is None:
        skipped.append({
            "check": "run_structure",
            "reason": "regulator below the run-structure threshold 5 ln d",
        })

    lattices = []
    if classes == 0:
        skipped.append({"check": "value_lattice", "reason": "disabled by classes=0"})
    else:
        reps = [to_positive_rep(cyc[0]) for cyc in form_classes(disc)]
        if classes is not None:
            reps = reps[:classes]
        for rep in reps:
            lattices.append(pip_lattice_report(
                disc, rep, cycle, x1_multiples=x1_multiples, x2_periods=x2_periods,
            ))

    failures = int(run_report["passed"] is False)
    failures += sum(1 for rep in lattices if not rep["passed"])
    result = {
        "run_structure": run_report,
        "lattices": lattices,
        "skipped": skipped,
        "failures": failures,
        "passed": failures == 0,
    }
    oracles = {
        "cycle": _ORACLES["cycle"],
        "class_order": _ORACLES["order"],
    }
    return (2 if failures else 0), extras, oracles, result


_RESOURCE_FORMULAS = {
    "regulator": "2L + 2*lam + N + 7",
    "pip": "3L + 4*lam + N",
}


def _render_resources(reports: list[dict]) -> str:
    lines = []
    for rep in reports:
        lines.append(f"{rep['which']} at d={rep['disc']} (2^{rep['log2_disc']:.1f})")
        width = max(len(name) for name in [*rep["registers"], "parts total"])
        for name, bits in rep["registers"].items():
            lines.append(f"  {name:<{width}}  {bits:>6}")
        lines.append(f"  {'parts total':<{width}}  {rep['parts_total']:>6}")
        formula = _RESOURCE_FORMULAS[rep["which"]]
        lines.append(f"  formula {formula} = {rep['formula_total']:.2f}")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def _cmd_resources(cfg: RunConfig, args, file_cfg) -> tuple[int, dict, dict, dict]:
    # the formulas are evaluated at any integer size, valid discriminant or not
    if cfg.disc is None:
        raise ValueError("a size parameter is required (--disc or config)")
    which = _resolve(args, file_cfg, "which", "both")
    if which not in ("regulator", "pip", "both"):
        raise ValueError("resources takes --which regulator|pip|both")
    names = ["regulator", "pip"] if which == "both" else [which]
    reports = [estimate_qubits(cfg.disc, name).as_dict() for name in names]
    rendered = _render_resources(reports)
    if _resolve(args, file_cfg, "plain", False):
        sys.stdout.write(rendered)
    result = {"estimates": reports, "rendered": rendered}
    return 0, {"which": which}, {"sizing": "closed-form register formulas"}, result


def _cmd_find_disc(cfg: RunConfig, args, file_cfg) -> tuple[int, dict, dict, dict]:
    start = _resolve(args, file_cfg, "start")
    stop = _resolve(args, file_cfg, "stop")
    if start is None or stop is None:
        raise ValueError("find-disc needs --start and --stop")
    start, stop = int(start), int(stop)
    min_ratio = float(_resolve(args, file_cfg, "min_ratio", 0.0))
    limit = _resolve(args, file_cfg, "limit")
    if limit is not None:
        limit = int(limit)
    rows = scan_discriminants(start, stop, min_ratio=min_ratio, limit=limit)
    hits = [
        {"disc": d, "regulator": reg, "ratio": reg / log(d)}
        for d, reg in rows
    ]
    extras = {"start": start, "stop": stop, "min_ratio": min_ratio, "limit": limit}
    result = {"hits": hits, "count": len(hits)}
    return 0, extras, {"regulator": _ORACLES["pell"]}, result


# ---------------------------------------------------------------------------
# wiring


def _add_common(sp: argparse.ArgumentParser, with_disc: bool = True) -> None:
    sp.add_argument("--config", help="JSON file with the same keys as the flags")
    if with_disc:
        sp.add_argument("--disc", type=int, help="field discriminant")
    sp.add_argument("--seed", type=int, help="64-bit RNG seed")
    sp.add_argument("--q-override", dest="q_override", type=int,
                    help="bypass automatic q sizing (implies relaxed checks)")
    sp.add_argument("--cycle-cap", dest="cycle_cap", type=int,
                    help="cap on enumerated cycle steps (INFRAQUAD_CYCLE_CAP otherwise)")
    sp.add_argument("--max-attempts", dest="max_attempts", type=int,
                    help="sampling retry budget")
    sp.add_argument("--precision-frac-bits", dest="precision_frac_bits", type=int,
                    help="fractional bits for the refinement tolerance")
    sp.add_argument("--relaxed", action="store_true", default=None,
                    help="skip the q sizing validity window")
    sp.add_argument("--output", dest="output_path",
                    help="write the JSON report here instead of stdout")


def _build_parser() -> _Parser:
    parser = _Parser(prog="infraquad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"infraquad {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("regulator", help="recover the regulator", parents=[])
    _add_common(sp)
    sp.add_argument("--path", choices=("auto", "classical", "quantum"),
                    help="force the recovery route")

    sp = sub.add_parser("pip", help="decide principality and recover the distance")
    _add_common(sp)
    sp.add_argument("--form", help="target form as 'a,b,c'")
    sp.add_argument("--path", choices=("auto", "classical", "quantum"),
                    help="force the recovery route")

    sp = sub.add_parser("simulate", help="exact dual-sampler distributions")
    _add_common(sp)
    sp.add_argument("--which", choices=("regulator", "pip"))
    sp.add_argument("--mode", choices=("full", "sample"), default=None,
                    help="full conditional export or seeded samples")
    sp.add_argument("--form", help="base form 'a,b,c' (pip) or measured form (regulator)")
    sp.add_argument("--measured-form", dest="measured_form",
                    help="export this form's conditional instead of the base form's")
    sp.add_argument("--samples", type=int, help="number of draws in sample mode")
    sp.add_argument("--export-cap", dest="export_cap", type=int,
                    help="most probable bins kept in the exported distribution")

    sp = sub.add_parser("verify-lemmas", help="scan the run-structure and lattice clauses")
    _add_common(sp)
    sp.add_argument("--periods", type=int, help="periods of the 1-D scan")
    sp.add_argument("--x1-multiples", dest="x1_multiples", type=int,
                    help="order multiples in the 2-D scan")
    sp.add_argument("--x2-periods", dest="x2_periods", type=float,
                    help="regulator periods in the 2-D scan")
    sp.add_argument("--classes", type=int,
                    help="form classes to lattice-scan (0 skips, default all)")

    sp = sub.add_parser("resources", help="register sizes for a given input size")
    _add_common(sp)
    sp.add_argument("--which", choices=("regulator", "pip", "both"))
    sp.add_argument("--plain", action="store_true", default=None,
                    help="print the rendered table to stdout as well")

    sp = sub.add_parser("find-disc", help="scan for discriminants by regulator ratio")
    _add_common(sp, with_disc=False)
    sp.add_argument("--start", type=int)
    sp.add_argument("--stop", type=int)
    sp.add_argument("--min-ratio", dest="min_ratio", type=float,
                    help="keep d with R+ / ln d at least this large")
    sp.add_argument("--limit", type=int, help="stop after this many hits")

    return parser


_HANDLERS = {
    "regulator": _cmd_regulator,
    "pip": _cmd_pip,
    "simulate": _cmd_simulate,
    "verify-lemmas": _cmd_verify_lemmas,
    "resources": _cmd_resources,
    "find-disc": _cmd_find_disc,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        file_cfg = _load_config(args.config)
        cfg = _run_config(args, file_cfg)
        code, extras, oracles, result = _HANDLERS[args.cmd](cfg, args, file_cfg)
    except (ValueError, OSError) as exc:
        # FormError, SizingError, ParamError and malformed config land here
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CycleCapExceeded, TableCapExceeded, OrderSearchExceeded) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DivergenceError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _emit(_envelope(args.cmd, cfg, extras, oracles, result), cfg.output_path)
    return code


if __name__ == "__main__":
    sys.exit(main())
