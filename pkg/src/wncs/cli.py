"""Command-line front end. Every subcommand reads one JSON config file."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from typing import Optional, Sequence

from . import capacity_idle as idle
from . import lp
from .capacity_mdp import (NotStabilizableError, SufficientConditionNotMet,
                           build_heterogeneous_lp, plan_heterogeneous, synthesize)
from .model import ConfigError, UnrepresentablePlantError, load_config
from .simulator import (empirical_dropout, simulate, stability_diagnostic,
                        write_diagnostic_csv, write_trace_csv)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INVALID = 2
EXIT_NOT_STABILIZABLE = 3
EXIT_SUFFICIENT_NOT_MET = 4


def _h_range(text: str) -> list[int]:
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}")
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"empty or invalid range {text!r}")
    return list(range(lo, hi + 1))


def _p_grid(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values or any(not 0 < v <= 1 for v in values):
        raise argparse.ArgumentTypeError("p grid must be nonempty with values in (0, 1]")
    return sorted(set(values))


def _margin(text: str):
    if text == "auto":
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError("margin must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wncs", description="Stability checks and scheduler/controller co-design "
                                 "for plants sharing a lossy wireless channel.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
        p.add_argument("--margin", type=_margin, metavar="EPS",
                       help="feasibility margin for tests; design margin or 'auto' "
                            "for synthesize/simulate")
        return p

    add("check", "stability verdict for the config")
    add("synthesize", "scheduler and control-law design as JSON")
    s = add("simulate", "Monte-Carlo traces of the synthesized design")
    s.add_argument("--seed", type=int, default=0, metavar="U64")
    s.add_argument("--frames", type=int, default=200, metavar="K")
    s.add_argument("--runs", type=int, default=1000, metavar="M")
    s.add_argument("--diag-out", metavar="PATH", help="mean-square diagnostic CSV")
    s.add_argument("--confidence", type=float, default=0.99)
    for name, text in (("sweep-h", "verdicts over a range of sampling periods"),
                       ("sweep-p", "verdicts over a grid of channel qualities")):
        w = add(name, text)
        w.add_argument("--h-range", type=_h_range, metavar="LO:HI")
        w.add_argument("--p-grid", type=_p_grid, metavar="CSV")
    m = add("pmin", "smallest stabilizing common channel quality (symmetric config)")
    m.add_argument("--tol", type=float, default=1e-4)
    add("hmin", "smallest sampling period beyond which a perfect channel stabilizes")
    return parser


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _config(args):
    cfg = load_config(args.config)
    if args.margin is not None and args.command not in ("synthesize", "simulate"):
        if args.margin == "auto":
            raise ConfigError(["--margin: 'auto' only applies to synthesize/simulate"])
        cfg = type(cfg)(cfg.plants, cfg.channel, cfg.sampling_periods,
                        cfg.slot_length, args.margin)
    return cfg


def _check(cfg, args) -> int:
    if cfg.homogeneous:
        v = idle.check_stability_general(cfg)
        doc = {"stabilizable": v.stabilizable, "slack": v.slack,
               "binding_subset": v.subset_label(), "margin": v.margin}
        if all(p == 1 for p in cfg.channel):
            doc["perfect_channel_slack"] = idle.check_stability_perfect(cfg).slack
    else:
        plan = plan_heterogeneous(cfg)
        res = lp.solve_with_margin(build_heterogeneous_lp(cfg, plan),
                                   range(sum(plan.repetitions)), cfg.feasibility_margin)
        doc = {"sufficient_condition_met": res.strict, "lp_margin": res.margin,
               "big_frame": plan.big_frame, "margin": cfg.feasibility_margin}
    _emit(json.dumps(doc, indent=1, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def _synthesize(cfg, args) -> int:
    design = synthesize(cfg, args.margin or "auto")
    _emit(design.dumps() + "\n", args.out)
    return EXIT_OK


def _simulate(cfg, args) -> int:
    if args.frames < 0 or args.runs < 1:
        raise ConfigError(["--frames must be >= 0 and --runs >= 1"])
    design = synthesize(cfg, args.margin or "auto")
    traces = simulate(cfg, design, args.frames, args.runs, args.seed)
    if args.out:
        write_trace_csv(traces, args.out)
    diags = stability_diagnostic(traces, args.confidence)
    if args.diag_out:
        write_diagnostic_csv(diags, args.diag_out)
    for d in diags:
        print(f"subsystem {d.subsystem + 1}: {d.verdict} (slope {d.slope:.6g}, "
              f"p {d.p_value:.3g}){' ' + d.note if d.note else ''}")
    for e in empirical_dropout(traces):
        where = "" if e.window is None else f" window {e.window + 1}"
        flag = " inconclusive" if e.inconclusive else ""
        print(f"subsystem {e.subsystem + 1}{where}: dropout {e.estimate:.6g} "
              f"± {e.std_error:.3g}{flag}")
    return EXIT_OK


def _sweep(cfg, args) -> int:
    h_values = args.h_range or [cfg.h]
    p_values = args.p_grid
    if args.command == "sweep-p" and not p_values:
        raise ConfigError(["--p-grid: required for sweep-p"])
    rows = idle.sweep_rows(cfg, h_values, p_values)
    buf = io.StringIO()
    w = csv.DictWriter(buf, ["h", "p", "stabilizable", "slack", "binding_subset"],
                       lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "stabilizable": str(r["stabilizable"]).lower(),
                    "slack": f"{r['slack']:.12g}"})
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def _pmin(cfg, args) -> int:
    if len(set(cfg.plants)) != 1 or not cfg.homogeneous:
        raise idle.WrongSpecializationError("pmin needs identical plants and periods")
    value = idle.min_channel_quality_symmetric(
        cfg.n, cfg.plants[0].a, cfg.h, cfg.slot_length, args.tol, cfg.feasibility_margin)
    _emit(("none" if value is None else f"{value:.6g}") + "\n", args.out)
    return EXIT_OK


def _hmin(cfg, args) -> int:
    _emit(f"{idle.min_sampling_period_perfect(cfg)}\n", args.out)
    return EXIT_OK


_COMMANDS = {"check": _check, "synthesize": _synthesize, "simulate": _simulate,
             "sweep-h": _sweep, "sweep-p": _sweep, "pmin": _pmin, "hmin": _hmin}


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        return _COMMANDS[args.command](cfg, args)
    except (ConfigError, OSError, idle.WrongSpecializationError, idle.TooLargeError,
            UnrepresentablePlantError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NotStabilizableError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NOT_STABILIZABLE
    except SufficientConditionNotMet as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_SUFFICIENT_NOT_MET
    except Exception as exc:  # noqa: BLE001
        print(f"internal failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run())
