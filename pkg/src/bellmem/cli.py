"""Command-line entry point: ``bellmem <subcommand> [flags]``.

Flags may also be read from a plain-text file of ``key=value`` lines given
with ``--config``; keys are flag names without the leading dashes. Explicit
flags override file values. The master seed falls back to ``$BELLMEM_SEED``
when neither a flag nor the file sets it.

Exit status: 0 success, 2 usage or configuration error, 3 a statistic was
undefined (some setting pair never occurred), 4 the locality audit failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import max_deterministic_chsh, run_strawman, strawman_phase_average
from .errors import ConfigError, UndefinedEstimateError
from .experimenter import SettingSchedule
from .harness import RunConfig, default_schedule, no_signalling_audit, run_experiment
from .reporting import (
    HIST_BINS,
    HIST_RANGE,
    RunRow,
    derive_seed,
    log_grid,
    run_batch,
    run_rows_csv,
    sweep,
)

EXIT_USAGE = 2
EXIT_UNDEFINED = 3
EXIT_AUDIT = 4
SEED_ENV = "BELLMEM_SEED"


def probability(text: str) -> float:
    try:
        p = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= p <= 1.0:
        raise argparse.ArgumentTypeError(f"probability must lie in [0, 1], got {p}")
    return p


def table_length(text: str) -> int:
    n = positive_int(text)
    if n < 3:
        raise argparse.ArgumentTypeError(f"table length must be >= 3, got {n}")
    return n


def positive_int(text: str) -> int:
    try:
        n = int(float(text)) if "e" in text.lower() else int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def seed_value(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if n < 0:
        raise argparse.ArgumentTypeError(f"seed must be non-negative, got {n}")
    return n


def grid(text: str) -> list[float]:
    """``lo:hi:n`` for n log-spaced values, or a comma-separated list."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            values = log_grid(float(lo), float(hi), int(n))
        else:
            values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use lo:hi:n or a,b,c") from None
    if not values or any(not 0 < v <= 1 for v in values):
        raise argparse.ArgumentTypeError(f"grid values must lie in (0, 1]: {text!r}")
    return values


def _add_model_flags(p: argparse.ArgumentParser, events: int) -> None:
    p.add_argument("--config", help="key=value file supplying defaults for these flags")
    p.add_argument("--table-len", type=table_length, default=10_000)
    p.add_argument("--pt", type=probability, default=0.9, help="table flip probability")
    p.add_argument("--ps", type=probability, default=0.1, help="set-memory probability")
    p.add_argument("--pd", type=probability, default=0.01, help="mixed-pair switch probability")
    p.add_argument("--alpha", type=float, default=2.0, help="same-pair switch factor on p_s")
    p.add_argument("--events", type=positive_int, default=events, help="emissions per run")
    p.add_argument("--seed", type=seed_value, default=None, help=f"master seed (or ${SEED_ENV})")
    p.add_argument("--force-change", action="store_true",
                   help="redraws never reproduce the current pair")
    p.add_argument("--out", help="write CSV here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bellmem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single run, one CSV row")
    _add_model_flags(p, 1_000_000)
    p.add_argument("--trace", help="write per-event trace CSV to this path")
    p.add_argument("--dump-table", action="store_true", help="print the table as 0/1 text")
    p.add_argument("--schedule-in", help="use this event,a,b CSV as the switching list")
    p.add_argument("--schedule-out", help="export the switching list used")

    p = sub.add_parser("batch", help="many runs, C histogram")
    _add_model_flags(p, 1_000_000)
    p.add_argument("--runs", type=positive_int, default=100)
    p.add_argument("--bins", type=positive_int, default=HIST_BINS)
    p.add_argument("--c-min", type=float, default=HIST_RANGE[0])
    p.add_argument("--c-max", type=float, default=HIST_RANGE[1])
    p.add_argument("--hist-out", help="histogram CSV path (default: after the run rows)")
    p.add_argument("--workers", type=positive_int, default=1)

    p = sub.add_parser("sweep", help="mean C over a p_s x p_d grid")
    _add_model_flags(p, 100_000)
    p.add_argument("--ps-grid", type=grid, default=log_grid(0.001, 0.5, 8))
    p.add_argument("--pd-grid", type=grid, default=log_grid(0.0001, 0.5, 8))
    p.add_argument("--runs-per-cell", type=positive_int, default=10)
    p.add_argument("--workers", type=positive_int, default=1)

    p = sub.add_parser("control", help="compare main apparatus with memoryless control")
    _add_model_flags(p, 100_000)
    p.add_argument("--runs", type=positive_int, default=100)
    p.add_argument("--workers", type=positive_int, default=1)

    p = sub.add_parser("strawman", help="fixed instruction-cycle source")
    p.add_argument("--config")
    p.add_argument("--phase", type=int, choices=range(4), default=None)
    p.add_argument("--cycles", type=positive_int, default=1)

    p = sub.add_parser("audit", help="no-signalling replay audit")
    _add_model_flags(p, 10_000)
    p.add_argument("--cases", type=positive_int, default=10)

    p = sub.add_parser("certify", help="enumerate deterministic local strategies")
    p.add_argument("--config")
    return parser


def read_config_file(path: str) -> dict[str, str]:
    values = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = value
    return values


def _apply_config(parser, argv, args) -> argparse.Namespace:
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    try:
        file_values = read_config_file(args.config)
    except OSError as exc:
        parser.error(f"cannot read config file: {exc}")
    except ConfigError as exc:
        parser.error(str(exc))
    for key, text in file_values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            parser.error(f"unknown key {key!r} in {args.config}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = text.lower() in ("1", "true", "yes", "on")
            continue
        try:
            value = action.type(text) if action.type else text
        except argparse.ArgumentTypeError as exc:
            parser.error(f"{args.config}: {key}: {exc}")
        if action.choices is not None and value not in action.choices:
            parser.error(f"{args.config}: {key}: invalid choice {value!r}")
        defaults[key] = value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _config_from_args(args) -> RunConfig:
    seed = args.seed
    if seed is None:
        env = os.environ.get(SEED_ENV)
        try:
            seed = seed_value(env) if env is not None else 0
        except argparse.ArgumentTypeError as exc:
            raise ConfigError(f"${SEED_ENV}: {exc}") from None
    return RunConfig(
        table_len=args.table_len,
        p_t=args.pt,
        p_s=args.ps,
        p_d=args.pd,
        alpha=args.alpha,
        n_events=args.events,
        seed=seed,
        force_change=args.force_change,
    )


def _emit(text: str, path: str | None, out) -> None:
    if path:
        Path(path).write_text(text)
    else:
        out.write(text)


def _cmd_run(args, out) -> int:
    cfg = _config_from_args(args)
    schedule = SettingSchedule.from_csv(args.schedule_in) if args.schedule_in else None
    result = run_experiment(cfg, schedule)
    if args.dump_table:
        out.write(result.table.to_string() + "\n")
    if args.schedule_out:
        result.schedule.to_csv(args.schedule_out)
    if args.trace:
        Path(args.trace).write_text(result.trace_csv())
    estimate = result.require_estimate()
    _emit(run_rows_csv([RunRow(cfg.seed, cfg.n_events, result.tally, estimate)]), args.out, out)
    return 0


def _cmd_batch(args, out) -> int:
    cfg = _config_from_args(args)
    batch = run_batch(cfg, args.runs, bins=args.bins, value_range=(args.c_min, args.c_max),
                      workers=args.workers)
    hist = batch.histogram.to_csv()
    if args.hist_out:
        Path(args.hist_out).write_text(hist)
        _emit(run_rows_csv(batch.runs), args.out, out)
    else:
        _emit(run_rows_csv(batch.runs) + "\n" + hist, args.out, out)
    mean, sem = batch.mean_sem()
    print(f"runs={len(batch.runs)} mean_C={mean!r} sem={sem!r}", file=sys.stderr)
    return 0


def _cmd_sweep(args, out) -> int:
    cfg = _config_from_args(args)
    result = sweep(args.ps_grid, args.pd_grid, cfg, args.runs_per_cell, workers=args.workers)
    _emit(result.to_csv(), args.out, out)
    for c in result.cells:
        if c.error:
            print(f"cell ps={c.p_s!r} pd={c.p_d!r}: {c.error}", file=sys.stderr)
    return 0


def _cmd_control(args, out) -> int:
    cfg = _config_from_args(args)
    main = run_batch(cfg, args.runs, workers=args.workers)
    ctrl = run_batch(cfg, args.runs, workers=args.workers, memoryless=True)
    best, _ = max_deterministic_chsh()
    rows = [("main", *main.mean_sem()), ("memoryless", *ctrl.mean_sem())]
    text = [
        f"p_t={cfg.p_t} p_s={cfg.p_s} p_d={cfg.p_d} alpha={cfg.alpha} "
        f"L={cfg.table_len} events={cfg.n_events} runs={args.runs} seed={cfg.seed}",
        f"max deterministic C = {best}",
    ]
    for name, mean, sem in rows:
        verdict = "exceeds 2 by > 3 SEM" if mean - 3 * sem > 2 else "within classical bound"
        text.append(f"{name}: mean C = {mean:.6f} +/- {sem:.6f} ({verdict})")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "mean_C", "sem", "n_runs"])
    for name, mean, sem in rows:
        w.writerow([name, repr(mean), repr(sem), args.runs])
    out.write("\n".join(text) + "\n\n")
    _emit(buf.getvalue(), args.out, out)
    return 0


def _cmd_strawman(args, out) -> int:
    if args.phase is not None:
        out.write(f"phase {args.phase}: C = {run_strawman(args.phase, args.cycles).C!r}\n")
        return 0
    report = strawman_phase_average()
    out.write("\n".join(report.lines()) + "\n")
    return 0


def _cmd_audit(args, out) -> int:
    cfg = _config_from_args(args)
    rng = np.random.default_rng(derive_seed(cfg.seed, 0xA0D17))
    failed = 0
    for case in range(args.cases):
        case_cfg = cfg.with_(seed=derive_seed(cfg.seed, case))
        side = "B" if case % 2 == 0 else "A"
        k = int(rng.integers(0, cfg.n_events))
        base = default_schedule(case_cfg)
        flipped = base.with_flip(k, side)
        if side == "B":
            report = no_signalling_audit(case_cfg, alternate_b_schedule=flipped)
            other_same = report.a_identical
        else:
            report = no_signalling_audit(case_cfg, alternate_a_schedule=flipped)
            other_same = report.b_identical
        ok = report.passed and other_same
        failed += not ok
        out.write(
            f"case {case}: flipped {side} at event {k}; "
            f"A identical={report.a_identical} B identical={report.b_identical} "
            f"first A diff={report.first_a_difference} first B diff={report.first_b_difference} "
            f"{'PASS' if ok else 'FAIL'}\n"
        )
    return EXIT_AUDIT if failed else 0


def _cmd_certify(args, out) -> int:
    best, argmax = max_deterministic_chsh()
    out.write(f"max deterministic C = {best}\n")
    for s in argmax:
        out.write(f"  (A1,A2,B1,B2) = ({s.a1},{s.a2},{s.b1},{s.b2})\n")
    return 0


COMMANDS = {
    "run": _cmd_run,
    "batch": _cmd_batch,
    "sweep": _cmd_sweep,
    "control": _cmd_control,
    "strawman": _cmd_strawman,
    "audit": _cmd_audit,
    "certify": _cmd_certify,
}


def main(argv=None, out=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            args = _apply_config(parser, argv, args)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, out)
    except UndefinedEstimateError as exc:
        print(f"bellmem: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except (ConfigError, OSError) as exc:
        print(f"bellmem: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
