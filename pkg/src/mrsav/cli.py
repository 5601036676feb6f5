"""Command-line harness for the Lorenz 96 statistics experiments.

Exit codes: 0 success, 1 usage/config error, 2 invariant failure,
3 I/O error.  The default output root honors the MRSAV_OUTPUT
environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import experiments as xp
from .experiments import (
    CheckpointError,
    ConfigError,
    ExperimentConfig,
    InvariantFailure,
    MissingReferenceError,
    TailSpillError,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVARIANT = 2
EXIT_IO = 3

OUTPUT_ENV = "MRSAV_OUTPUT"

DEFAULT_T_LADDER = "100,200,400,800,1600,3200,6400,12800"
DEFAULT_BIN_LADDER = "125,250,500,1000,2000,4000,8000,16000"
DEFAULT_DT_LADDER = "2^-6,2^-7,2^-8,2^-9,2^-10"
DEFAULT_INIT_LADDER = "100,200,400,800,1600,3200"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the CLI contract reserves 2
    # for invariant failures, so remap.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit2(message)


class SystemExit2(Exception):
    pass


def _parse_number(token: str) -> float:
    """Accept plain floats plus 2^k / 2**k tokens for time steps."""
    token = token.strip()
    for sep in ("^", "**"):
        if sep in token:
            base, exp = token.split(sep, 1)
            return float(base) ** float(exp)
    return float(token)


def _parse_ladder(text: str) -> list:
    try:
        return [_parse_number(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as err:
        raise ConfigError(f"bad ladder {text!r}: {err}") from None


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="parallel runs inside one command (default 1)")
    parser.add_argument("--output", metavar="DIR",
                        help=f"output directory (default ${OUTPUT_ENV} or ./mrsav-out)")
    parser.add_argument("--seed", type=int, metavar="U64", help="override run.seed")
    parser.add_argument("--checkpoint-interval", type=float, default=300.0, metavar="SECONDS",
                        help="wall-clock seconds between checkpoints (run command)")
    parser.add_argument("--resume", metavar="PATH", help="resume from a checkpoint (run command)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrsav", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="integrate one trajectory and store its statistics")
    _common(p)

    p = sub.add_parser("make-reference", help="build and store the reference distribution")
    _common(p)

    p = sub.add_parser("table-terminal-time", help="distances vs reference for growing T")
    _common(p)
    p.add_argument("--ladder", default=DEFAULT_T_LADDER, help="comma-separated terminal times")

    p = sub.add_parser("table-bins", help="distances across histogram resolutions")
    _common(p)
    p.add_argument("--ladder", default=DEFAULT_BIN_LADDER, help="comma-separated bin counts")
    p.add_argument("--window", type=int, default=5, help="moving-average window (bins)")

    p = sub.add_parser("table-dt", help="distances vs the finest-dt run")
    _common(p)
    p.add_argument("--ladder", default=DEFAULT_DT_LADDER,
                   help="comma-separated time steps (2^-k allowed)")
    p.add_argument("--reference-dt", default=None,
                   help="reference time step (default: smallest ladder entry)")

    p = sub.add_parser("table-initial-data", help="distances between perturbed initial data runs")
    _common(p)
    p.add_argument("--ladder", default=DEFAULT_INIT_LADDER, help="comma-separated terminal times")

    p = sub.add_parser("compare-orders", help="settling times of the 1st vs 2nd order scheme")
    _common(p)
    p.add_argument("--threshold", type=float, default=0.01,
                   help="relative moment error threshold (default 1%%)")
    p.add_argument("--reference-mean", type=float, default=None)
    p.add_argument("--reference-variance", type=float, default=None)

    p = sub.add_parser("check-invariants", help="run the invariant battery")
    _common(p)

    return parser


def _load_config(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_file(args.config)
    else:
        config = ExperimentConfig()
    if args.seed is not None:
        config = config.replace(run=dataclasses.replace(config.run, seed=args.seed))
    if args.output:
        config = config.replace(output=dataclasses.replace(config.output, directory=args.output))
    return config


def _outdir(args, config: ExperimentConfig) -> Path:
    if args.output:
        root = args.output
    elif config.output.directory != OutputSectionDefault:
        root = config.output.directory
    else:
        root = os.environ.get(OUTPUT_ENV, config.output.directory)
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    return out


OutputSectionDefault = "mrsav-out"


def _emit_table(rows, outdir: Path, config: ExperimentConfig, name: str, extra=None):
    formats = config.output.formats
    written = []
    if "csv" in formats:
        written.append(str(xp.write_table_csv(rows, outdir / f"{name}.csv")))
    if "json" in formats:
        written.append(str(xp.write_table_json(rows, outdir / f"{name}.json", config, name, extra)))
    config.dump(outdir / f"{name}_config.json")
    for path in written:
        print(path)


def _cmd_run(args, config, outdir):
    artifacts = xp.run_experiment(
        config,
        checkpoint_path=outdir / "checkpoint.npz",
        checkpoint_interval=args.checkpoint_interval,
        resume=args.resume,
    )
    paths = xp.write_run_outputs(artifacts, outdir)
    print(json.dumps(artifacts.summary, indent=2))
    print(paths["summary"])
    return EXIT_OK


def _cmd_make_reference(args, config, outdir):
    path = xp.make_reference(config, outdir)
    config.dump(outdir / "reference_config.json")
    print(path)
    return EXIT_OK


def _cmd_table_terminal_time(args, config, outdir):
    rows = xp.terminal_time_table(config, _parse_ladder(args.ladder), outdir)
    _emit_table(rows, outdir, config, "table_terminal_time")
    return EXIT_OK


def _cmd_table_bins(args, config, outdir):
    rows = xp.bins_table(config, [int(n) for n in _parse_ladder(args.ladder)], outdir,
                         window=args.window)
    _emit_table(rows, outdir, config, "table_bins", extra={"window": args.window})
    return EXIT_OK


def _cmd_table_dt(args, config, outdir):
    ref_dt = _parse_number(args.reference_dt) if args.reference_dt else None
    rows = xp.dt_table(config, _parse_ladder(args.ladder), reference_dt=ref_dt, jobs=args.jobs)
    _emit_table(rows, outdir, config, "table_dt", extra={"reference_dt": ref_dt})
    return EXIT_OK


def _cmd_table_initial_data(args, config, outdir):
    rows = xp.initial_data_table(config, _parse_ladder(args.ladder))
    _emit_table(rows, outdir, config, "table_initial_data")
    return EXIT_OK


def _cmd_compare_orders(args, config, outdir):
    moments = None
    if args.reference_mean is not None and args.reference_variance is not None:
        moments = (args.reference_mean, args.reference_variance)
    report = xp.compare_orders(config, threshold=args.threshold, reference_moments=moments,
                               outdir=outdir, jobs=args.jobs)
    payload = dataclasses.asdict(report)
    (outdir / "compare_orders.json").write_text(json.dumps(payload, indent=2) + "\n",
                                                encoding="utf-8")
    config.dump(outdir / "compare_orders_config.json")
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def _cmd_check_invariants(args, config, outdir):
    report = xp.check_invariants(config)
    text = report.to_json()
    (outdir / "invariants.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    if not report.passed:
        raise InvariantFailure("invariant battery reported failures")
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "make-reference": _cmd_make_reference,
    "table-terminal-time": _cmd_table_terminal_time,
    "table-bins": _cmd_table_bins,
    "table-dt": _cmd_table_dt,
    "table-initial-data": _cmd_table_initial_data,
    "compare-orders": _cmd_compare_orders,
    "check-invariants": _cmd_check_invariants,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(args)
        outdir = _outdir(args, config)
        return _COMMANDS[args.command](args, config, outdir)
    except SystemExit2 as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError, MissingReferenceError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (InvariantFailure, TailSpillError) as err:
        print(f"invariant failure: {err}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
