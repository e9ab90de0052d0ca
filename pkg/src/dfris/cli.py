"""Command-line driver: ``dfris sweep | trace | validate``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import experiments
from .config import ConfigError, ScenarioConfig, dump_config, load_config


def _load(args) -> ScenarioConfig:
    config = load_config(args.config) if args.config else ScenarioConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["base_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    return replace(config, **overrides) if overrides else config


def cmd_sweep(args) -> int:
    config = _load(args)
    rows = experiments.run_sweep(config, threads=args.threads)
    experiments.write_rows_csv(rows, args.out, timing=args.timing)
    summary = experiments.summarize(rows)
    experiments.write_summary_csv(summary, experiments.summary_path(args.out))
    for s in summary:
        print(f"{s.sweep_parameter or 'base'}={experiments.fmt(s.sweep_value)}: "
              f"{s.mean:.4f} +/- {s.stderr:.4f} bps/Hz ({s.ok}/{s.trials} ok)")
    failed = sum(r.status != "ok" for r in rows)
    if failed:
        print(f"{failed} trial(s) failed; see the status column", file=sys.stderr)
    return 0


def cmd_trace(args) -> int:
    config = _load(args)
    rows = experiments.emit_convergence_trace(config, args.seed, args.out)
    last = rows[-1]
    print(f"{len(rows)} iterations, final sum rate {last.sum_rate:.6f} bps/Hz")
    return 0


def cmd_validate(args) -> int:
    config = _load(args)
    sys.stdout.write(dump_config(config))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dfris", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", metavar="PATH", help="scenario YAML (defaults if omitted)")
        if out:
            p.add_argument("--out", metavar="PATH", required=True, help="CSV output path")

    p = sub.add_parser("sweep", help="Monte-Carlo sweep -> per-trial CSV plus a .summary.csv")
    common(p)
    p.add_argument("--seed", type=int, help="override base_seed")
    p.add_argument("--trials", type=int, help="override the trial count")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--timing", action="store_true",
                   help="add a wall_time column (output is then not byte-reproducible)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("trace", help="per-iteration convergence trace of one run")
    common(p)
    p.add_argument("--seed", type=int, help="channel and initialization seed")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    common(p, out=False)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "trials", None) is not None and args.trials < 1:
        parser.error("--trials must be >= 1")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    if getattr(args, "seed", None) is not None and args.seed < 0:
        parser.error("--seed must be nonnegative")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"dfris: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"dfris: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"dfris: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
