"""Command-line entry point: ``obspart run|sweep|validate``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .config import SWEEP_KINDS, load_config
from .errors import ConfigError, ObsPartError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for per-path evaluation")
    common.add_argument("--output-dir", help="directory for result files (default: config output_dir)")
    common.add_argument("--repeats", type=int, help="timed repeats after one discarded warm-up")

    p = argparse.ArgumentParser(prog="obspart", description="Entropy-bound planning with observation-space partitioning.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="plan once (and re-plan if configured)")
    run.add_argument("config")
    sweep = sub.add_parser("sweep", parents=[common], help="run a benchmark sweep")
    sweep.add_argument("kind", choices=SWEEP_KINDS)
    sweep.add_argument("config")
    val = sub.add_parser("validate", help="check a config file and exit")
    val.add_argument("config")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok")
            return EXIT_OK
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be non-negative", field="--seed")
            cfg = replace(cfg, seed=args.seed)
        if args.repeats is not None and args.repeats < 1:
            raise ConfigError("repeats must be positive", field="--repeats")
        if args.threads < 1:
            raise ConfigError("threads must be positive", field="--threads")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    # imported late so that `validate` stays light
    from .runner import run_scenario, run_sweep

    out = args.output_dir or cfg.output_dir
    try:
        if args.command == "run":
            report = run_scenario(cfg, out, threads=args.threads, repeats=args.repeats)
            sel = report["selection"]
            print(json.dumps({"chosen_id": sel["chosen_id"], "loss_bound": sel["loss_bound"],
                              "pruned_fraction": sel["pruned_fraction"], "output_dir": os.path.abspath(out)}))
        else:
            rows = run_sweep(args.kind, cfg, out, repeats=args.repeats)
            print(f"sweep_{args.kind}.csv: {len(rows)} rows in {os.path.abspath(out)}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ObsPartError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
