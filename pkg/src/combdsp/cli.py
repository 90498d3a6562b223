"""Command-line experiment runner.

Verbs: validate a config, print the expanded sweep grid, run the sweep,
or re-emit a result file in another format.  Exit codes: 0 full success,
2 completed with flagged rows, 1 validation or runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import CombDspError
from .harness import (
    CSV_COLUMNS,
    emit_results,
    load_config,
    load_results,
    run_experiment,
    sweep_table,
    validate,
)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="combdsp",
        description="Comb superchannel simulation and joint-DSP experiment runner",
    )
    sub = p.add_subparsers(dest="verb", required=True)

    v = sub.add_parser("validate", help="check a config file and report problems")
    v.add_argument("config")

    t = sub.add_parser("sweep-table", help="print the expanded sweep grid without running")
    t.add_argument("config")

    r = sub.add_parser("run", help="run the full sweep")
    r.add_argument("config")
    r.add_argument("--output", "-o", default="results.csv")
    r.add_argument("--format", choices=["csv", "json-lines"], default="csv")
    r.add_argument("--seed", type=int, default=None,
                   help="override the config's seed list with a single seed")
    r.add_argument("--parallel", "-j", type=int, default=1)

    e = sub.add_parser("emit", help="convert a result file to another format")
    e.add_argument("results")
    e.add_argument("--output", "-o", required=True)
    e.add_argument("--format", choices=["csv", "json-lines"], default="csv")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "validate":
            config = load_config(args.config)
            problems = validate(config)
            if problems:
                for prob in problems:
                    print(f"problem: {prob}", file=sys.stderr)
                return 1
            print("config ok")
            return 0
        if args.verb == "sweep-table":
            config = load_config(args.config)
            cells = sweep_table(config)
            print("beta,constellation,symbol_rate,mode,seed,batch")
            for c in cells:
                print(f"{c['beta']:g},{c['constellation']},{c['symbol_rate']:g},"
                      f"{c['mode']},{c['seed']},{c['batch']}")
            return 0
        if args.verb == "run":
            config = load_config(args.config)
            if args.seed is not None:
                config.seeds = [args.seed]
            rows = run_experiment(config, parallelism=args.parallel)
            emit_results(rows, args.format, args.output)
            flagged = sum(1 for r in rows if r.flags)
            print(f"{len(rows)} rows -> {args.output}"
                  + (f" ({flagged} flagged)" if flagged else ""))
            return 2 if flagged else 0
        if args.verb == "emit":
            rows = load_results(args.results)
            emit_results(rows, args.format, args.output)
            print(f"{len(rows)} rows -> {args.output}")
            return 0
    except CombDspError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
