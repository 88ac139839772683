"""Command-line entry point.

    bandloop <kind> --config run.yaml [--seed S] [--samples K] [--threads T]
                    [--out PATH] [--format csv|json] [--overwrite] [--timings]

Block indices in config files and reports are 1-based (block 1 covers sites
1..W); they are 0-based inside the library.

Exit codes: 0 success, 1 an acceptance check failed, 2 configuration error.
"""
from __future__ import annotations

import argparse
import sys

from .harness import KINDS, ConfigError, emit_report, load_config, report_bytes, run_experiment

EXIT_OK, EXIT_THRESHOLD, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bandloop", description="Block band matrix loop laboratory.")
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", required=True, help="YAML experiment file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the file)")
        p.add_argument("--samples", type=int, default=None, help="sample count (overrides the file)")
        p.add_argument("--threads", type=int, default=None, help="worker threads; results do not depend on it")
        p.add_argument("--out", default=None, help="report path; stdout when omitted")
        p.add_argument("--format", choices=("csv", "json"), default=None)
        p.add_argument("--overwrite", action="store_true", default=None, help="replace an existing report")
        p.add_argument("--timings", action="store_true", default=None, help="include wall-clock timings")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"kind": args.kind, "seed": args.seed, "samples": args.samples, "threads": args.threads,
                 "out": args.out, "format": args.format, "overwrite": args.overwrite, "timings": args.timings}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"bandloop: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = run_experiment(cfg)
    if cfg.out:
        try:
            emit_report(report, cfg.out, cfg.format, cfg.overwrite, cfg.timings)
        except FileExistsError as exc:
            print(f"bandloop: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    else:
        sys.stdout.buffer.write(report_bytes(report, cfg.format, cfg.timings))
        sys.stdout.flush()
    for c in report.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_THRESHOLD


if __name__ == "__main__":
    sys.exit(main())
