"""Command-line interface: ``run <spec-file>``, ``list`` and ``certify-all``."""

from __future__ import annotations

import argparse
import sys

from . import bench
from .errors import ConfigError


def _print_report(rep: bench.RunReport) -> None:
    print(f"[{rep.spec.label}] {rep.wall_clock:.1f}s")
    for k, v in rep.metrics.items():
        print(f"  {k} = {bench._fmt(v)}")
    for k, ok in rep.criteria.items():
        print(f"  {k}: {'PASS' if ok else 'FAIL'}  {bench.CRITERIA.get(k, '')}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="riemctl", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in ("run", "certify-all"):
        sp = sub.add_parser(name)
        if name == "run":
            sp.add_argument("spec_file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--svg", action="store_true")
    sub.add_parser("list")
    args = ap.parse_args(argv)

    if args.cmd == "list":
        for pid, desc in bench.list_problems().items():
            print(f"{pid}\t{desc}")
        return 0
    try:
        if args.cmd == "run":
            specs = bench.load_specs(args.spec_file, args.seed, args.out, args.svg)
        else:
            specs = bench.default_specs(args.seed or 0, args.out or "results", args.svg)
        reports = []
        for spec in specs:
            rep = bench.run_experiment(spec)
            _print_report(rep)
            reports.append(rep)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
