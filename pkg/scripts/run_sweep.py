"""Latency/throughput sweep over modes and fault rates for one or more patterns.

    python scripts/run_sweep.py --traffic transpose matrix --seeds 10 --out-dir out/sweep

Writes ``<out-dir>/<pattern>/series.csv`` and ``sweep.json`` and prints a table.
"""

import argparse
import logging
from pathlib import Path

from ftnoc import cli
from ftnoc.network import Mode


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--traffic", nargs="+", default=["transpose"], choices=cli.PATTERNS)
    ap.add_argument("--seeds", default="3", help="count N or a comma list")
    ap.add_argument("--rates", default=",".join(str(r) for r in cli.SWEEP_RATES))
    ap.add_argument("--modes", default=",".join(m.value for m in cli.SWEEP_MODES))
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out-dir", default="out/sweep")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    rates = tuple(float(r) for r in args.rates.split(","))
    modes = tuple(Mode(m) for m in args.modes.split(","))
    for pattern in args.traffic:
        base = cli.Settings(traffic=pattern, seeds=cli.parse_seeds(args.seeds),
                            out_dir=str(Path(args.out_dir) / pattern))
        rows = cli.sweep(base, rates=rates, modes=modes, jobs=args.jobs)
        print(f"\n{pattern}")
        print(cli.format_table(rows))


if __name__ == "__main__":
    main()
