"""Plot latency and throughput against fault rate from ``sweep.json`` files.

    python scripts/plot_sweep.py out/sweep/transpose out/sweep/uniform -o out/sweep.png

Needs matplotlib (``pip install artifact[plot]``).
"""

import argparse
import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def load(run_dir: Path):
    series = defaultdict(list)
    for row in json.loads((run_dir / "sweep.json").read_text()):
        series[row["mode"]].append((row["rate"], row["latency"], row["throughput"]))
    return {m: sorted(v) for m, v in series.items()}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("runs", nargs="+", type=Path, help="directories holding sweep.json")
    ap.add_argument("-o", "--output", default="sweep.png")
    args = ap.parse_args()

    fig, axes = plt.subplots(2, len(args.runs), figsize=(4 * len(args.runs), 6), squeeze=False)
    for col, run in enumerate(args.runs):
        for mode, pts in load(run).items():
            rates = [100 * r for r, _, _ in pts]
            axes[0][col].plot(rates, [lat if lat is not None else float("nan") for _, lat, _ in pts],
                              marker="o", label=mode)
            axes[1][col].plot(rates, [thr for _, _, thr in pts], marker="o", label=mode)
        axes[0][col].set_title(run.name)
        axes[0][col].set_ylabel("avg latency (cycles)")
        axes[1][col].set_ylabel("throughput (flits/cycle/node)")
        axes[1][col].set_xlabel("fault rate (%)")
    axes[0][0].legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
