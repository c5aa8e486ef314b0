#!/usr/bin/env python3
"""Plot loss/accuracy curves and per-size score means from a run directory.

Reads history.csv and score_table.txt as written by ``dilseg train`` and
saves a two-panel figure next to them (or to --out).
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from dilseg.scheduler import ScoreTable


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("run_dir", type=Path)
    parser.add_argument("--out", type=Path, default=None)
    parser.add_argument("--smooth", type=int, default=25, help="moving-average window")
    args = parser.parse_args()

    rows = []
    with open(args.run_dir / "history.csv", newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            rows.append(
                (int(row["step"]), int(row["size"]), float(row["loss"]), float(row["accuracy"]))
            )
    steps = [r[0] for r in rows]
    loss = [r[2] for r in rows]
    accuracy = [r[3] for r in rows]

    def smooth(series):
        if args.smooth <= 1:
            return series
        out = []
        for i in range(len(series)):
            lo = max(0, i - args.smooth + 1)
            out.append(sum(series[lo : i + 1]) / (i - lo + 1))
        return out

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    ax1.plot(steps, smooth(loss), label="loss")
    ax1.plot(steps, smooth(accuracy), label="batch accuracy")
    ax1.set_xlabel("step")
    ax1.legend()
    ax1.set_title("training curves")

    table = ScoreTable.load(args.run_dir / "score_table.txt")
    means = table.mean_scores()
    ax2.bar([str(s) for s in means], list(means.values()))
    ax2.set_xlabel("patch size")
    ax2.set_ylabel(f"mean {table.mode}")
    ax2.set_title(f"score table (best: {table.best_size() if means else '-'})")

    out = args.out or args.run_dir / "history.png"
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
