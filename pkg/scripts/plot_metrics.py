#!/usr/bin/env python3
"""Plot per-timestep metric curves and training losses from pipeline CSVs.

Usage: plot_metrics.py --metrics runs/pipeline/metrics/metrics_timestep.csv
                       [--losses runs/pipeline/ckpt/*.csv] [--out plots/]
"""

import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--metrics", required=True, help="metrics_timestep.csv")
    ap.add_argument("--losses", nargs="*", default=[], help="training loss CSVs")
    ap.add_argument("--out", default="plots")
    args = ap.parse_args()

    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is required: pip install matplotlib", file=sys.stderr)
        return 1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = read_rows(args.metrics)
    by_model = defaultdict(list)
    for row in rows:
        by_model[row["model"]].append(row)

    for metric, label in (("mse", "occupancy MSE"),
                          ("is", "image similarity (Manhattan)"),
                          ("dyn_mse", "dynamic-cell MSE")):
        fig, ax = plt.subplots(figsize=(6, 4))
        for model, mrows in sorted(by_model.items()):
            t = [float(r["timestep_s"]) for r in mrows]
            v = [float(r[metric]) for r in mrows]
            se = [float(r[f"{metric}_se"]) for r in mrows]
            ax.errorbar(t, v, yerr=se, marker="o", markersize=3,
                        capsize=2, label=model)
        ax.set_xlabel("prediction horizon [s]")
        ax.set_ylabel(label)
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(out / f"{metric}_vs_horizon.png", dpi=150)
        plt.close(fig)
        print(f"wrote {out / f'{metric}_vs_horizon.png'}")

    if args.losses:
        fig, ax = plt.subplots(figsize=(6, 4))
        for path in args.losses:
            rows = read_rows(path)
            epochs = [int(r["epoch"]) for r in rows]
            losses = [float(r["loss"]) for r in rows]
            ax.plot(epochs, losses, marker="o", markersize=3, label=Path(path).stem)
        ax.set_xlabel("epoch")
        ax.set_ylabel("training loss")
        ax.set_yscale("log")
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(out / "training_loss.png", dpi=150)
        plt.close(fig)
        print(f"wrote {out / 'training_loss.png'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
