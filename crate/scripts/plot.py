#!/usr/bin/env python3
"""Quick plots of glioma CSV output. Not part of the test surface.

    scripts/plot.py km out/table-ct/km_NT.csv out/table-ct/km_10T.csv -o km.png
    scripts/plot.py sweep out/sweep-tmz-cycles/sweep.csv -o f6.png
    scripts/plot.py trajectory out/sim/trajectory.csv -o traj.png
"""
import argparse
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def km(files, ax):
    for f in files:
        d = pd.read_csv(f)
        label = os.path.basename(f).removeprefix("km_").removesuffix(".csv")
        ax.step(d.time_days, d.survival, where="post", label=label)
    ax.set_xlabel("days")
    ax.set_ylabel("survival")


def sweep(files, ax):
    for f in files:
        d = pd.read_csv(f, na_values=["NR"])
        for ratio, g in d.groupby("r2_ratio"):
            ax.plot(g.value, g.median_days, "o-", label=f"r2/r1 = {ratio:g}")
        ax.set_xlabel(d.kind.iloc[0])
    ax.set_ylabel("median survival, days")


def trajectory(files, ax):
    d = pd.read_csv(files[0])
    for col in ["S", "RC", "RE", "C", "total"]:
        ax.semilogy(d.time_days, d[col].clip(lower=1.0), label=col)
    ax.set_xlabel("days")
    ax.set_ylabel("cells")


def main():
    p = argparse.ArgumentParser()
    p.add_argument("kind", choices=["km", "sweep", "trajectory"])
    p.add_argument("files", nargs="+")
    p.add_argument("-o", "--output", default="plot.png")
    a = p.parse_args()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    {"km": km, "sweep": sweep, "trajectory": trajectory}[a.kind](a.files, ax)
    ax.legend()
    fig.tight_layout()
    fig.savefig(a.output, dpi=120)


if __name__ == "__main__":
    main()
