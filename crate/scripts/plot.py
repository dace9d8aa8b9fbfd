#!/usr/bin/env python3
"""Render figures from hjbac CSV artifacts.

Usage: plot.py [RUN_DIR] [-o FIG_DIR]

Looks for training_curve.csv, density.csv, and compare.csv inside RUN_DIR
(default: out/) and writes one PNG per file found into FIG_DIR
(default: RUN_DIR/figures).
"""

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def column(header: list[str], rows: list[list[str]], name: str) -> list[float]:
    i = header.index(name)
    return [float(r[i]) for r in rows]


def plot_training_curve(path: Path, out: Path) -> None:
    header, rows = read_csv(path)
    iters = column(header, rows, "iter")
    fig, (ax_err, ax_loss) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)

    for name, label in (("err_v", "relative error in V"), ("err_u", "relative error in u")):
        vals = column(header, rows, name)
        pts = [(i, v) for i, v in zip(iters, vals) if v == v]  # drop NaN
        if pts:
            ax_err.semilogy([p[0] for p in pts], [p[1] for p in pts], label=label)
    ax_err.set_ylabel("validation error")
    ax_err.legend()
    ax_err.grid(True, which="both", alpha=0.3)

    for name in ("critic_loss", "boundary_loss", "actor_loss"):
        vals = column(header, rows, name)
        pts = [(i, v) for i, v in zip(iters, vals) if v == v and v > 0]
        if pts:
            ax_loss.semilogy([p[0] for p in pts], [p[1] for p in pts], label=name)
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_loss.grid(True, which="both", alpha=0.3)

    fig.suptitle(path.parent.name + ": training")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def plot_density(path: Path, out: Path) -> None:
    header, rows = read_csv(path)
    centers = column(header, rows, "bin_center")
    width = centers[1] - centers[0] if len(centers) > 1 else 1.0
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(centers, column(header, rows, "learned_density"), width=width,
           alpha=0.5, label="learned control")
    ax.step(centers, column(header, rows, "true_density"), where="mid",
            color="black", label="exact control")
    ax.set_xlabel("|X_T|")
    ax.set_ylabel("density")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.suptitle(path.parent.name + ": terminal radius density")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def plot_compare(path: Path, out: Path) -> None:
    header, rows = read_csv(path)
    labels = ["/".join(r[:2]) for r in rows]
    err_v = column(header, rows, "err_v")
    err_u = column(header, rows, "err_u")
    xs = range(len(labels))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar([x - 0.2 for x in xs], err_v, width=0.4, label="err_v")
    ax.bar([x + 0.2 for x in xs], err_u, width=0.4, label="err_u")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_yscale("log")
    ax.set_ylabel("relative error")
    ax.legend()
    ax.grid(True, axis="y", which="both", alpha=0.3)
    fig.suptitle(path.parent.name + f": sweep over {header[0]},{header[1]}")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("run_dir", nargs="?", default="out", type=Path)
    ap.add_argument("-o", "--fig-dir", type=Path, default=None)
    args = ap.parse_args()

    fig_dir = args.fig_dir or args.run_dir / "figures"
    plotters = {
        "training_curve.csv": plot_training_curve,
        "density.csv": plot_density,
        "compare.csv": plot_compare,
    }
    made = 0
    for name, fn in plotters.items():
        src = args.run_dir / name
        if not src.is_file():
            continue
        fig_dir.mkdir(parents=True, exist_ok=True)
        dst = fig_dir / (src.stem + ".png")
        fn(src, dst)
        print(f"wrote {dst}")
        made += 1
    if made == 0:
        print(f"no hjbac CSV artifacts found in {args.run_dir}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
