#!/usr/bin/env python3
"""Render decoder-trajectory CSVs as figures.

Reads the trajectory CSV format produced by the metpeel CLI (a leading
`# generator:` comment, a header row, then full-precision doubles) and plots
selected series against either the edge-weighted average xbar or the time
axis t.  Analytic curves are drawn as solid lines; empirical per-trial files
are overlaid as faint traces plus their mean.

Usage:
    render.py --analytic traj.csv [--empirical trial0.csv ...]
              [--x xbar|t] [--series mu1_1,mu1_2] --out fig.png
"""

from __future__ import annotations

import argparse
import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


class RenderError(Exception):
    pass


def read_trajectory(path):
    """Column name -> list of floats; comment lines are skipped."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise RenderError(f"{path}: empty trajectory file")
    header, data = rows[0], rows[1:]
    if not data:
        raise RenderError(f"{path}: no data rows")
    cols = {name: [] for name in header}
    for row in data:
        for name, value in zip(header, row):
            cols[name].append(float(value))
    return cols


def pick(cols, names, path):
    missing = [n for n in names if n not in cols]
    if missing:
        raise RenderError(f"{path}: missing columns: {', '.join(missing)}")
    return [cols[n] for n in names]


def default_series(cols):
    out = [n for n in cols if n.startswith("mu1_") and not n.startswith("mu1_emp")]
    if not out:
        raise RenderError("no mu1_* columns found; use --series to pick columns")
    return out


def render(analytic_path, empirical_paths, x_axis, series, out_path):
    cols = read_trajectory(analytic_path)
    names = series or default_series(cols)
    (xs,) = pick(cols, [x_axis], analytic_path)
    ys = pick(cols, names, analytic_path)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    palette = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for k, (name, y) in enumerate(zip(names, ys)):
        ax.plot(xs, y, color=palette[k % len(palette)], lw=1.8, label=name)

    if empirical_paths:
        # per-trial overlays carry time and degree-1 counts only
        emp_names = [n.replace("mu1_", "mu1_emp_") for n in names]
        stacks = []
        for path in empirical_paths:
            ecols = read_trajectory(path)
            (ex,) = pick(ecols, [x_axis], path)
            eys = pick(ecols, emp_names, path)
            stacks.append((ex, eys))
            for k, y in enumerate(eys):
                ax.plot(ex, y, color=palette[k % len(palette)], lw=0.6, alpha=0.25)
        n_rows = min(len(s[0]) for s in stacks)
        for k in range(len(names)):
            mean = [
                sum(s[1][k][i] for s in stacks) / len(stacks) for i in range(n_rows)
            ]
            ax.plot(
                stacks[0][0][:n_rows], mean,
                color=palette[k % len(palette)], lw=1.2, ls="--",
                label=f"{emp_names[k]} (mean of {len(stacks)})",
            )

    ax.set_xlabel(x_axis)
    ax.set_ylabel("fraction of N")
    ax.grid(True, alpha=0.3)
    ax.legend()
    if x_axis == "xbar":
        ax.invert_xaxis()  # decoding runs from xbar=1 toward 0
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--analytic", required=True, help="analytic trajectory CSV")
    parser.add_argument(
        "--empirical", action="append", default=[], help="per-trial empirical CSV (repeatable)"
    )
    parser.add_argument("--x", choices=("xbar", "t"), default="xbar", dest="x_axis")
    parser.add_argument("--series", help="comma-separated column names (default: all mu1_*)")
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    series = args.series.split(",") if args.series else None
    try:
        render(args.analytic, args.empirical, args.x_axis, series, args.out)
    except (RenderError, OSError) as exc:
        print(f"render: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
