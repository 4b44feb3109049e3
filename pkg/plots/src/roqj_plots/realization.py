"""Single-trajectory paths (one realization per CSV file)."""

from __future__ import annotations

import argparse
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .schema import SchemaError, read_series_csv

__all__ = ["plot_realization", "main"]


def _default_columns(data):
    if data.observables:
        return [f"obs_{name}" for name in data.observables]
    # fall back to the populations (diagonal entries present in every file)
    return sorted(
        (c for c in data.columns if c.startswith("re_rho_") and _is_diagonal(c)),
        key=lambda c: int(c.split("_")[2]),
    )


def _is_diagonal(col):
    _, _, i, j = col.split("_")
    return i == j


def plot_realization(record_csv, out_image, columns=None):
    """Draw the selected columns of one recorded trajectory and write the image.

    By default every obs_ column is drawn (or the populations when the file
    carries no observables).  A trajectory without jumps simply renders as a
    smooth curve.  Returns the matplotlib figure.
    """
    data = read_series_csv(record_csv)
    columns = columns or _default_columns(data)
    if not columns:
        raise ValueError("nothing to plot: no observables and no population columns")
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for name in columns:
        if name not in data.columns:
            raise SchemaError(f"{record_csv}: no column named {name!r}")
        line, = ax.plot(data.times, data.columns[name], "-", label=name)
        line.set_gid(f"real:{name}")
    ax.set_xlabel("t")
    ax.set_ylabel("value")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_image, dpi=150)
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="roqj-plot-realization",
        description="Draw a single recorded trajectory from a realization CSV.",
    )
    parser.add_argument("record", help="realization CSV")
    parser.add_argument(
        "--column", action="append", default=[],
        help="schema column to draw (default: all observables, else populations); repeatable",
    )
    parser.add_argument("--out", required=True, help="output image path")
    try:
        args = parser.parse_args(argv)
    except SystemExit:
        return 1
    try:
        fig = plot_realization(args.record, args.out, columns=args.column or None)
        plt.close(fig)
    except (SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
