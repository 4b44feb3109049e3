"""Simulated points with error bars overlaid on exact curves."""

from __future__ import annotations

import argparse
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .schema import SchemaError, read_series_csv

__all__ = ["plot_compare", "main"]


def _series_for(data, name, path):
    if name in data.observables:
        return data.observables[name]
    if name in data.columns:
        return data.columns[name], None
    raise SchemaError(f"{path}: no observable or column named {name!r}")


def plot_compare(sim_csv, exact_csv, observables, out_image):
    """Draw each observable as circles + error bars (sim) over a solid line
    (exact) and write the image.  Returns the matplotlib figure.

    `observables` may name obs_ columns (without the prefix) or raw schema
    columns such as re_rho_0_1.
    """
    if not observables:
        raise ValueError("at least one observable name is required")
    sim = read_series_csv(sim_csv)
    exact = read_series_csv(exact_csv)
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for k, name in enumerate(observables):
        sim_mean, sim_err = _series_for(sim, name, sim_csv)
        exact_mean, _ = _series_for(exact, name, exact_csv)
        color = colors[k % len(colors)]
        line, = ax.plot(exact.times, exact_mean, "-", color=color, label=f"{name} (exact)")
        line.set_gid(f"exact:{name}")
        container = ax.errorbar(
            sim.times, sim_mean,
            yerr=None if sim_err is None else sim_err,
            fmt="o", markersize=4, markerfacecolor="none", color=color,
            label=f"{name} (simulation)",
        )
        container.lines[0].set_gid(f"sim:{name}")
    ax.set_xlabel("t")
    ax.set_ylabel("observable")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_image, dpi=150)
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="roqj-plot-compare",
        description="Overlay simulated observables (circles, error bars) on exact curves (lines).",
    )
    parser.add_argument("sim", help="simulation CSV")
    parser.add_argument("exact", help="exact/reference CSV")
    parser.add_argument(
        "--observable", action="append", default=[],
        help="observable (or schema column) to draw; repeatable",
    )
    parser.add_argument("--out", required=True, help="output image path (png, svg, pdf)")
    try:
        args = parser.parse_args(argv)
    except SystemExit:
        return 1
    if not args.observable:
        print("usage error: give at least one --observable", file=sys.stderr)
        return 1
    try:
        fig = plot_compare(args.sim, args.exact, args.observable, args.out)
        plt.close(fig)
    except (SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
