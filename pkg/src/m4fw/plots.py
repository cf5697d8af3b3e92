"""Static figures for CLI reports: a matplotlib PNG and a matching gnuplot script."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_PNG_META = {"Software": None}


def line_png(x, series: dict, xlabel: str, ylabel: str, title: str, logy: bool = False) -> bytes:
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    for name, ys in series.items():
        ax.plot(x, ys, marker="o", markersize=3, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if logy:
        ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata=_PNG_META)
    plt.close(fig)
    return buf.getvalue()


def bar_png(labels, series: dict, ylabel: str, title: str) -> bytes:
    fig, ax = plt.subplots(figsize=(7, 4), dpi=100)
    width = 0.8 / max(len(series), 1)
    for k, (name, ys) in enumerate(series.items()):
        ax.bar([i + k * width for i in range(len(labels))], ys, width=width, label=name)
    ax.set_xticks([i + width * (len(series) - 1) / 2 for i in range(len(labels))])
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata=_PNG_META)
    plt.close(fig)
    return buf.getvalue()


def gnuplot_script(csv_name: str, png_name: str, x_col: int, y_cols: dict, xlabel: str, ylabel: str,
                   title: str, logy: bool = False) -> str:
    """Script that redraws the figure from the CSV; ``y_cols`` maps 1-based column -> legend."""
    lines = [
        "set terminal pngcairo size 600,400",
        f"set output '{png_name}'",
        "set datafile separator ','",
        f"set title '{title}'",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
        "set key left top",
        "set grid",
    ]
    if logy:
        lines.append("set logscale y")
    plots = [f"'{csv_name}' using {x_col}:{c} skip 1 with linespoints title '{name}'"
             for c, name in y_cols.items()]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"
