"""Render run outputs to figures.

The CSV files are the data boundary; everything here is derived from them
(or from an in-memory benchmark result) and written as PNG files next to
the delimited output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fileio import read_grid_csv, read_metrics_csv

METRIC_COLUMNS = (
    ("rmse", "prediction RMSE"),
    ("kld", "fleet/demand KL divergence"),
    ("avg_cruise", "average cruise length"),
    ("avg_wait", "average user wait"),
    ("total_pickups", "total pickups"),
)


def render_metrics_figures(labeled_csvs, out_dir) -> list:
    """One PNG per metric, overlaying all given (label, csv path) runs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = [(label, read_metrics_csv(path)) for label, path in labeled_csvs]
    written = []
    for column, title in METRIC_COLUMNS:
        fig, ax = plt.subplots(figsize=(6.0, 3.6))
        for label, data in runs:
            ax.plot(data["step"], data[column], label=label, linewidth=1.2)
        ax.set_xlabel("step")
        ax.set_ylabel(title)
        ax.grid(alpha=0.3)
        if len(runs) > 1:
            ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"{column}.png"
        fig.savefig(path, dpi=130)
        plt.close(fig)
        written.append(path)
    return written


def render_field_figure(demand_csv, out_path) -> Path:
    """Heatmap of a demand (or supply) CSV; excluded regions show as gaps."""
    ids, values, rows, cols = read_grid_csv(Path(demand_csv), "demand")
    grid = np.full(rows * cols, np.nan)
    grid[ids] = values
    fig, ax = plt.subplots(figsize=(6.0, 6.0 * rows / max(cols, 1)))
    im = ax.imshow(grid.reshape(rows, cols), origin="upper", cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.8, label="demand")
    ax.set_xlabel("col")
    ax.set_ylabel("row")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def render_bench_figure(result, out_path) -> Path:
    """Log-scale bar chart of per-vehicle times by algorithm and data size."""
    sizes = sorted({r.data_size for r in result.rows})
    algos = ("fgp", "gpddf", "gpddf+")
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    width = 0.8 / len(sizes)
    x = np.arange(len(algos))
    for j, size in enumerate(sizes):
        times = [
            next(r.per_vehicle_ms for r in result.rows if r.algorithm == a and r.data_size == size)
            for a in algos
        ]
        ax.bar(x + j * width, times, width, label=f"|D|={size}")
    ax.set_yscale("log")
    ax.set_xticks(x + width * (len(sizes) - 1) / 2)
    ax.set_xticklabels(algos)
    ax.set_ylabel("per-vehicle time (ms)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path
