"""Flat-file plot emission (no interactive UI): metric-vs-parameter lines,
prompt-optimization loss curves, and round-trip error studies."""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def plot_lines(x, series: dict, xlabel: str, ylabel: str, path, title: str | None = None) -> None:
    """One line per series entry over a shared x axis, written as a raster file."""
    fig, ax = plt.subplots(figsize=(5.5, 4.0), dpi=120)
    for label, ys in series.items():
        ax.plot(x, ys, marker="o", markersize=3.5, linewidth=1.2, label=str(label))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_loss_log(loss_log, path, title: str | None = None) -> None:
    """Total/structural/style loss against the cumulative inner step, in the
    order the optimizer visited them (t = T down to 1)."""
    steps = list(range(len(loss_log)))
    total = [row[4] for row in loss_log]
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
    ax.plot(steps, total, linewidth=1.0, label="total")
    struct = [(i, row[2]) for i, row in enumerate(loss_log) if not math.isnan(row[2])]
    style = [(i, row[3]) for i, row in enumerate(loss_log) if not math.isnan(row[3])]
    if struct:
        ax.plot([p[0] for p in struct], [p[1] for p in struct], linewidth=0.8, alpha=0.7, label="structural")
    if style:
        ax.plot([p[0] for p in style], [p[1] for p in style], linewidth=0.8, alpha=0.7, label="style")
    ax.set_xlabel("inner optimization step (t = T .. 1)")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_error_study(rows, path, value_key: str = "mean_ssim") -> None:
    """Round-trip quality vs step count, one line per (condition mode, prompted)."""
    groups = {}
    for row in rows:
        label = f"{row['mode']}{' +prompt' if row['prompted'] else ''}"
        groups.setdefault(label, []).append((int(row["t"]), float(row[value_key])))
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
    for label, pts in sorted(groups.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", markersize=3.5, label=label)
    ax.set_xlabel("inversion steps T")
    ax.set_ylabel(value_key)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
