"""CSV output and matplotlib figures rendered next to it."""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(value).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path, header, rows):
    """UTF-8, LF line endings, floats at 17 significant digits."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def running_mean(x, window):
    """Trailing mean over at most ``window`` samples."""
    x = np.asarray(x, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    hi = np.arange(1, x.size + 1)
    lo = np.maximum(hi - window, 0)
    return (c[hi] - c[lo]) / (hi - lo)


def plot_training(rows, path, budget=None):
    """Cost, constraint and multiplier against episode."""
    plt = _pyplot()
    data = np.array([[float(v) for v in r[:5]] for r in rows]) if rows else np.zeros((0, 5))
    ep, cost, std, con, lam = data.T if len(data) else [np.zeros(0)] * 5
    window = max(1, len(ep) // 20)
    fig, axes = plt.subplots(3, 1, figsize=(6.4, 7.2), sharex=True)
    axes[0].plot(ep, cost, lw=0.6, alpha=0.4, color="C0")
    axes[0].plot(ep, running_mean(cost, window), color="C0")
    axes[0].set_ylabel("discounted cost")
    if len(cost) and np.all(cost > 0):
        axes[0].set_yscale("log")
    axes[1].plot(ep, con, lw=0.6, alpha=0.4, color="C1")
    axes[1].plot(ep, running_mean(con, window), color="C1")
    axes[1].axhline(0.0, color="k", lw=0.8)
    if budget is not None:
        axes[1].axhline(budget, color="k", lw=0.8, ls="--")
    axes[1].set_ylabel("discounted constraint")
    axes[2].plot(ep, lam, color="C2")
    axes[2].set_ylabel("multiplier")
    axes[2].set_xlabel("episode")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_dagger(rows, path):
    plt = _pyplot()
    it = [int(r[0]) for r in rows]
    loss = [float(r[1]) for r in rows]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(it, loss)
    ax.set_xlabel("DAgger iteration")
    ax.set_ylabel("imitation loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_eval(rows, path):
    """Mean cost per plant with one-std error bars, log scale."""
    plt = _pyplot()
    names = [r[0] for r in rows]
    mean = np.array([float(r[1]) for r in rows])
    std = np.array([float(r[2]) for r in rows])
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    x = np.arange(len(names))
    ax.bar(x, mean, color=[f"C{i}" for i in range(len(names))])
    ax.errorbar(x, mean, yerr=np.vstack([np.minimum(std, mean * 0.999), std]), fmt="none", ecolor="k", capsize=3)
    ax.set_xticks(x, names, rotation=20)
    if len(mean) and np.all(mean > 0):
        ax.set_yscale("log")
    ax.set_ylabel("cost per plant")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_transfer(rows, path):
    """Cost per plant against network size, one line per policy."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    policies = list(dict.fromkeys(r[1] for r in rows))
    for i, name in enumerate(policies):
        pts = sorted((int(r[0]), float(r[2])) for r in rows if r[1] == name)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", color=f"C{i}", label=name)
    ax.set_xlabel("plants m")
    ax.set_ylabel("cost per plant")
    vals = [float(r[2]) for r in rows]
    if vals and min(vals) > 0 and max(vals) / min(vals) > 100 and not any(math.isinf(v) for v in vals):
        ax.set_yscale("log")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


_PLOTTERS = {
    "episode": plot_training,
    "iteration": plot_dagger,
    "policy": plot_eval,
    "m": plot_transfer,
}


def render_csv(path):
    """Render the figure matching a CSV written by the harness (PNG beside it)."""
    path = Path(path)
    header, rows = read_csv(path)
    plotter = _PLOTTERS.get(header[0])
    if plotter is None:
        raise ValueError(f"{path}: no figure for a CSV starting with column {header[0]!r}")
    out = path.with_suffix(".png")
    plotter(rows, out)
    log.info("wrote %s", out)
    return out
