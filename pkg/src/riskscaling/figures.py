"""Figure rendering for the report commands.

Everything draws through the Agg backend and saves PNG with an empty
metadata dict, so repeated runs of the same configuration produce the same
bytes under the same library versions.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE = {"format": "png", "dpi": 150, "metadata": {}}


def save_heatmap(
    ns: Sequence[int],
    alphas: Sequence[float],
    grid: np.ndarray,
    path: str,
    title: str = "closed-form Gaussian scaling factor",
) -> str:
    """Scalar surface over sample size (x) and confidence level (y)."""
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    mesh = ax.pcolormesh(ns, alphas, grid, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="c*")
    ax.set_xlabel("sample size n")
    ax.set_ylabel("level alpha")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def save_sweep(
    values: Sequence[float],
    labels: Sequence[str],
    c_stars: Sequence[float],
    std_errors: Sequence[float],
    path: str,
    parameter: str,
    title: str = "scaling factor across the family",
) -> str:
    """Family sweep curve with error bars and the supremum line.

    Non-finite parameter values (a limit member such as the Normal end of
    a Student-t ray) are drawn as horizontal reference lines instead of
    curve points.
    """
    xs, ys, es = [], [], []
    limits = []
    for value, label, c, se in zip(values, labels, c_stars, std_errors):
        if math.isfinite(value):
            xs.append(value)
            ys.append(c)
            es.append(0.0 if math.isnan(se) else se)
        else:
            limits.append((label, c))
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    if xs:
        ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label="member c*")
        if max(xs) / max(min(xs), 1e-12) > 15:
            ax.set_xscale("log")
    for label, c in limits:
        ax.axhline(c, linestyle=":", color="gray")
        ax.annotate(label, xy=(0.02, c), xycoords=("axes fraction", "data"),
                    fontsize=8, va="bottom")
    finite = [c for c in c_stars if math.isfinite(c)]
    if finite:
        ax.axhline(max(finite), linestyle="--", color="firebrick", label="sup")
    ax.set_xlabel(parameter)
    ax.set_ylabel("c*")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def save_table_bars(
    labels: Sequence[str],
    combined: Sequence[float],
    confidence: Sequence[float],
    time: Sequence[float],
    path: str,
    title: str,
) -> str:
    """Horizontal bars of the decomposed scalars, one row per distribution."""
    pos = np.arange(len(labels))
    height = 0.27
    fig, ax = plt.subplots(figsize=(7.0, 0.5 * len(labels) + 1.8))
    ax.barh(pos + height, combined, height, label="combined")
    ax.barh(pos, confidence, height, label="confidence")
    ax.barh(pos - height, time, height, label="time")
    ax.set_yticks(pos)
    ax.set_yticklabels(labels)
    ax.invert_yaxis()
    ax.set_xlabel("c*")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def save_density(
    blocks: Sequence,
    path: str,
    target: Optional[float] = None,
    title: str = "exception-rate densities",
) -> str:
    """Kernel density of per-portfolio exception rates, one line per method.

    ``blocks`` are :class:`riskscaling.backtest.DensityBlock` items; blocks
    whose kde arrays are empty (degenerate rates) fall back to their
    histogram drawn as a step line.
    """
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for block in blocks:
        if block.kde_x.size:
            ax.plot(100 * block.kde_x, block.kde_y / 100, label=block.label)
        else:
            centers = (block.bin_edges[:-1] + block.bin_edges[1:]) / 2
            ax.step(100 * centers, block.counts, where="mid", label=block.label)
    if target is not None:
        ax.axvline(100 * target, linestyle="--", color="gray", label="target")
    ax.set_xlabel("exception rate (%)")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path
