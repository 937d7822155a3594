"""Static plot files for the batch workflow (no interactive UI)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .backtest import BacktestResult
from .grid import coords_from_flat
from .tuner import TuneResult


def conditions_plot(conditions: pd.Series, dims, path, split_date=None) -> None:
    """Per-axis step plot of the condition path over time."""
    coords = np.array([coords_from_flat(int(z), dims) for z in conditions])
    fig, axes = plt.subplots(len(dims), 1, sharex=True, figsize=(10, 2.2 * len(dims)))
    axes = np.atleast_1d(axes)
    for a, ax in enumerate(axes):
        ax.step(conditions.index, coords[:, a], where="post", lw=0.8)
        ax.set_ylabel(f"axis {a}")
        ax.set_ylim(0.5, dims[a] + 0.5)
        if split_date is not None:
            ax.axvline(pd.Timestamp(split_date), color="k", ls="--", lw=0.8)
    axes[-1].set_xlabel("date")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def policy_heatmap(result: TuneResult, path) -> None:
    """Score heat map over a two-axis grid with the selected pair starred."""
    names = list(result.grid.axes)
    if len(names) != 2:
        raise ValueError("heat map needs exactly two axes")
    xs = result.grid.axes[names[1]]
    ys = result.grid.axes[names[0]]
    table = np.full((len(ys), len(xs)), np.nan)
    for combo, score in zip(result.combos, result.scores):
        i = ys.index(combo[names[0]])
        j = xs.index(combo[names[1]])
        table[i, j] = score if np.isfinite(score) else np.nan
    fig, ax = plt.subplots(figsize=(7, 6))
    im = ax.imshow(table, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(xs)), [f"{x:.2g}" for x in xs], rotation=90, fontsize=7)
    ax.set_yticks(range(len(ys)), [f"{y:.2g}" for y in ys], fontsize=7)
    ax.set_xlabel(names[1])
    ax.set_ylabel(names[0])
    sel = result.selected
    ax.plot(xs.index(sel[names[1]]), ys.index(sel[names[0]]), marker="*", ms=16, c="red")
    fig.colorbar(im, ax=ax, label="score")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def value_plot(results: list[BacktestResult], path) -> None:
    """Portfolio value paths against the flat benchmark line at 1."""
    fig, ax = plt.subplots(figsize=(10, 4))
    for res in results:
        ax.plot(res.dates, res.value, lw=1.0, label=res.meta.get("policy", "policy"))
    ax.axhline(1.0, color="k", lw=0.8, label="benchmark")
    ax.set_ylabel("portfolio value")
    ax.set_xlabel("date")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def holdings_plot(result: BacktestResult, path) -> None:
    """Stacked asset-weight paths (long and short sides stacked separately)."""
    w = result.weights
    pos = np.clip(w, 0.0, None)
    neg = np.clip(w, None, 0.0)
    fig, ax = plt.subplots(figsize=(10, 4.5))
    ax.stackplot(result.dates, pos.T, labels=result.assets, lw=0)
    ax.stackplot(result.dates, neg.T, lw=0)
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_ylabel("weight")
    ax.set_xlabel("date")
    ax.legend(ncol=6, fontsize=7, loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
