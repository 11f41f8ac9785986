"""Figures rendered next to the CSV outputs (``--plots``)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .engine import CATEGORIES, SimulationResult  # noqa: E402
from .metrics import VUF_LIMIT, max_vuf_over_window, profile, trip_table  # noqa: E402

PHASE_COLORS = {"a": "tab:red", "b": "tab:green", "c": "tab:blue"}


def plot_profiles(result: SimulationResult, times, path) -> Path:
    fig, axes = plt.subplots(1, len(times), figsize=(4.2 * len(times), 3.6), sharey=True, squeeze=False)
    for ax, t in zip(axes[0], times):
        prof = profile(result, t)
        for ph, color in PHASE_COLORS.items():
            pts = prof.phase(ph)
            ax.scatter([p.distance_km for p in pts], [p.v_pu for p in pts], s=8, color=color, label=ph)
        ax.set_title(f"t = {prof.time_s:.3f} s")
        ax.set_xlabel("distance from feeder head (km)")
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel("|V| (pu)")
    axes[0][0].legend(title="phase", fontsize=8)
    fig.suptitle(result.label)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_vuf(result: SimulationResult, path) -> Path:
    rep = max_vuf_over_window(result)
    nodes = list(rep.per_node)
    vals = np.array([rep.per_node[n] for n in nodes])
    fig, ax = plt.subplots(figsize=(8, 3.4))
    ax.bar(range(len(nodes)), np.nan_to_num(vals), color="tab:gray")
    ax.axhline(VUF_LIMIT, color="tab:red", lw=1, ls="--", label=f"limit {VUF_LIMIT}")
    ax.set_xlabel("three-phase distribution node")
    ax.set_ylabel("max VUF after clearing")
    ax.set_xticks([])
    ax.legend()
    ax.set_title(result.label)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_trip_table(cells, path) -> Path:
    ok = [c for c in cells if c.result is not None]
    labels = [c.result.label for c in ok]
    grid = np.full((len(ok), len(CATEGORIES)), np.nan)
    for i, c in enumerate(ok):
        pct = trip_table(c.result).by_scenario(c.result.label)
        grid[i] = [pct[cat] for cat in CATEGORIES]
    fig, ax = plt.subplots(figsize=(5.5, 0.22 * max(len(ok), 4) + 1.2))
    im = ax.imshow(grid, aspect="auto", cmap="Reds", vmin=0, vmax=100)
    ax.set_xticks(range(len(CATEGORIES)), CATEGORIES, fontsize=8)
    ax.set_yticks(range(len(labels)), labels, fontsize=6)
    fig.colorbar(im, ax=ax, label="tripped (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
