"""Matplotlib figures written next to the CLI's tabular output.

Everything renders through the non-interactive Agg backend straight to a
file; nothing here opens a window.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    # fixed metadata keeps PNG bytes stable across runs
    "svg.hashsalt": "poiscout",
}
FIGSIZE = (5.0, 3.2)


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None} if path.suffix.lower() == ".png" else None)
    plt.close(fig)
    return path


def score_histogram(scores: Sequence[float], path: str | Path, method: str = "", bins: int = 40) -> Path:
    """Distribution of location scores; zero-score locations drawn separately."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        positive = [s for s in scores if s > 0]
        zeros = len(scores) - len(positive)
        if positive:
            ax.hist(positive, bins=bins, color="#3b6ea8", edgecolor="white", linewidth=0.4)
        ax.set_xlabel(f"location score ({method})" if method else "location score")
        ax.set_ylabel("locations")
        ax.set_title(f"{len(scores):,} locations, {zeros:,} with score 0")
        return _save(fig, path)


def selection_map(
    all_points: Sequence[tuple[float, float]],
    selected: Sequence[tuple[float, float]],
    path: str | Path,
    title: str = "",
) -> Path:
    """Scatter of log positions (lon, lat) with the selected subset on top, darker for higher rank."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 4.5))
        if all_points:
            xs, ys = zip(*all_points)
            ax.scatter(xs, ys, s=3, c="#c8c8c8", linewidths=0, label="all logs")
        if selected:
            xs, ys = zip(*selected)
            ranks = range(len(selected), 0, -1)
            ax.scatter(xs, ys, s=8, c=list(ranks), cmap="viridis", linewidths=0, label="selected")
        ax.set_xlabel("longitude")
        ax.set_ylabel("latitude")
        ax.set_aspect("equal", adjustable="datalim")
        if title:
            ax.set_title(title)
        if all_points or selected:
            ax.legend(loc="best", frameon=False)
        return _save(fig, path)


def bar_chart(values: Mapping[str, float], path: str | Path, ylabel: str, title: str = "", fmt: str = "{:,.0f}") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        names = list(values)
        heights = [values[n] for n in names]
        bars = ax.bar(names, heights, color="#3b6ea8", width=0.6)
        for bar, h in zip(bars, heights):
            ax.annotate(fmt.format(h), (bar.get_x() + bar.get_width() / 2, h), ha="center", va="bottom", fontsize=7)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        return _save(fig, path)
