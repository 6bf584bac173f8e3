"""Bar charts of agreement percentages, written as SVG files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .agreement import METRIC_LABELS, AgreementReport, rank_groups  # noqa: E402
from .taxonomy import Level  # noqa: E402

BAR_COLORS = {"overall": "#4c4c4c", "a": "#6baed6", "b": "#fd8d3c", "c": "#74c476"}

STYLE = {
    "font.family": "sans-serif",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.titlesize": 10,
    "svg.fonttype": "none",
    # fixed salt keeps SVG ids stable between runs
    "svg.hashsalt": "opennsq",
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_area_ranking(by_level: dict[Level, Sequence[AgreementReport]], path: Path) -> Path:
    """Overall agreement per scientific area in increasing order, one panel per level."""
    levels = [lv for lv in (Level.FP, Level.AP) if by_level.get(lv)]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, max(len(levels), 1), figsize=(4.2 * max(len(levels), 1), 3.2),
                                 squeeze=False, sharey=True)
        for ax, level in zip(axes[0], levels):
            ranked = rank_groups(by_level[level])
            labels = [f"{r.group_key[-1]:02d}" for r in ranked]
            ax.bar(labels, [r.pct_overall for r in ranked], color=BAR_COLORS["overall"])
            ax.set_title(f"{level.value} (level {1 if level is Level.FP else 2})")
            ax.set_xlabel("Scientific area")
            ax.set_ylim(0, 100)
        axes[0][0].set_ylabel("Overall agreement (%)")
        fig.tight_layout()
        return _save(fig, path)


def plot_field_bars(label: str, by_level: dict[Level, AgreementReport], path: Path) -> Path:
    """Four bars (overall, A, B, C) per level for one recruitment field."""
    levels = [lv for lv in (Level.FP, Level.AP) if lv in by_level]
    width = 0.2
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.0))
        for i, (metric, title) in enumerate(METRIC_LABELS):
            xs = [j + (i - 1.5) * width for j in range(len(levels))]
            ys = [by_level[lv].pct(metric) or 0.0 for lv in levels]
            ax.bar(xs, ys, width, label=title, color=BAR_COLORS[metric])
        ax.set_xticks(range(len(levels)))
        ax.set_xticklabels([f"{lv.value} (n={by_level[lv].n})" for lv in levels])
        ax.set_ylim(0, 100)
        ax.set_ylabel("Agreement (%)")
        ax.set_title(f"RF {label}")
        ax.legend(fontsize=7, frameon=False, loc="lower right")
        fig.tight_layout()
        return _save(fig, path)
