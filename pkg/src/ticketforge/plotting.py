"""Accuracy-versus-sparsity figures rendered next to the summary CSV."""

from __future__ import annotations

import re
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

COLORS = {
    "reset": "tab:blue",
    "random": "tab:orange",
    "full-model": "0.3",
    "masks-reset": "tab:purple",
    "masks-random": "tab:green",
    "ticket-target": "tab:blue",
}


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text)


def plot_cell(rows, title: str, path: Path) -> Path:
    """Mean test accuracy with a one-std band, one line per strategy.

    Rounds are evenly spaced on the x axis and labelled with their sparsity,
    so the ticks are not uniform in sparsity.
    """
    by_strategy = defaultdict(list)
    for r in rows:
        by_strategy[r.strategy].append(r)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 2.8))
        ticks = {}
        for strategy, rs in sorted(by_strategy.items()):
            rs = sorted(rs, key=lambda r: r.round)
            color = COLORS.get(strategy)
            if strategy == "full-model":
                ax.axhline(rs[0].mean_test_acc, color=color, ls="--", lw=1, label="full-model")
                continue
            x = [r.round for r in rs]
            mean = [r.mean_test_acc for r in rs]
            lo = [r.mean_test_acc - r.std_test_acc for r in rs]
            hi = [r.mean_test_acc + r.std_test_acc for r in rs]
            ax.plot(x, mean, color=color, lw=1.4, marker="o", ms=2.5, label=strategy)
            ax.fill_between(x, lo, hi, color=color, alpha=0.2, lw=0)
            for r in rs:
                ticks.setdefault(r.round, r.sparsity)
        if ticks:
            xs = sorted(ticks)
            ax.set_xticks(xs)
            ax.set_xticklabels([f"{100 * ticks[x]:.1f}" for x in xs], rotation=45)
        ax.set_xlabel("sparsity (%)")
        ax.set_ylabel("test accuracy")
        ax.set_title(title)
        ax.legend(frameon=False, loc="lower left")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path


def plot_summary(rows, out_dir: Path) -> list[Path]:
    cells = defaultdict(list)
    for r in rows:
        cells[(r.experiment, r.cell)].append(r)
    written = []
    for (experiment, cell), rs in sorted(cells.items()):
        path = Path(out_dir) / f"{experiment}_{_slug(cell)}.png"
        written.append(plot_cell(rs, f"{experiment}: {cell}", path))
    return written
