"""Figures for simulation panels and the pooling illustration.

Only used when the CLI is asked for ``--plot``; matplotlib is imported
lazily so the core library does not depend on it.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

STYLE = {
    "font.family": "serif",
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
}

MARKERS = "osD^v<>ph"


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_panel(panel, path, alpha: float = 0.05) -> Path:
    """Rejection rate against true effect size, one line per method."""
    plt = _pyplot()
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        for i, curve in enumerate(panel.curves):
            ax.errorbar(curve.d, curve.rates, yerr=curve.se, marker=MARKERS[i % len(MARKERS)],
                        ms=3.5, lw=1.0, capsize=1.5, label=curve.method.value)
        ax.axhline(alpha, color="0.5", lw=0.8, ls="--")
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("true mean difference d")
        ax.set_ylabel("H0 rejection rate")
        ax.set_title(panel.name)
        ax.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path


def plot_pooling_demo(demo, path) -> Path:
    """Per-subject class means with standard errors, and the pooled scatter."""
    plt = _pyplot()
    path = Path(path)
    subjects: Sequence = demo.subjects
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.5, 3.2))
        idx = np.arange(len(subjects))
        for offset, attr, label in ((-0.1, "x", "X"), (0.1, "y", "Y")):
            vals = [getattr(s, attr) for s in subjects]
            means = [v.mean() for v in vals]
            ses = [v.std(ddof=1) / np.sqrt(v.size) for v in vals]
            ax1.errorbar(idx + offset, means, yerr=ses, fmt="o", ms=4, capsize=2, label=label)
        ax1.set_xticks(idx, [f"s{i + 1}\np={p:.2g}" for i, p in enumerate(demo.subject_welch_p)])
        ax1.set_ylabel("mean +/- s.e.")
        ax1.set_title(f"pooled Welch p = {demo.pooled_welch_p:.2g}")
        ax1.legend(frameon=False)
        for i, s in enumerate(subjects):
            ax2.scatter(s.x, s.y, s=8, marker=MARKERS[i % len(MARKERS)], label=f"s{i + 1}")
        ax2.set_xlabel("x")
        ax2.set_ylabel("y")
        ax2.set_title(f"pooled r = {demo.pooled_r:.2f}")
        ax2.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path
