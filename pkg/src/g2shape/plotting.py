"""PNG renderings of the plot-ready CSV bundle written by ``emit_figure_data``."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _read(path):
    return np.genfromtxt(path, delimiter=",", names=True)


def render_figures(fig_dir) -> list:
    """Render one PNG per CSV panel found in ``fig_dir``; returns the paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir = Path(fig_dir)
    written = []
    meta = {"Software": None}

    path = fig_dir / "signal_excerpt.csv"
    if path.exists():
        d = _read(path)
        fig, ax = plt.subplots(figsize=(7, 2.5))
        ax.plot(d["t"], d["intensity"], lw=0.6, drawstyle="steps-post")
        ax.set_xlabel("t")
        ax.set_ylabel("I(t)")
        fig.tight_layout()
        out = fig_dir / "signal_excerpt.png"
        fig.savefig(out, dpi=120, metadata=meta)
        plt.close(fig)
        written.append(out)

    path = fig_dir / "g2_overlay.csv"
    if path.exists():
        d = _read(path)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.fill_between(d["tau"], d["g2_estimated"] - 3 * d["stderr"],
                        d["g2_estimated"] + 3 * d["stderr"], color="C0", alpha=0.25, lw=0,
                        label="estimate, 3 sigma")
        ax.plot(d["tau"], d["g2_estimated"], color="C0", lw=1)
        ax.plot(d["tau"], d["g2_predicted"], color="k", ls="--", lw=1, label="prediction")
        if "g2_hbt" in d.dtype.names:
            ax.plot(d["tau"], d["g2_hbt"], color="C1", lw=0.8, label="HBT")
        ax.set_xlabel("tau")
        ax.set_ylabel("g2(tau)")
        ax.legend(frameon=False)
        fig.tight_layout()
        out = fig_dir / "g2_overlay.png"
        fig.savefig(out, dpi=120, metadata=meta)
        plt.close(fig)
        written.append(out)

    path = fig_dir / "statistics.csv"
    if path.exists():
        d = _read(path)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.bar(d["n"] - 0.2, d["p_target"], width=0.4, label="target")
        ax.bar(d["n"] + 0.2, d["p_empirical"], width=0.4, yerr=d["stderr"], label="empirical")
        ax.set_xlim(-0.5, min(d["n"][-1], 20) + 0.5)
        ax.set_xlabel("n")
        ax.set_ylabel("p(n)")
        ax.legend(frameon=False)
        fig.tight_layout()
        out = fig_dir / "statistics.png"
        fig.savefig(out, dpi=120, metadata=meta)
        plt.close(fig)
        written.append(out)
    return written
