"""Figure rendering for the command-line report path.

Every function writes one PNG next to the delimited outputs; rendering is
byte-deterministic for fixed inputs (the Agg backend embeds no timestamps).
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_history_figure",
    "save_rank_figure",
    "save_error_figure",
    "save_field_figure",
]

_DPI = 130


def save_history_figure(history: list[dict], eps: float, path) -> None:
    """Test error and sampling rate across adaptive rounds."""
    its = [row["iteration"] for row in history]
    errs = [row["test_error"] for row in history]
    rates = [row["sampling_rate"] for row in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.semilogy(its, errs, "o-", color="tab:blue")
    ax1.axhline(eps, color="tab:red", ls="--", lw=1, label="target")
    ax1.set_xlabel("round")
    ax1.set_ylabel("relative test error")
    ax1.legend(loc="best", fontsize=8)
    ax1.grid(True, which="both", alpha=0.3)
    ax2.plot(its, rates, "s-", color="tab:green")
    ax2.set_xlabel("round")
    ax2.set_ylabel("sampling rate")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_rank_figure(c_ranks, r_max, r_mean, path) -> None:
    """Per-interface train ranks plus the factor ranks in the title."""
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    pos = np.arange(1, len(r_max) + 1)
    if len(pos):
        ax.bar(pos - 0.18, r_max, width=0.36, label="max", color="tab:blue")
        ax.bar(pos + 0.18, r_mean, width=0.36, label="mean", color="tab:orange")
        ax.set_xticks(pos)
        ax.legend(loc="best", fontsize=8)
    ax.set_xlabel("interface")
    ax.set_ylabel("train rank")
    ax.set_title(f"factor ranks {list(c_ranks)}", fontsize=10)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_error_figure(e_values, e_max: float, e_mean: float, path) -> None:
    """Per-parameter trajectory errors with the summary levels."""
    vals = np.sqrt(np.asarray(list(e_values), dtype=np.float64))
    fig, ax = plt.subplots(figsize=(5.6, 3.4))
    ax.semilogy(np.arange(1, vals.size + 1), np.sort(vals), "o", ms=4)
    ax.axhline(e_mean, color="tab:orange", ls="--", lw=1, label="mean")
    ax.axhline(e_max, color="tab:red", ls=":", lw=1, label="max")
    ax.set_xlabel("test parameter (sorted)")
    ax.set_ylabel("trajectory error")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_field_figure(field: np.ndarray, path, title: str = "") -> None:
    """Heatmap of a nodal 2-D field (final state of a run, for instance)."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    im = ax.imshow(np.asarray(field).T, origin="lower", aspect="auto", cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.9)
    if title:
        ax.set_title(title, fontsize=10)
    ax.set_xlabel("x index")
    ax.set_ylabel("y index")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
