"""Headless figure rendering for the report path.

Each report kind gets one PNG next to its CSV so a sweep can be eyeballed
without a separate plotting step.  The Agg backend is forced before pyplot
is imported, so rendering works in terminals and CI.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def render_noise_figure(path, rows) -> Path:
    """Final-time mitigation errors against the loss rate, log-log."""
    final_t = max(r.t for r in rows)
    at_end = [r for r in rows if r.t == final_t and r.gamma > 0]
    gammas = [r.gamma for r in at_end]
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.loglog(gammas, [r.l2_error_raw for r in at_end], "o-", label="raw")
    ax.loglog(gammas, [r.l2_error_counterterm for r in at_end], "s-", label="counterterm")
    rich = [r.l2_error_richardson for r in at_end]
    if rich and np.isfinite(rich[0]):
        ax.axhline(rich[0], color="k", ls="--", lw=1,
                   label="Richardson (zero-loss extrapolation)")
    ax.set_xlabel(r"loss rate $\gamma$")
    ax.set_ylabel(rf"$L^2$ error at t={final_t:g}")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def render_rank_figure(path, reports) -> Path:
    """Kraus rank and tree depth across the lattice-size sweep."""
    Ls = [r.L for r in reports]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.4, 3.4))
    ax1.loglog(Ls, [r.rank_poly for r in reports], "o-", label="rank (degree r)")
    ax1.loglog(Ls, [r.rank_linear for r in reports], "s--", label="rank (linear)")
    ax1.set_xlabel("grid points L")
    ax1.set_ylabel("Kraus rank")
    ax1.legend(fontsize=8)
    ax1.grid(True, which="both", alpha=0.3)
    ax2.semilogx(Ls, [r.depth for r in reports], "o-")
    ax2.set_xlabel("grid points L")
    ax2.set_ylabel("tree depth (layers)")
    ax2.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def render_stencil_figure(path, entries) -> Path:
    """Stem plots of the solved coefficients, one panel per (K, R) row."""
    n = len(entries)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), squeeze=False)
    for ax, (K, R, coeffs) in zip(axes[0], entries):
        offs = np.arange(-R, R + 1)
        ax.stem(offs, np.asarray(coeffs, dtype=float))
        ax.set_title(f"derivative order {K}, radius {R}", fontsize=9)
        ax.set_xlabel("offset")
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
