"""Figures for CLI reports. Only the CLI imports this module."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_REGION_COLORS = {1: "#dbe9f6", 2: "#fde2c8", 3: "#d9f0d3"}


def illustrative_figure(report, path) -> None:
    """Mean +- 1 sd of the twin-minus-complement differences per ratio,
    with the classified regions shaded."""
    summary = report.summary()
    names = [n for n in ("full", "targeted", "pehe", "full_nmc", "targeted_nmc") if n in summary]
    fig, axes = plt.subplots(1, len(names), figsize=(3.6 * len(names), 3.2), sharex=True)
    x = report.ratios
    edges = np.concatenate([[x[0]], np.sqrt(x[1:] * x[:-1]), [x[-1]]])
    for ax, name in zip(np.atleast_1d(axes), names):
        for r, region in enumerate(report.regions):
            if region in _REGION_COLORS:
                ax.axvspan(edges[r], edges[r + 1], color=_REGION_COLORS[region], lw=0)
        m, s = summary[name]["mean"], summary[name]["sd"]
        ax.plot(x, m, "o-", ms=3, color="k")
        ax.fill_between(x, m - s, m + s, color="k", alpha=0.15)
        ax.axhline(0.0, color="grey", lw=0.8)
        ax.set_xscale("log", base=2)
        ax.set_xlabel("n_twin / n_comp")
        ax.set_title(name)
    np.atleast_1d(axes)[0].set_ylabel("twin - comp (positive favors twin)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ranking_figure(report, path) -> None:
    """Per-site score against the merged-model PEHE."""
    fig, ax = plt.subplots(figsize=(4.2, 3.4))
    ax.scatter(report.scores, report.truth_pehe, s=18, color="k")
    for i, (s, p) in enumerate(zip(report.scores, report.truth_pehe)):
        ax.annotate(str(i), (s, p), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("score")
    ax.set_ylabel("PEHE after merge")
    ax.set_title(f"rho = {report.rho:.2f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def privacy_figure(bench, path) -> None:
    fig, ax = plt.subplots(figsize=(4.2, 3.4))
    lo, hi = float(np.min(bench.plain)), float(np.max(bench.plain))
    ax.plot([lo, hi], [lo, hi], color="grey", lw=0.8)
    ax.scatter(bench.plain, bench.noised, s=18, color="k", label="released")
    ax.set_xlabel("plaintext statistic")
    ax.set_ylabel("released statistic")
    ax.set_title(f"{bench.mode}: rho = {bench.rho_noised:.2f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
