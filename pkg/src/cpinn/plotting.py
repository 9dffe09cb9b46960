"""SVG figures for the experiment reports.

Figures are rendered off-screen with a fixed SVG hash salt and no date
stamp, so re-running an experiment rewrites identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "svg.hashsalt": "cpinn",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (5.5, 3.6),
})

BAND_COLORS = ("tab:orange", "tab:green", "tab:purple", "tab:brown")


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_fit(path, x, truth, prediction, bands, data=None, xlabel="t", ylabel="N", title=None):
    """Surrogate vs truth with one shaded prediction band per alpha.

    ``bands`` maps alpha to the conformal half-width; ``data`` is an optional
    list of (label, x, y) scatter sets.
    """
    fig, ax = plt.subplots()
    # widest band (smallest alpha) first so narrower ones stay visible
    for (alpha, q), color in zip(sorted(bands.items()), BAND_COLORS):
        if np.isfinite(q):
            ax.fill_between(x, prediction - q, prediction + q, color=color, alpha=0.25, lw=0,
                            label=f"{100 * (1 - alpha):g}% interval")
    ax.plot(x, truth, "k-", lw=1.2, label="truth")
    ax.plot(x, prediction, "--", color="tab:blue", lw=1.2, label="PINN")
    for (label, dx, dy), marker in zip(data or [], ("o", "x", "s")):
        ax.plot(dx, dy, marker, ms=3, ls="none", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=7)
    _save(fig, path)


def plot_coverage(path, reports, title=None):
    """Running-mean coverage per alpha against its exact theoretical value."""
    fig, ax = plt.subplots()
    for (alpha, report), color in zip(sorted(reports.items()), BAND_COLORS):
        trials = np.arange(1, report.trials + 1)
        ax.plot(trials, report.running_mean, color=color, lw=1, label=f"alpha={alpha:g}")
        ax.axhline(report.theoretical, color=color, ls=":", lw=1)
    ax.set_xscale("log")
    ax.set_xlabel("trial")
    ax.set_ylabel("running mean coverage")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=7)
    _save(fig, path)


def plot_estimates(path, beta_true, beta_hat, title=None):
    fig, ax = plt.subplots(figsize=(4, 4))
    lo = float(np.nanmin([np.min(beta_true), np.nanmin(beta_hat)]))
    hi = float(np.nanmax([np.max(beta_true), np.nanmax(beta_hat)]))
    ax.plot([lo, hi], [lo, hi], "k:", lw=1)
    ax.plot(beta_true, beta_hat, "o", ms=2, alpha=0.6)
    ax.set_xlabel("true beta")
    ax.set_ylabel("estimated beta")
    if title:
        ax.set_title(title)
    _save(fig, path)
