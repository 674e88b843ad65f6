"""Figures for campaign reports, rendered off-screen to files.

Uses the object-oriented matplotlib API with the Agg canvas, so nothing
touches global pyplot state. The metadata header of the producing command is
embedded in each PNG as its ``Description`` text chunk.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .experiments import CampaignStats, Estimate

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "axes.linewidth": 0.6,
    "lines.markersize": 3,
}


def _figure(ncols: int = 1) -> tuple[Figure, list]:
    import matplotlib

    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(3.4 * ncols, 2.8), dpi=150, layout="constrained")
        FigureCanvasAgg(fig)
        axes = [fig.add_subplot(1, ncols, i + 1) for i in range(ncols)]
    return fig, axes


def save(fig: Figure, path, header: dict) -> Path:
    path = Path(path)
    fig.savefig(
        path,
        format="png",
        metadata={"Description": json.dumps(header, sort_keys=True), "Software": None},
    )
    return path


def plot_scaling(stats: CampaignStats, path, header: dict, plateau: Estimate | None = None):
    """``V_ij N_T**2`` against ``N_T`` for every round of every usable run."""
    fig, (ax,) = _figure()
    rows = stats.usable
    NT = stats.N_T[rows].ravel()
    scaled = stats.scaled_covariance()[rows]
    d = stats.d
    pairs = [(i, i) for i in range(d)] + [(i, j) for i in range(d) for j in range(i + 1, d)]
    for i, j in pairs:
        ax.plot(NT, scaled[..., i, j].ravel(), "." if i == j else "x", alpha=0.4,
                label=rf"$V_{{{i + 1}{j + 1}}} N_T^2$")
    ax.set_xscale("log")
    if plateau is not None and np.isfinite(plateau.value):
        ax.axhline(plateau.value, color="k", ls="--", lw=0.8, label=f"plateau {plateau.value:.3g}")
    ax.set_xlabel(r"$N_T$")
    ax.set_ylabel(r"$V_{ij} N_T^2$")
    ax.legend(loc="best")
    return save(fig, path, header)


def plot_error_scaling(eps, c_h, p_err, path, header: dict, d: int | None = None):
    """Plateau constant and per-round error rate against the decision parameter."""
    from .experiments import HEISENBERG_FITS

    eps = np.asarray(eps, dtype=float)
    fig, (a1, a2) = _figure(2)
    a1.semilogx(eps, c_h, "o")
    a2.loglog(eps, np.where(np.asarray(p_err) > 0, p_err, np.nan), "o")
    if d in HEISENBERG_FITS:
        a, b, c = HEISENBERG_FITS[d]
        x = np.logspace(np.log10(eps.min()), np.log10(eps.max()), 50)
        a1.semilogx(x, a + b * np.log(1 / x), "k--", lw=0.8, label="reported fit")
        a2.loglog(x, c * x, "k--", lw=0.8, label="reported fit")
        a1.legend()
        a2.legend()
    a1.set_xlabel(r"$\epsilon$")
    a1.set_ylabel(r"$C_H$")
    a2.set_xlabel(r"$\epsilon$")
    a2.set_ylabel(r"$P_{\rm err}$")
    return save(fig, path, header)


def plot_noise(stats: CampaignStats, path, header: dict):
    """``N_T V_jj`` against ``N_T`` with the shot-noise level and the crossover."""
    fig, (ax,) = _figure()
    rows = stats.usable
    NT = stats.N_T[rows]
    for j in range(stats.d):
        ax.loglog(NT.ravel(), (NT * stats.V[rows][..., j, j]).ravel(), ".", alpha=0.4,
                  label=rf"$N_T V_{{{j + 1}{j + 1}}}$")
    ax.axhline(1.0, color="k", lw=0.8, label="shot noise")
    gmax = max(stats.config.noise.gammas)
    if gmax > 0:
        ax.axvline(1.0 / gmax**2, color="0.5", ls=":", lw=0.8, label=r"$1/\Gamma_{\max}^2$")
    ax.set_xlabel(r"$N_T$")
    ax.set_ylabel(r"$N_T V_{jj}$")
    ax.legend(loc="best")
    return save(fig, path, header)
