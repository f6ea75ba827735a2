"""Static figures for CLI reports, rendered off-screen to PNG files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib import tri as mtri  # noqa: E402

# no timestamps or version strings, so reruns give identical files
_META = {"Software": None}
_SQ3 = np.sqrt(3.0) / 2.0


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def _to_xy(w):
    w = np.atleast_2d(w)
    return w[:, 1] + 0.5 * w[:, 2], _SQ3 * w[:, 2]


def _triangle(ax, labels):
    ax.plot([0, 1, 0.5, 0], [0, 0, _SQ3, 0], color="black", lw=0.8)
    for (x, y), lab, ha in zip([(0, 0), (1, 0), (0.5, _SQ3)], labels, ["right", "left", "center"]):
        ax.annotate(lab, (x, y), xytext=(0, -12 if y == 0 else 6), textcoords="offset points",
                    ha=ha, fontsize=9)
    ax.set_aspect("equal")
    ax.axis("off")


def density_triangle(grid, logdens, path, labels=("w1", "w2", "w3"), points=None, title=""):
    """Filled contours of log density over a d = 3 simplex grid."""
    x, y = _to_xy(grid)
    fig, ax = plt.subplots(figsize=(4.5, 4.2))
    ok = np.isfinite(logdens)
    if ok.sum() >= 3:
        tr = mtri.Triangulation(x[ok], y[ok])
        cs = ax.tricontourf(tr, logdens[ok], levels=14, cmap="viridis")
        fig.colorbar(cs, ax=ax, shrink=0.7, label="log density")
    if points is not None and len(points):
        px, py = _to_xy(points)
        ax.scatter(px, py, s=6, c="white", edgecolors="black", linewidths=0.3)
    _triangle(ax, labels)
    ax.set_title(title, fontsize=10)
    _save(fig, path)


def simplex_scatter(W, path, labels=None, title=""):
    W = np.atleast_2d(W)
    d = W.shape[1]
    labels = labels or [f"w{j + 1}" for j in range(d)]
    fig, ax = plt.subplots(figsize=(4.5, 4.2))
    if d == 3:
        x, y = _to_xy(W)
        ax.scatter(x, y, s=4, alpha=0.6)
        _triangle(ax, labels)
    else:
        ax.boxplot([W[:, j] for j in range(d)], tick_labels=labels)
        ax.axhline(1.0 / d, color="grey", lw=0.8, ls="--")
        ax.set_ylabel("angular coordinate")
    ax.set_title(title, fontsize=10)
    _save(fig, path)


def traces(draws, names, path, burn_in=0):
    draws = np.atleast_2d(draws)
    p = draws.shape[1]
    fig, axes = plt.subplots(p, 1, figsize=(7, 1.6 * p + 0.4), sharex=True, squeeze=False)
    for k in range(p):
        ax = axes[k, 0]
        ax.plot(draws[:, k], lw=0.4)
        if burn_in:
            ax.axvline(burn_in, color="red", lw=0.8)
        ax.set_ylabel(names[k], fontsize=8)
    axes[-1, 0].set_xlabel("iteration")
    fig.tight_layout()
    _save(fig, path)


def return_level_curve(periods, levels, path, name, emp=None, title=""):
    """Level against return period 1/p; `emp` holds (period, est, lower, upper) rows."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(periods, levels, color="black")
    if emp is not None and len(emp):
        emp = np.asarray(emp, dtype=float)
        ax.plot(emp[:, 0], emp[:, 1], "o", ms=3, color="black")
        ax.plot(emp[:, 0], emp[:, 2], color="red", lw=0.8)
        ax.plot(emp[:, 0], emp[:, 3], color="red", lw=0.8)
    ax.set_xscale("log")
    ax.set_xlabel("return period 1/p")
    ax.set_ylabel(name)
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path)


def return_level_contours(curves, path, names, title=""):
    """`curves` maps a return period to an (n, 2) polyline."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for period, pts in curves.items():
        ax.plot(pts[:, 0], pts[:, 1], lw=1.0, label=f"1/p = {period:g}")
    ax.set_xlabel(names[0])
    ax.set_ylabel(names[1])
    ax.legend(fontsize=8)
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path)
