"""Figure rendering for the report path: training curves, solution surfaces,
and oracle convergence, written to files next to the CSV output."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

__all__ = ["training_figure", "solution_figure", "oracle_figure", "oracle_convergence"]


def training_figure(rows, path):
    """Learning rate, training loss, and test errors over training, in the
    four-panel layout the experiment reports use."""
    if not rows:
        return
    steps = np.arange(1, len(rows) + 1)
    lr = [r.lr if r.lr is not None else np.nan for r in rows]
    loss = [r.loss_total for r in rows]
    rel = [r.rel_l2 for r in rows]
    rel_b = [r.rel_l2_boundary for r in rows]
    phase_switch = next((i for i, r in enumerate(rows) if r.phase == "lbfgs"), None)

    fig, axes = plt.subplots(2, 2, figsize=(9, 7))
    panels = [
        (axes[0, 0], lr, "learning rate", "linear"),
        (axes[0, 1], loss, "training loss", "linear"),
        (axes[1, 0], rel, "relative L2 error", "log"),
        (axes[1, 1], rel_b, "boundary relative L2 error", "log"),
    ]
    for ax, series, label, yscale in panels:
        ax.plot(steps, series, lw=1.2)
        if phase_switch is not None:
            ax.axvline(phase_switch + 0.5, color="gray", ls="--", lw=0.8)
        ax.set_xlabel("logged step")
        ax.set_ylabel(label)
        ax.set_yscale(yscale)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _as_grid(points, values):
    n = int(round(np.sqrt(points.shape[0])))
    return values.reshape(n, n).T


def solution_figure(points, pred, exact, path):
    """Exact solution, prediction, and absolute error heat maps."""
    n = int(round(np.sqrt(points.shape[0])))
    extent = [points[:, 0].min(), points[:, 0].max(), points[:, 1].min(), points[:, 1].max()]
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))
    for ax, field, title in [
        (axes[0], exact, "exact"),
        (axes[1], pred, "learned"),
        (axes[2], np.abs(pred - exact), "absolute error"),
    ]:
        im = ax.imshow(_as_grid(points, field), origin="lower", extent=extent, cmap="viridis")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _nodal_field(sol):
    vals = sol.values.copy()
    if sol.inner_values is not None:
        inner = ~np.isnan(sol.inner_values)
        vals[inner] = sol.inner_values[inner]
    return vals


def oracle_figure(problem, direct, compose, path):
    """Direct solve, composed solve, and their difference."""
    grid = direct.grid
    a = _nodal_field(compose.solution)
    b = _nodal_field(direct)
    extent = [-1, 1, -1, 1]
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))
    for ax, field, title in [
        (axes[0], b, "direct solve"),
        (axes[1], a, "composed solve"),
        (axes[2], np.abs(a - b), "absolute gap"),
    ]:
        im = ax.imshow(field.reshape(grid.n, grid.n).T, origin="lower", extent=extent, cmap="viridis")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def oracle_convergence(report, path):
    ns = [row["n"] for row in report]
    gaps = [row["gap_rel_l2"] for row in report]
    hs = [2.0 / (n - 1) for n in ns]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(hs, gaps, "o-", label="composed vs direct")
    ref = gaps[-1] * (np.array(hs) / hs[-1]) ** 2
    ax.loglog(hs, ref, "k--", lw=0.8, label="order 2 reference")
    ax.set_xlabel("h")
    ax.set_ylabel("relative L2 gap")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
