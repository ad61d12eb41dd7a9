"""Report figures rendered next to the delimited outputs.

Every CLI path that writes a CSV or reconstruction also drops a PNG beside
it; figures are deliberately small and self-contained (no style files).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

FIGSIZE = (5.0, 3.4)
DPI = 130


def _save(fig, path) -> str:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return str(path)


def decay_plot(rows, path, ylabel="||G f||", title="Faddeev decay") -> str:
    """Log-log decay of a norm against |zeta| with a slope -1 guide."""
    z = np.array([r["zeta_norm"] for r in rows])
    y = np.array([r.get("g_norm", r.get("r_norm", np.nan)) for r in rows])
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.loglog(z, y, "o-", label=ylabel)
    ax.loglog(z, y[0] * (z / z[0]) ** -1.0, "k--", lw=0.8, label="slope -1")
    ax.set_xlabel("|zeta|")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def residual_history_plot(history, path, title="Residual history") -> str:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.semilogy(range(len(history)), history, "o-")
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual norm")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def slice_plot(field, path, title="", axis: int = 2, index: int | None = None,
               cmap="viridis") -> str:
    """Mid-plane slice of a real 3D field (or |field| when complex)."""
    f = np.asarray(field)
    if np.iscomplexobj(f):
        f = np.abs(f)
    if index is None:
        index = f.shape[axis] // 2
    sl = [slice(None)] * 3
    sl[axis] = index
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(f[tuple(sl)].T, origin="lower", cmap=cmap)
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(title)
    return _save(fig, path)


def recon_comparison_plot(truth, recon, path, label="sigma", axis: int = 2) -> str:
    """Side-by-side mid-slices of truth, reconstruction and difference."""
    t = np.asarray(truth)
    r = np.asarray(recon)
    index = t.shape[axis] // 2
    sl = [slice(None)] * 3
    sl[axis] = index
    ts, rs = t[tuple(sl)].T, r[tuple(sl)].T
    fig, axes = plt.subplots(1, 3, figsize=(9.6, 3.2))
    vmin, vmax = min(ts.min(), rs.min()), max(ts.max(), rs.max())
    for ax, img, name in zip(
        axes, (ts, rs, rs - ts), (f"true {label}", f"recon {label}", "difference")
    ):
        kw = {} if name == "difference" else {"vmin": vmin, "vmax": vmax}
        im = ax.imshow(img, origin="lower", cmap="viridis", **kw)
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title(name)
    return _save(fig, path)


def margin_histogram(per_point_min, rank_tol, path) -> str:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    vals = np.asarray(per_point_min).ravel()
    ax.hist(vals, bins=50)
    ax.axvline(rank_tol, color="r", ls="--", label=f"rank tol {rank_tol:.1e}")
    ax.set_xlabel("per-point min singular value of the data block")
    ax.set_ylabel("count")
    ax.set_title("Ellipticity margin distribution")
    ax.legend()
    return _save(fig, path)
