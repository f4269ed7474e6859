"""Figure rendering for benchmark reports.  All functions write a PNG
and return the path; no interactive backends."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import PolyCollection


def plot_diagnostics(cols, path):
    """Energy budget and conservation monitors from a diagnostics table
    (column-name -> array, as returned by io.read_diagnostics)."""
    t = cols["t"]
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(6.0, 6.0), sharex=True)
    ax0.plot(t, cols["E_total"], "k-", label="total")
    ax0.plot(t, cols["E_kin"], "C0--", label="kinetic")
    ax0.plot(t, cols["E_mix"], "C1--", label="mixing")
    ax0.plot(t, cols["E_grav"], "C2--", label="potential")
    ax0.set_ylabel("energy")
    ax0.legend(loc="best", fontsize=8)
    drift = np.abs(cols["total_phi_drift"])
    ax1.semilogy(t, np.maximum(drift, 1e-18), "C3-")
    ax1.set_ylabel("|total phi drift|")
    ax1.set_xlabel("t")
    for ax in (ax0, ax1):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_mms_convergence(hs, errors, path, order=2.0):
    """Log-log spatial convergence; errors maps label -> per-h error
    array.  A dashed guide shows the target order."""
    hs = np.asarray(hs, dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    emax = 0.0
    for i, (label, err) in enumerate(sorted(errors.items())):
        err = np.asarray(err, dtype=float)
        ax.loglog(hs, err, f"C{i}o-", label=label)
        emax = max(emax, err[0])
    guide = emax * (hs / hs[0]) ** order
    ax.loglog(hs, guide, "k--", alpha=0.5, label=f"order {order:g}")
    ax.set_xlabel("h")
    ax.set_ylabel("L2 error")
    ax.grid(which="both", alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_centroid(t, yc, path, ref=None, band=0.05):
    """Bubble centroid height vs time, optionally against a reference
    curve with a relative tolerance band."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    if ref is not None:
        tr, yr = ref
        ax.fill_between(tr, yr * (1 - band), yr * (1 + band),
                        color="C1", alpha=0.2,
                        label=f"reference ±{100 * band:.0f}%")
        ax.plot(tr, yr, "C1--", lw=1)
    ax.plot(t, yc, "C0-", label="computed")
    ax.set_xlabel("t")
    ax.set_ylabel("centroid height")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_fronts(t, top, bottom, path, ref=None, band=0.10):
    """Interface front positions vs time; ref is the reference bottom
    front, banded by a relative tolerance on its travel from start."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    if ref is not None:
        tr, yr = ref
        travel = np.abs(yr - yr[0])
        ax.fill_between(tr, yr - band * travel, yr + band * travel,
                        color="C1", alpha=0.2,
                        label=f"reference ±{100 * band:.0f}%")
        ax.plot(tr, yr, "C1--", lw=1)
    ax.plot(t, bottom, "C0-", label="bottom front")
    ax.plot(t, top, "C2-", label="top front")
    ax.set_xlabel("t'")
    ax.set_ylabel("front position")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_phase_field(mesh, phi, path, t=None):
    """Per-element phase-field snapshot (2D only); element color is the
    mean of its gathered corner values, so hanging faces render with the
    constrained values."""
    if mesh.dim != 2:
        raise ValueError("phase-field snapshots are 2D only")
    orig = mesh.elem_origin()
    h = mesh.elem_h()
    dx = np.stack([h, np.zeros_like(h)], axis=1)
    dy = np.stack([np.zeros_like(h), h], axis=1)
    corners = np.stack([orig, orig + dx, orig + dx + dy, orig + dy],
                       axis=1)
    vals = mesh.gather(phi).mean(axis=1)
    ext = [orig[:, 0].min(), (orig[:, 0] + h).max(),
           orig[:, 1].min(), (orig[:, 1] + h).max()]
    fig, ax = plt.subplots(
        figsize=(5.0, 5.0 * (ext[3] - ext[2]) / max(ext[1] - ext[0], 1e-12)))
    pc = PolyCollection(corners, array=vals, cmap="RdBu_r",
                        edgecolors="none")
    pc.set_clim(-1.0, 1.0)
    ax.add_collection(pc)
    ax.set_xlim(ext[0], ext[1])
    ax.set_ylim(ext[2], ext[3])
    ax.set_aspect("equal")
    ax.set_title("phi" if t is None else f"phi, t = {t:.3f}")
    fig.colorbar(pc, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
