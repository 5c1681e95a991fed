"""Figures written next to the delimited outputs of the CLI."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _style(ax):
    ax.tick_params(labelsize=9)
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)


def _centered(values):
    """Shift the zero frequency to the middle of each axis."""
    return np.fft.fftshift(values)


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_log_spectrum(f, path, title="log10 spectral density"):
    """Heat map of ``log10 f`` with the zero frequency centered (2-d only)."""
    f = np.asarray(f, dtype=float)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    if f.ndim == 2:
        im = ax.imshow(np.log10(np.maximum(_centered(f), 1e-300)), origin="lower",
                       extent=(-0.5, 0.5, -0.5, 0.5), cmap="viridis")
        fig.colorbar(im, ax=ax, shrink=0.85)
        ax.set_xlabel(r"$\omega_2$")
        ax.set_ylabel(r"$\omega_1$")
    else:
        ax.plot(np.arange(f.size) / f.size, np.log10(f.reshape(-1)))
        ax.set_xlabel("frequency")
    ax.set_title(title, fontsize=10)
    return _save(fig, path)


def plot_fields(panels: dict, path):
    """Side-by-side maps of 2-d fields; NaN cells are left blank."""
    panels = {k: np.asarray(v, dtype=float) for k, v in panels.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in panels.values()])
    lo, hi = (np.min(finite), np.max(finite)) if finite.size else (0.0, 1.0)
    fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.2), squeeze=False)
    for ax, (name, field) in zip(axes[0], panels.items()):
        im = ax.imshow(np.ma.masked_invalid(field), origin="lower", vmin=lo, vmax=hi, cmap="magma")
        ax.set_title(name, fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=list(axes[0]), shrink=0.8)
    return _save(fig, path)


def plot_convergence(trace, epsilon, burn_in, path):
    trace = np.asarray(trace, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3))
    _style(ax)
    ax.semilogy(np.arange(1, trace.size + 1), trace, lw=1)
    ax.axhline(epsilon, color="k", ls="--", lw=0.8)
    ax.axvline(burn_in + 0.5, color="0.6", ls=":", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("max |f_new - f_old| / S")
    return _save(fig, path)


def plot_insb_rows(rows, path):
    """INSB against iteration, one line per (setting, tau) row, log scale."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    _style(ax)
    for label, values in rows:
        ax.semilogy(np.arange(len(values)), values, marker="o", ms=3, lw=1, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("INSB")
    ax.legend(fontsize=7, frameon=False, ncol=2)
    return _save(fig, path)


def plot_relative_bias(bias_by_method: dict, path):
    """Relative bias maps over centered frequencies, one panel per method."""
    n = len(bias_by_method)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.2), squeeze=False)
    vmax = max(float(np.max(np.abs(b))) for b in bias_by_method.values()) or 1.0
    vmax = min(vmax, 2.0)
    for ax, (name, bias) in zip(axes[0], bias_by_method.items()):
        im = ax.imshow(_centered(bias), origin="lower", cmap="RdBu_r", vmin=-vmax, vmax=vmax,
                       extent=(-0.5, 0.5, -0.5, 0.5))
        ax.set_title(name, fontsize=9)
    fig.colorbar(im, ax=list(axes[0]), shrink=0.8)
    return _save(fig, path)
