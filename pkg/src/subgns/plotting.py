"""Deterministic SVG figures: mode energy and reconstruction error, loss
history, force traces and per-particle error histograms."""

from __future__ import annotations

import io
import warnings

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import container  # noqa: E402

_RC = {
    "svg.hashsalt": "subgns",
    "svg.fonttype": "path",
    "path.simplify": False,
    "font.family": "DejaVu Sans",
    "figure.dpi": 100,
}

AXIS_NAMES = ("forward", "lateral", "vertical")  # x, y, z of the box


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    container.atomic_write_bytes(path, buf.getvalue())


def _empty(ax, label: str) -> None:
    warnings.warn(f"{label}: empty series, drawing empty axes", RuntimeWarning)


def energy_plot(path, energy: np.ndarray, sweep=None) -> None:
    """Cumulative energy per mode count; ``sweep`` rows of ``(r, mean, std)``
    are drawn as a log-scale inset of reconstruction error."""
    energy = np.asarray(energy, dtype=np.float64)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        if energy.size:
            ax.plot(np.arange(1, energy.size + 1), energy, marker="o", ms=3)
            ax.set_xscale("log")
        else:
            _empty(ax, "energy")
        ax.set_xlabel("modes")
        ax.set_ylabel("normalized cumulative eigenvalue sum")
        if sweep is not None and len(sweep):
            sw = np.asarray(sweep, dtype=np.float64)
            inset = ax.inset_axes([0.45, 0.15, 0.5, 0.45])
            inset.errorbar(sw[:, 0], sw[:, 1], yerr=sw[:, 2], marker="o", ms=3, capsize=2)
            inset.set_xscale("log", base=2)
            inset.set_yscale("log")
            inset.set_xlabel("modes", fontsize=8)
            inset.set_ylabel("position MSE", fontsize=8)
            inset.tick_params(labelsize=7)
        _save(fig, path)


def loss_plot(path, history: np.ndarray, force_weight: float = 1.0, smooth: int = 100) -> None:
    """Total loss per step (log scale) and its moving average."""
    h = np.asarray(history, dtype=np.float64).reshape(-1, 4)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        if h.shape[0]:
            total = h[:, 1] + force_weight * h[:, 2]
            ax.plot(h[:, 0], total, lw=0.5, alpha=0.4, label="loss")
            if h.shape[0] >= smooth:
                c = np.cumsum(np.concatenate([[0.0], total]))
                ma = (c[smooth:] - c[:-smooth]) / smooth
                ax.plot(h[smooth - 1 :, 0], ma, lw=1.2, label=f"moving average ({smooth})")
            ax.set_yscale("log")
            ax.legend()
        else:
            _empty(ax, "loss")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        _save(fig, path)


def force_plot(path, F_ref: np.ndarray, F_hat: np.ndarray, dt: float = 1.0) -> None:
    """Reference and predicted force components, one panel per axis."""
    F_ref = np.asarray(F_ref, dtype=np.float64).reshape(-1, 3)
    F_hat = np.asarray(F_hat, dtype=np.float64).reshape(-1, 3)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(3, 1, figsize=(6, 7), sharex=True)
        if not F_ref.shape[0] and not F_hat.shape[0]:
            _empty(axes[0], "force")
        for k, (ax, name) in enumerate(zip(axes, AXIS_NAMES)):
            if F_ref.shape[0]:
                ax.plot(np.arange(F_ref.shape[0]) * dt, F_ref[:, k], label="reference")
            if F_hat.shape[0]:
                ax.plot(np.arange(F_hat.shape[0]) * dt, F_hat[:, k], ls="--", label="predicted")
            ax.set_ylabel(f"{name} force")
        if F_ref.shape[0] or F_hat.shape[0]:
            axes[0].legend()
        axes[-1].set_xlabel("time" if dt != 1.0 else "frame")
        _save(fig, path)


def error_histogram(path, pca_error: np.ndarray, gns_error: np.ndarray, bins: int = 40) -> None:
    """Histograms of per-particle position errors on a log x axis."""
    series = [("PCA", np.asarray(pca_error, dtype=np.float64).ravel()),
              ("GNS", np.asarray(gns_error, dtype=np.float64).ravel())]
    positive = np.concatenate([s[s > 0] for _, s in series])
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        if positive.size:
            lo, hi = np.log10(positive.min()), np.log10(positive.max())
            if hi - lo < 1e-9:
                lo, hi = lo - 0.5, hi + 0.5
            edges = np.logspace(lo, hi, bins + 1)
            for name, s in series:
                s = s[s > 0]
                if s.size:
                    ax.hist(s, bins=edges, alpha=0.6, label=name)
            ax.set_xscale("log")
            ax.legend()
        else:
            _empty(ax, "error histogram")
        ax.set_xlabel("position MSE")
        ax.set_ylabel("particles")
        _save(fig, path)
