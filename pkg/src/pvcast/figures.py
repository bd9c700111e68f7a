"""Rendering of run artifacts to PNG files.

Every figure embeds the run's config hash in its PNG metadata so an image
can be traced back to the exact configuration that produced it.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .emd import DecompositionResult
from .eqn import QuantileLevels
from .spectral import FrequencyProfile, ReconstructedSignals


def _save(fig, path: str | Path, config_hash: str | None) -> None:
    metadata = {"config_hash": config_hash} if config_hash else None
    fig.savefig(path, dpi=120, metadata=metadata, bbox_inches="tight")
    plt.close(fig)


def save_decomposition_figure(
    path: str | Path,
    signal: np.ndarray,
    result: DecompositionResult,
    config_hash: str | None = None,
) -> None:
    """Stacked panels: the input series, each mode, and the residual."""
    rows = result.n_modes + 2
    fig, axes = plt.subplots(rows, 1, figsize=(9, 1.4 * rows), sharex=True)
    axes[0].plot(signal, lw=0.7, color="tab:blue")
    axes[0].set_ylabel("input")
    for ax, imf in zip(axes[1:], result.imfs):
        ax.plot(imf.values, lw=0.7, color="tab:green")
        ax.set_ylabel(f"imf {imf.index}")
    axes[-1].plot(result.residual, lw=0.7, color="tab:red")
    axes[-1].set_ylabel("residual")
    axes[-1].set_xlabel("sample")
    _save(fig, path, config_hash)


def save_grouping_figure(
    path: str | Path,
    profiles: list[FrequencyProfile],
    f_high: float,
    config_hash: str | None = None,
) -> None:
    """Dominant frequency per mode with the high/low threshold line."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for profile in profiles:
        color = "tab:orange" if profile.group == "high" else "tab:blue"
        marker = "x" if profile.zero_energy else "o"
        ax.scatter(profile.index, profile.f_dominant, color=color, marker=marker)
    ax.axhline(f_high, color="black", ls="--", lw=1, label=f"threshold {f_high:.3g} Hz")
    ax.set_yscale("log")
    ax.set_xlabel("mode index")
    ax.set_ylabel("dominant frequency [Hz]")
    ax.legend()
    _save(fig, path, config_hash)


def save_reconstruction_figure(
    path: str | Path,
    signal: np.ndarray,
    recon: ReconstructedSignals,
    config_hash: str | None = None,
) -> None:
    fig, axes = plt.subplots(3, 1, figsize=(9, 6), sharex=True)
    axes[0].plot(signal, lw=0.7, color="tab:blue")
    axes[0].set_ylabel("input")
    axes[1].plot(recon.high, lw=0.7, color="tab:orange")
    axes[1].set_ylabel("high")
    axes[2].plot(recon.low, lw=0.7, color="tab:green")
    axes[2].set_ylabel("low")
    axes[2].set_xlabel("sample")
    _save(fig, path, config_hash)


def save_loss_figure(
    path: str | Path,
    train_losses: list[float],
    val_losses: list[float],
    best_epoch: int | None = None,
    config_hash: str | None = None,
) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = np.arange(1, len(train_losses) + 1)
    ax.plot(epochs, train_losses, label="train", color="tab:blue")
    ax.plot(epochs, val_losses, label="validation", color="tab:orange")
    if best_epoch is not None:
        ax.axvline(best_epoch, color="gray", ls=":", lw=1, label=f"best epoch {best_epoch}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    _save(fig, path, config_hash)


def save_forecast_figure(
    path: str | Path,
    y_true: np.ndarray,
    quantiles: np.ndarray,
    levels: QuantileLevels,
    config_hash: str | None = None,
    max_points: int = 600,
) -> None:
    """Fan chart: nested central intervals, the median, and the actuals."""
    n = min(len(y_true), max_points)
    x = np.arange(n)
    q = np.asarray(quantiles)[:n]
    fig, ax = plt.subplots(figsize=(10, 4))
    pairs = [(i, len(levels) - 1 - i) for i in range(len(levels) // 2)]
    for depth, (lo, hi) in enumerate(pairs):
        ax.fill_between(x, q[:, lo], q[:, hi], color="tab:blue",
                        alpha=0.12 + 0.05 * depth, lw=0)
    ax.plot(x, q[:, levels.median_index], color="tab:blue", lw=1, label="median forecast")
    ax.plot(x, np.asarray(y_true)[:n], color="black", lw=0.8, label="actual")
    ax.set_xlabel("test sample")
    ax.set_ylabel("power")
    ax.legend()
    _save(fig, path, config_hash)


def save_scatter_figure(
    path: str | Path,
    y_true: np.ndarray,
    y_pred: np.ndarray,
    config_hash: str | None = None,
) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(y_true, y_pred, s=6, alpha=0.4, color="tab:blue")
    lim = max(float(np.max(y_true, initial=1e-9)), float(np.max(y_pred, initial=1e-9)))
    ax.plot([0, lim], [0, lim], color="black", lw=1, ls="--")
    ax.set_xlabel("actual power")
    ax.set_ylabel("median forecast")
    ax.set_aspect("equal")
    _save(fig, path, config_hash)
