"""Report figures, rendered off-screen to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import TARGETS  # noqa: E402

_META = {"Software": None}  # keep PNG bytes independent of the matplotlib version string


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_fold_errors(report: dict, path) -> Path:
    """Evaluation MAE/RMSE per fold, with the ZeroR baseline when present."""
    folds = report["folds"]
    ks = [f["fold"] for f in folds]
    x = np.arange(len(ks))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(x - 0.2, [f["eval"]["mae"] for f in folds], 0.4, label="MAE")
    ax.bar(x + 0.2, [f["eval"]["rmse"] for f in folds], 0.4, label="RMSE")
    if all("baseline" in f for f in folds):
        ax.plot(x, [f["baseline"]["mae"] for f in folds], "k_", markersize=22, mew=2, label="ZeroR MAE")
    ax.set_xticks(x, [f"fold {k}" for k in ks])
    ax.set_ylabel("error (percentage points)")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_predictions(report: dict, labels: dict, path) -> Path:
    """Predicted against true percentage, one panel per target."""
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.4), sharex=True, sharey=True)
    for fold in report["folds"]:
        vids = sorted(fold["predictions"])
        pred = np.array([fold["predictions"][v] for v in vids]).reshape(-1, 3)
        true = np.array([labels[v] for v in vids]).reshape(-1, 3)
        for j, ax in enumerate(axes):
            ax.scatter(true[:, j], pred[:, j], s=12, label=f"fold {fold['fold']}")
    for j, ax in enumerate(axes):
        ax.plot([0, 100], [0, 100], color="0.6", lw=0.8)
        ax.set_title(TARGETS[j].replace("_", "-"), fontsize=9)
        ax.set_xlabel("true %")
    axes[0].set_ylabel("predicted %")
    axes[-1].legend(frameon=False, fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_msd(vectors, path, max_curves: int = 50) -> Path:
    """MSD curves on log-log axes (lag time in seconds)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for v in list(vectors)[:max_curves]:
        keep = v.values > 0
        if keep.any():
            ax.loglog(v.lag_times[keep], v.values[keep], lw=0.7, alpha=0.6)
    ax.set_xlabel("lag time (s)")
    ax.set_ylabel("MSD (px$^2$)")
    fig.tight_layout()
    return _save(fig, path)
