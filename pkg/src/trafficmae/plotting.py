"""PNG figures rendered next to the CSV reports (headless Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps reruns byte-identical
_SAVE = {"dpi": 100, "metadata": {"Software": None}}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", **_SAVE)
    plt.close(fig)
    return str(path)


def plot_loss_history(history, path):
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [h["loss"] for h in history], color="black", lw=2, label="weighted total")
    if history:
        for name in history[0]["modalities"]:
            ax.plot(epochs, [h["modalities"][name] for h in history], lw=1, label=name)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("reconstruction MSE")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_purity(curves, path):
    """``curves`` maps a space name to ``{"k": [...], "p_c": [...]}``."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, c in curves.items():
        ax.plot(c["k"], c["p_c"], marker="o", label=name)
    ax.set_xscale("log")
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("K")
    ax.set_ylabel("macro K-NN class probability")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_arms(rows, path):
    """Bar chart of mean macro F1 per arm; ``rows`` are ``(arm, macro_f1, std)``."""
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(rows) + 2), 4))
    names = [r[0] for r in rows]
    ax.bar(names, [r[1] for r in rows], yerr=[r[2] for r in rows], color="tab:blue", capsize=3)
    ax.set_ylim(0, 1.02)
    ax.set_ylabel("macro F1 (mean over folds)")
    ax.tick_params(axis="x", rotation=30)
    return _save(fig, path)


def plot_grid(cells, path):
    """Heatmap of macro F1 over ``l1`` (rows) and ``l4`` (columns)."""
    l1s = sorted({c["l1"] for c in cells})
    l4s = sorted({c["l4"] for c in cells})
    grid = np.full((len(l1s), len(l4s)), np.nan)
    for c in cells:
        grid[l1s.index(c["l1"]), l4s.index(c["l4"])] = c["macro_f1"]
    fig, ax = plt.subplots(figsize=(1.2 * len(l4s) + 2, 1.0 * len(l1s) + 1.5))
    im = ax.imshow(grid, vmin=0, vmax=1, cmap="viridis")
    ax.set_xticks(range(len(l4s)), [str(v) for v in l4s])
    ax.set_yticks(range(len(l1s)), [str(v) for v in l1s])
    ax.set_xlabel("l4")
    ax.set_ylabel("l1")
    for i in range(len(l1s)):
        for j in range(len(l4s)):
            if np.isfinite(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.3f}", ha="center", va="center", color="white", fontsize=8)
    fig.colorbar(im, ax=ax, label="macro F1")
    return _save(fig, path)
