"""Report figures rendered headlessly to image files.

Every function takes data plus an output path, draws with the Agg
backend, writes the file, and returns the path, so CLI report steps can
chain them without a display server.
"""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .baker import UV_WINDOW

__all__ = [
    "save_loss_curves", "save_uv_scatter", "save_iou_bars",
    "save_basis_grid", "save_texture_preview",
]

_LOSS_COLUMNS = ("L_c", "L_n", "L_x", "L_s", "L_p", "total")


def _finish(fig, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def save_loss_curves(metrics, path):
    """Plot per-term loss trajectories from trainer metric rows.

    metrics is a sequence of dicts with epoch, stage, and the loss
    columns; None entries (terms switched off that epoch) leave gaps.
    Stage boundaries show as vertical lines.
    """
    if not metrics:
        raise ValueError("save_loss_curves: no metric rows")
    epochs = np.array([row["epoch"] for row in metrics], dtype=np.float64)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for column in _LOSS_COLUMNS:
        values = np.array([np.nan if row.get(column) is None else row[column]
                           for row in metrics], dtype=np.float64)
        if np.isnan(values).all():
            continue
        ax.plot(epochs, values, label=column, linewidth=1.2)
    stages = np.array([row["stage"] for row in metrics])
    for boundary in epochs[1:][np.diff(stages) != 0]:
        ax.axvline(boundary - 0.5, color="gray", linestyle=":", linewidth=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("training losses")
    return _finish(fig, path)


def save_uv_scatter(uv_groups, path, group_names=None, window=UV_WINDOW):
    """Scatter one or more UV point sets inside the UV window.

    uv_groups is a sequence of (n, 2) arrays; each gets its own color
    and legend entry. Useful for landmark clouds across shapes.
    """
    if not len(uv_groups):
        raise ValueError("save_uv_scatter: no point groups")
    fig, ax = plt.subplots(figsize=(5, 5))
    for g, uv in enumerate(uv_groups):
        uv = np.asarray(uv, dtype=np.float64)
        name = group_names[g] if group_names else f"group {g}"
        ax.scatter(uv[:, 0], uv[:, 1], s=8, label=name, alpha=0.7)
    ax.set_xlim(-window, window)
    ax.set_ylim(-window, window)
    ax.set_aspect("equal")
    ax.set_xlabel("u")
    ax.set_ylabel("v")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("UV positions")
    return _finish(fig, path)


def save_iou_bars(per_class, class_names, path):
    """Bar chart of per-class IOU with the mean as a horizontal line."""
    per_class = np.asarray(per_class, dtype=np.float64)
    if len(per_class) != len(class_names):
        raise ValueError(
            f"save_iou_bars: {len(per_class)} scores, {len(class_names)} names")
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(class_names)), 4))
    shown = np.where(np.isnan(per_class), 0.0, per_class)
    ax.bar(range(len(class_names)), shown, color="tab:blue")
    mean = float(np.nanmean(per_class))
    ax.axhline(mean, color="tab:red", linestyle="--", linewidth=1,
               label=f"mean {mean:.3f}")
    ax.set_xticks(range(len(class_names)))
    ax.set_xticklabels(class_names, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("IOU")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_basis_grid(model, gen, path, resolution=64, max_channels=64):
    """Montage of one generator's basis channels on the UV grid.

    Channels are individually min-max normalized for display; a flat
    channel shows mid-gray.
    """
    raster = model.basis_raster(gen, resolution=resolution)
    n = min(raster.shape[2], max_channels)
    cols = int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(1.4 * cols, 1.4 * rows))
    axes = np.atleast_1d(axes).ravel()
    for c in range(n):
        img = raster[:, :, c].astype(np.float64)
        span = img.max() - img.min()
        shown = (img - img.min()) / span if span > 0 else np.full_like(img, 0.5)
        axes[c].imshow(shown, cmap="gray", vmin=0.0, vmax=1.0)
        axes[c].set_title(str(c), fontsize=6)
    for ax in axes:
        ax.axis("off")
    fig.suptitle(f"generator {gen} basis channels")
    return _finish(fig, path)


def save_texture_preview(textures, path):
    """Side-by-side baked textures with their validity masks below."""
    if not len(textures):
        raise ValueError("save_texture_preview: no textures")
    k = len(textures)
    fig, axes = plt.subplots(2, k, figsize=(3 * k, 6), squeeze=False)
    for g, tex in enumerate(textures):
        axes[0][g].imshow(np.clip(tex.raster, 0.0, 1.0))
        axes[0][g].set_title(f"texture {g}")
        axes[1][g].imshow(tex.validity, cmap="gray", vmin=0, vmax=1)
        axes[1][g].set_title(f"validity {g}", fontsize=8)
    for row in axes:
        for ax in row:
            ax.axis("off")
    return _finish(fig, path)
