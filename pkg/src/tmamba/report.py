"""Figure and report writers: PNG plots, portable graymaps, delimited tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def write_tsv(path, rows: list[dict], columns: list[str]) -> None:
    lines = ["\t".join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            val = row.get(col)
            if isinstance(val, float):
                cells.append(f"{val:.6g}")
            elif val is None:
                cells.append("")
            else:
                cells.append(str(val))
        lines.append("\t".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_pgm(path, gray: np.ndarray) -> None:
    """Binary 8-bit portable graymap of a 2D array scaled to [0, 255]."""
    if gray.ndim != 2:
        raise ValueError(f"PGM needs a 2D array, got shape {gray.shape}")
    arr = np.asarray(gray, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        arr = (arr - lo) / (hi - lo)
    else:
        arr = np.zeros_like(arr)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def save_loss_curves(history: list[dict], path) -> None:
    epochs = [h["epoch"] for h in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [h["train_loss"] for h in history], label="train")
    ax1.plot(epochs, [h["val_loss"] for h in history], label="val")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax1.set_title("loss")
    ax2.plot(epochs, [h["val_dsc"] for h in history], label="val DSC")
    ax2.plot(epochs, [h["val_iou"] for h in history], label="val IoU")
    ax2.set_xlabel("epoch")
    ax2.set_ylim(0, 1)
    ax2.legend()
    ax2.set_title("validation overlap")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_bench_plot(rows: list[dict], path) -> None:
    lengths = [r["length"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.loglog(lengths, [r["scan_s"] for r in rows], "o-", label="selective scan")
    ax.loglog(lengths, [r["attn_s"] for r in rows], "s-", label="self-attention")
    ax.set_xlabel("sequence length")
    ax.set_ylabel("median seconds")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_spectrum_plot(pre_mag: np.ndarray, post_mag: np.ndarray,
                       mask: np.ndarray, path) -> None:
    """Per-channel magnitude spectra before/after masking plus the mask."""
    channels = pre_mag.shape[0]
    bins = np.arange(pre_mag.shape[1])
    fig, axes = plt.subplots(channels, 1, figsize=(7, 2.2 * channels),
                             squeeze=False)
    for c in range(channels):
        ax = axes[c][0]
        ax.plot(bins, pre_mag[c], label="pre-mask", alpha=0.8)
        ax.plot(bins, post_mag[c], label="post-mask", alpha=0.8)
        ax.fill_between(bins, 0, pre_mag[c].max() * mask, alpha=0.15,
                        label="kept bins" if c == 0 else None)
        ax.set_ylabel(f"ch {c}")
        if c == 0:
            ax.legend(fontsize=8)
    axes[-1][0].set_xlabel("frequency bin")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _mid_slice(arr: np.ndarray) -> np.ndarray:
    """2D view of a 2D or 3D array (middle slice along the last axis)."""
    if arr.ndim == 2:
        return arr
    return arr[:, :, arr.shape[2] // 2]


def save_overlay(image: np.ndarray, gt: np.ndarray, pred: np.ndarray,
                 path, title: str = "") -> None:
    """Image / ground truth / prediction montage (middle slice in 3D)."""
    img2 = _mid_slice(image[0] if image.ndim > gt.ndim else image)
    gt2 = _mid_slice(gt)
    pred2 = _mid_slice(pred)
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    axes[0].imshow(img2, cmap="gray", vmin=0, vmax=1)
    axes[0].set_title("image")
    axes[1].imshow(gt2, cmap="viridis", vmin=0, vmax=1)
    axes[1].set_title("ground truth")
    axes[2].imshow(pred2, cmap="viridis", vmin=0, vmax=1)
    axes[2].set_title("prediction")
    for ax in axes:
        ax.axis("off")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_sample_grid(samples, path, count: int = 6) -> None:
    """Preview figure for a synthetic dataset."""
    count = min(count, len(samples))
    fig, axes = plt.subplots(2, count, figsize=(2.2 * count, 4.6),
                             squeeze=False)
    for i in range(count):
        axes[0][i].imshow(_mid_slice(samples[i].image[0]), cmap="gray",
                          vmin=0, vmax=1)
        axes[0][i].set_title(samples[i].id, fontsize=8)
        axes[1][i].imshow(_mid_slice(samples[i].mask), cmap="viridis",
                          vmin=0, vmax=1)
        axes[0][i].axis("off")
        axes[1][i].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
