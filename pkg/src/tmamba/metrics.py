"""Segmentation metrics: DSC, IoU, mIoU, ACC, HD, ASSD, SO.

Overlap metrics come from the voxel confusion counts.  Surface metrics use
face-connected boundary cells (everything outside the grid counts as
background) and Euclidean distances in millimetres between cell centers,
with spacing given per axis.  Surface overlap (SO) is the symmetric fraction
of boundary cells lying within a tolerance of the other boundary; the
default tolerance is 1.0 mm.  HD is the exact maximum, not a percentile.
"""

from __future__ import annotations

import numpy as np


def _as_bool(mask) -> np.ndarray:
    return np.asarray(mask).astype(bool)


def _check_grids(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"grid mismatch: {pred.shape} vs {gt.shape}")


def _spacing_vector(spacing, rank: int) -> np.ndarray:
    arr = np.asarray(spacing, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(rank, float(arr))
    if arr.shape != (rank,):
        raise ValueError(f"spacing must be scalar or length-{rank}")
    if (arr <= 0).any():
        raise ValueError("spacing must be strictly positive")
    return arr


def overlap_metrics(pred, gt) -> dict:
    """DSC, IoU, mIoU and pixel accuracy from confusion counts.

    Both masks empty -> dsc = iou = 1 by convention.
    """
    p, g = _as_bool(pred), _as_bool(gt)
    _check_grids(p, g)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    denom_f = tp + fp + fn
    iou_f = 1.0 if denom_f == 0 else tp / denom_f
    denom_b = tn + fp + fn
    iou_b = 1.0 if denom_b == 0 else tn / denom_b
    dsc = 1.0 if denom_f == 0 else 2.0 * tp / (2.0 * tp + fp + fn)
    return {
        "dsc": dsc,
        "iou": iou_f,
        "miou": 0.5 * (iou_f + iou_b),
        "acc": (tp + tn) / (tp + tn + fp + fn),
    }


def surface_cells(mask) -> np.ndarray:
    """Integer coordinates of foreground cells with a background face-neighbor.

    Cells on the grid boundary count their missing neighbors as background.
    """
    m = _as_bool(mask)
    padded = np.pad(m, 1, constant_values=False)
    all_fg = np.ones_like(m)
    core = tuple(slice(1, 1 + n) for n in m.shape)
    for ax in range(m.ndim):
        for shift in (-1, 1):
            sl = list(core)
            sl[ax] = slice(1 + shift, 1 + shift + m.shape[ax])
            all_fg &= padded[tuple(sl)]
    return np.argwhere(m & ~all_fg)


def _directed_min_dists(src: np.ndarray, dst: np.ndarray,
                        spacing: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Min Euclidean distance (mm) from each src cell center to dst."""
    src_mm = src * spacing
    dst_mm = dst * spacing
    out = np.empty(src_mm.shape[0])
    for lo in range(0, src_mm.shape[0], chunk):
        hi = min(lo + chunk, src_mm.shape[0])
        diff = src_mm[lo:hi, None, :] - dst_mm[None, :, :]
        d2 = (diff * diff).sum(axis=-1)
        out[lo:hi] = np.sqrt(d2.min(axis=1))
    return out


def surface_metrics(pred, gt, spacing=1.0, tolerance_mm: float = 1.0) -> dict:
    """HD, ASSD and SO between two nonempty masks."""
    p, g = _as_bool(pred), _as_bool(gt)
    _check_grids(p, g)
    sp = _spacing_vector(spacing, p.ndim)
    cells_p = surface_cells(p)
    cells_g = surface_cells(g)
    if cells_p.shape[0] == 0 or cells_g.shape[0] == 0:
        raise ValueError("surface metrics are undefined for an empty mask")
    d_pg = _directed_min_dists(cells_p, cells_g, sp)
    d_gp = _directed_min_dists(cells_g, cells_p, sp)
    within = np.count_nonzero(d_pg <= tolerance_mm) + \
        np.count_nonzero(d_gp <= tolerance_mm)
    return {
        "hd": max(float(d_pg.max()), float(d_gp.max())),
        "assd": 0.5 * (float(d_pg.mean()) + float(d_gp.mean())),
        "so": within / (d_pg.shape[0] + d_gp.shape[0]),
    }


def evaluate_pair(pred, gt, spacing=1.0, tolerance_mm: float = 1.0) -> dict:
    """Full per-sample report; surface metrics are None when undefined."""
    report = overlap_metrics(pred, gt)
    p, g = _as_bool(pred), _as_bool(gt)
    if p.any() and g.any():
        report.update(surface_metrics(p, g, spacing, tolerance_mm))
    else:
        report.update({"hd": None, "assd": None, "so": None})
    return report


def aggregate(reports: list[dict]) -> dict:
    """Mean of each metric over samples, skipping undefined entries."""
    out = {}
    keys = ("dsc", "iou", "miou", "acc", "hd", "assd", "so")
    for key in keys:
        vals = [r[key] for r in reports if r.get(key) is not None]
        out[key] = float(np.mean(vals)) if vals else None
    out["count"] = len(reports)
    return out
