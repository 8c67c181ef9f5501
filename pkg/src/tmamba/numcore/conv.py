"""Convolution, upsampling and related spatial kernels (rank 1/2/3).

Forward passes lower to an im2col matrix product; the column matrix is kept
alive for the backward pass, which reuses it for the weight gradient and
scatters the input gradient one kernel offset at a time.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_node


def _tuplize(v, rank: int) -> tuple[int, ...]:
    if isinstance(v, (tuple, list)):
        if len(v) != rank:
            raise ValueError(f"expected {rank} entries, got {v!r}")
        return tuple(int(x) for x in v)
    return (int(v),) * rank


def _windows(xp: np.ndarray, ksize, stride):
    """Strided sliding windows over the spatial axes of (B, C, spatial...)."""
    rank = len(ksize)
    win = sliding_window_view(xp, ksize, axis=tuple(range(2, 2 + rank)))
    sl = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    return win[sl]  # (B, C, O..., K...)


def conv_nd(x: Tensor, w: Tensor, b: Tensor | None = None,
            stride=1, padding=0) -> Tensor:
    """N-dimensional cross-correlation.

    x: (B, Cin, S1..Sr), w: (Cout, Cin, K1..Kr); returns (B, Cout, O1..Or)
    with Oi = (Si + 2*pad_i - Ki) // stride_i + 1.
    """
    rank = x.ndim - 2
    if w.ndim != rank + 2:
        raise ValueError(f"weight rank {w.ndim} does not match input rank {x.ndim}")
    ksize = w.shape[2:]
    stride = _tuplize(stride, rank)
    padding = _tuplize(padding, rank)
    cin, cout = w.shape[1], w.shape[0]
    if x.shape[1] != cin:
        raise ValueError(f"input channels {x.shape[1]} != weight channels {cin}")

    pad_widths = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
    xp = np.pad(x.data, pad_widths) if any(padding) else x.data
    win = _windows(xp, ksize, stride)            # (B, Cin, O..., K...)
    bsz = x.shape[0]
    out_spatial = win.shape[2:2 + rank]
    n_out = int(np.prod(out_spatial))
    kvol = int(np.prod(ksize))

    def to_cols(windows):
        # (B, Cin, O..., K...) -> (B*prod(O), Cin*prod(K))
        src = np.moveaxis(windows, 1, 1 + rank)  # (B, O..., Cin, K...)
        return src.reshape(bsz * n_out, cin * kvol)

    wmat = w.data.reshape(cout, cin * kvol)
    cols = to_cols(win)                          # kept for the backward pass
    out_flat = cols @ wmat.T                     # (B*prod(O), Cout)
    out_data = np.moveaxis(out_flat.reshape((bsz,) + out_spatial + (cout,)),
                           -1, 1)
    if b is not None:
        out_data = out_data + b.data.reshape((cout,) + (1,) * rank)

    def vjp(g):
        gmat = np.moveaxis(g, 1, -1).reshape(bsz * n_out, cout)
        gw = (gmat.T @ cols).reshape(w.shape)
        # Input gradient: one matmul back to column space, then scatter
        # each kernel offset with a strided slice-add.
        gcols = (gmat @ wmat).reshape((bsz,) + out_spatial + (cin,) + ksize)
        gcols = np.moveaxis(gcols, 1 + rank, 1)  # (B, Cin, O..., K...)
        gxp = np.zeros_like(xp)
        for flat in range(kvol):
            offs = np.unravel_index(flat, ksize)
            sl = tuple(slice(o, o + n * s, s)
                       for o, n, s in zip(offs, out_spatial, stride))
            gxp[(slice(None), slice(None)) + sl] += gcols[(Ellipsis,) + offs]
        if any(padding):
            crop = tuple(slice(p, p + n) for p, n in zip(padding, x.shape[2:]))
            gx = gxp[(slice(None), slice(None)) + crop]
        else:
            gx = gxp
        if b is None:
            return gx, gw
        gb = g.sum(axis=(0,) + tuple(range(2, 2 + rank)))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out_data, parents, vjp, "conv_nd")


def depthwise_conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-channel 1-D convolution along the middle axis of (B, L, D).

    w: (K, D) with K odd; zero padding keeps the sequence length.
    """
    k, d = w.shape
    if k % 2 == 0:
        raise ValueError("kernel length must be odd for same-length output")
    if x.shape[2] != d:
        raise ValueError("channel mismatch between input and kernel")
    half = k // 2
    length = x.shape[1]
    xp = np.pad(x.data, ((0, 0), (half, half), (0, 0)))
    win = sliding_window_view(xp, k, axis=1)      # (B, L, D, K)
    out_data = np.einsum("bldk,kd->bld", win, w.data)
    if b is not None:
        out_data = out_data + b.data

    def vjp(g):
        gw = np.einsum("bld,bldk->kd", g, win)
        gxp = np.zeros_like(xp)
        for kk in range(k):
            gxp[:, kk:kk + length, :] += g * w.data[kk]
        gx = gxp[:, half:half + length, :]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1))

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out_data, parents, vjp, "depthwise_conv1d")


def upsample_nearest(x: Tensor, factor) -> Tensor:
    """Nearest-neighbor upsampling of the spatial axes of (B, C, spatial...)."""
    rank = x.ndim - 2
    factor = _tuplize(factor, rank)
    out_data = x.data
    for ax, f in enumerate(factor):
        if f > 1:
            out_data = np.repeat(out_data, f, axis=2 + ax)

    def vjp(g):
        # Fold each upsampled axis into (size, factor) blocks and sum.
        shape = []
        sum_axes = []
        for ax, n in enumerate(g.shape):
            if ax < 2:
                shape.append(n)
                continue
            f = factor[ax - 2]
            shape.extend([n // f, f])
            sum_axes.append(len(shape) - 1)
        return (g.reshape(shape).sum(axis=tuple(sum_axes)),)

    return make_node(out_data, (x,), vjp, "upsample_nearest")
