"""Shared dual positional encoding.

Each feature scale owns exactly one learnable (L, C) table, initialized
sinusoidally.  The same table is added to the token stream at the block
input and again at the block output, so its gradient accumulates from both
sites; the "unshared" ablation instead allocates two independent tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import Tensor, add

POS_MODES = ("none", "pre", "post", "shared", "unshared")


def sinusoidal_init(length: int, channels: int) -> np.ndarray:
    """table[pos, 2i] = sin(pos / 10000^(2i/C)), odd columns the cosine."""
    if channels % 2 != 0:
        raise ValueError(f"channel count must be even, got {channels}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    rate = np.power(10000.0, np.arange(0, channels, 2) / channels)
    table = np.empty((length, channels))
    table[:, 0::2] = np.sin(pos / rate)
    table[:, 1::2] = np.cos(pos / rate)
    return table


@dataclass
class SharedPositionalEmbedding:
    table: Tensor   # (L, C)

    def named(self, prefix: str):
        return [(f"{prefix}.table", self.table)]


def init_posenc(length: int, channels: int) -> SharedPositionalEmbedding:
    return SharedPositionalEmbedding(
        Tensor(sinusoidal_init(length, channels), requires_grad=True))


def _add_table(tokens: Tensor, pe: SharedPositionalEmbedding, site: str) -> Tensor:
    if tokens.shape[-2:] != pe.table.shape:
        raise ValueError(
            f"{site}: token shape {tokens.shape} does not match "
            f"positional table {pe.table.shape}")
    return add(tokens, pe.table)


def add_pre(tokens: Tensor, pe: SharedPositionalEmbedding) -> Tensor:
    """Add the scale's table at the block input; (..., L, C) + (L, C)."""
    return _add_table(tokens, pe, "add_pre")


def add_post(tokens: Tensor, pe: SharedPositionalEmbedding) -> Tensor:
    """Add the table again at the block output (same object for sharing)."""
    return _add_table(tokens, pe, "add_post")
