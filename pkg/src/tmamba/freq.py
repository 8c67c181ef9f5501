"""Frequency-domain feature branch: FFT, learnable spectral weights,
bandpass masking, inverse FFT, and gating by the pooled activation stream.

The spectral weights are stored only for non-negative frequency bins and
mirrored conjugate-symmetrically, so a real input always comes back real up
to roundoff.  The bandpass mask keeps bins by normalized frequency position
nu(k) = min(k, n-k) / (n/2); boundary equality is excluded in every band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import Tensor, make_node, mul, pad_last, permute, tmax
from .numcore.fft import as_pair, fft1d, ifft1d, cmul

BANDS = ("low", "band", "high")


class ResidueError(ArithmeticError):
    """Inverse FFT left a non-negligible imaginary part (asymmetric weights)."""


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def bandpass_mask(n_bins: int, band: str, s_low: float = 0.1,
                  s_high: float = 0.9) -> np.ndarray:
    """Binary keep-mask over frequency bins of a length-n_bins transform."""
    if n_bins < 1 or (n_bins & (n_bins - 1)) != 0:
        raise ValueError(f"n_bins must be a power of two, got {n_bins}")
    if band not in BANDS:
        raise ValueError(f"band must be one of {BANDS}, got {band!r}")
    k = np.arange(n_bins)
    nu = np.minimum(k, n_bins - k) / (n_bins / 2)
    if band == "low":
        keep = nu < s_low
    elif band == "band":
        keep = (s_low < nu) & (nu < s_high)
    else:
        keep = nu > s_high
    return keep.astype(np.float64)


@dataclass
class FreqBranchParams:
    """Learnable spectral weights plus the band selection for one scale."""

    wf: Tensor          # (C, n/2 + 1, 2) non-negative-frequency weights
    n_bins: int         # padded transform length
    band: str
    s_low: float = 0.1
    s_high: float = 0.9

    def __post_init__(self):
        # equal thresholds are allowed: they give a band that keeps nothing
        if not (0.0 < self.s_low <= self.s_high < 1.0):
            raise ValueError("thresholds must satisfy 0 < s_low <= s_high < 1")
        if self.band not in BANDS:
            raise ValueError(f"band must be one of {BANDS}, got {self.band!r}")

    def named(self, prefix: str):
        return [(f"{prefix}.wf", self.wf)]


def init_freq_params(channels: int, n_bins: int, band: str,
                     s_low: float = 0.1, s_high: float = 0.9) -> FreqBranchParams:
    """Identity spectrum (1 + 0i) on every stored bin."""
    wf = np.zeros((channels, n_bins // 2 + 1, 2))
    wf[:, :, 0] = 1.0
    return FreqBranchParams(Tensor(wf, requires_grad=True), n_bins, band,
                            s_low, s_high)


def mirror_spectrum(wf: Tensor, n_bins: int) -> Tensor:
    """Expand (C, n/2+1, 2) weights to a conjugate-symmetric (C, n, 2) spectrum.

    The imaginary parts of the DC and Nyquist bins are forced to zero, so the
    full spectrum is exactly symmetric whatever the raw parameters hold.
    """
    half = n_bins // 2
    if wf.shape[-2] != half + 1:
        raise ValueError(f"expected {half + 1} stored bins, got {wf.shape[-2]}")
    data = wf.data.copy()
    data[:, 0, 1] = 0.0
    data[:, half, 1] = 0.0
    full = np.empty(wf.shape[:-2] + (n_bins, 2))
    full[:, : half + 1] = data
    full[:, half + 1 :, 0] = data[:, half - 1 : 0 : -1, 0]
    full[:, half + 1 :, 1] = -data[:, half - 1 : 0 : -1, 1]

    def vjp(g):
        gw = g[:, : half + 1].copy()
        if half > 1:
            gw[:, 1:half, 0] += g[:, n_bins - 1 : half : -1, 0]
            gw[:, 1:half, 1] -= g[:, n_bins - 1 : half : -1, 1]
        gw[:, 0, 1] = 0.0
        gw[:, half, 1] = 0.0
        return (gw,)

    return make_node(full, (wf,), vjp, "mirror_spectrum")


def apply_frequency_branch(x: Tensor, zp: Tensor,
                           params: FreqBranchParams) -> Tensor:
    """Filter token sequences in the frequency domain and gate the result.

    x, zp: (B, L, C) or (L, C).  Pipeline per channel: zero-pad L to the
    configured power of two, FFT, multiply by the mirrored spectral weights,
    apply the bandpass mask, inverse FFT, check the imaginary residue,
    truncate to L, then scale by the per-channel sequence max of zp.
    """
    if x.ndim not in (2, 3):
        raise ValueError(f"expected (L, C) or (B, L, C), got shape {x.shape}")
    if x.shape != zp.shape:
        raise ValueError(f"x shape {x.shape} != zp shape {zp.shape}")
    length = x.shape[-2]
    pad = params.n_bins - length
    if pad < 0:
        raise ValueError(f"sequence length {length} exceeds configured "
                         f"transform length {params.n_bins}")

    xt = permute(x, (0, 2, 1)) if x.ndim == 3 else permute(x, (1, 0))
    if pad:
        xt = pad_last(xt, 0, pad)
    spec = fft1d(as_pair(xt))                         # (..., C, n, 2)
    spec = cmul(spec, mirror_spectrum(params.wf, params.n_bins))
    mask = bandpass_mask(params.n_bins, params.band, params.s_low, params.s_high)
    spec = mul(spec, Tensor(mask[:, None]))
    back = ifft1d(spec)                               # (..., C, n, 2)

    residue = float(np.max(np.abs(back.data[..., 1]))) if back.data.size else 0.0
    if residue >= 1e-8:
        raise ResidueError(
            f"imaginary residue {residue:.3e} after inverse FFT; spectral "
            "weights are not conjugate-symmetric")

    real = back[..., 0]
    if pad:
        real = real[..., :length]
    out = permute(real, (0, 2, 1)) if real.ndim == 3 else permute(real, (1, 0))
    gate = tmax(zp, axis=-2, keepdims=True)           # (..., 1, C)
    return mul(out, gate)
