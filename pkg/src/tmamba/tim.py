"""Tim block: gated tri-feature token mixer.

Pipeline over flattened spatial tokens (B, L, C): positional table in,
layer norm, twin linear streams x/z, short depthwise convolution on x,
bidirectional selective scans gated by SiLU(z), a frequency-domain branch
on the same projected stream, data-dependent softmax fusion of the three
features with an output projection and residual, positional table out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import (
    Tensor,
    add,
    adaptive_mean_pool1d,
    depthwise_conv1d,
    layer_norm,
    linear,
    mul,
    permute,
    reshape,
    silu,
    softmax,
)
from .freq import BANDS, FreqBranchParams, apply_frequency_branch, init_freq_params, next_pow2
from .posenc import POS_MODES, SharedPositionalEmbedding, add_post, add_pre, init_posenc
from .ssm import SsmParams, bidirectional_scan, init_ssm_params


@dataclass
class TimConfig:
    channels: int
    length: int
    state: int = 16
    pool: int = 64
    band: str = "band"
    s_low: float = 0.1
    s_high: float = 0.9
    pos_mode: str = "shared"
    use_freq: bool = True
    use_gate: bool = True
    use_residual: bool = True
    conv_kernel: int = 3

    def __post_init__(self):
        if self.pos_mode not in POS_MODES:
            raise ValueError(f"pos_mode must be one of {POS_MODES}")
        if self.band not in BANDS:
            raise ValueError(f"band must be one of {BANDS}")
        if self.pool < 1:
            raise ValueError("pooled dimension must be >= 1")


@dataclass
class GateParams:
    """Pool -> MLP -> softmax weights, plus the block output projection."""

    w1: Tensor   # (P, P)
    b1: Tensor   # (P,)
    w2: Tensor   # (P, n_feats), zero at init so weights start uniform
    b2: Tensor   # (n_feats,)
    w_o: Tensor  # (C, C)
    b_o: Tensor  # (C,)

    def named(self, prefix: str):
        return [(f"{prefix}.{k}", getattr(self, k))
                for k in ("w1", "b1", "w2", "b2", "w_o", "b_o")]


def init_gate_params(rng: np.random.Generator, channels: int, pool: int,
                     n_feats: int) -> GateParams:
    return GateParams(
        w1=Tensor(rng.normal(0.0, 1.0 / np.sqrt(pool), (pool, pool)),
                  requires_grad=True),
        b1=Tensor(np.zeros(pool), requires_grad=True),
        w2=Tensor(np.zeros((pool, n_feats)), requires_grad=True),
        b2=Tensor(np.zeros(n_feats), requires_grad=True),
        w_o=Tensor(rng.normal(0.0, 1.0 / np.sqrt(channels), (channels, channels)),
                   requires_grad=True),
        b_o=Tensor(np.zeros(channels), requires_grad=True),
    )


def _fuse(feats, x: Tensor, gp: GateParams, use_gate: bool,
          use_residual: bool):
    """Weighted fusion + output projection (+ residual); returns (out, weights)."""
    for f in feats:
        if f.shape != x.shape:
            raise ValueError(f"feature shape {f.shape} != input shape {x.shape}")
    if use_gate:
        bsz = x.shape[0]
        pool = gp.w1.shape[0]
        pooled = adaptive_mean_pool1d(reshape(x, (bsz, -1)), pool)
        hidden = silu(linear(pooled, gp.w1, gp.b1))
        weights = softmax(linear(hidden, gp.w2, gp.b2), axis=-1)  # (B, n)
        fused = None
        for i, f in enumerate(feats):
            wi = reshape(weights[:, i : i + 1], (bsz, 1, 1))
            term = mul(f, wi)
            fused = term if fused is None else add(fused, term)
        wdata = weights.data.copy()
    else:
        fused = feats[0]
        for f in feats[1:]:
            fused = add(fused, f)
        fused = mul(fused, Tensor(1.0 / len(feats)))
        wdata = None
    out = linear(fused, gp.w_o, gp.b_o)
    if use_residual:
        out = add(out, x)
    return out, wdata


def gate_select(f_fwd: Tensor, f_bwd: Tensor, f_freq: Tensor, x: Tensor,
                params: GateParams) -> Tensor:
    """Fuse three aligned feature streams under data-dependent weights.

    Accepts (L, C) or (B, L, C); the softmax weights come from an adaptive
    mean-pool of the flattened input, and the fused result is projected and
    added back onto x.
    """
    squeeze = x.ndim == 2
    if squeeze:
        f_fwd, f_bwd, f_freq, x = (reshape(t, (1,) + t.shape)
                                   for t in (f_fwd, f_bwd, f_freq, x))
    out, _ = _fuse([f_fwd, f_bwd, f_freq], x, params, True, True)
    return reshape(out, out.shape[1:]) if squeeze else out


def tokens_from_map(x: Tensor) -> Tensor:
    """(B, C, spatial...) -> (B, L, C) with L the flattened spatial size."""
    bsz, ch = x.shape[0], x.shape[1]
    length = int(np.prod(x.shape[2:]))
    return permute(reshape(x, (bsz, ch, length)), (0, 2, 1))


def map_from_tokens(tokens: Tensor, spatial: tuple[int, ...]) -> Tensor:
    """(B, L, C) -> (B, C, spatial...)."""
    bsz, _, ch = tokens.shape
    return reshape(permute(tokens, (0, 2, 1)), (bsz, ch) + tuple(spatial))


class TimBlock:
    """One Tim unit bound to a fixed (length, channels) scale."""

    def __init__(self, cfg: TimConfig, rng: np.random.Generator):
        self.cfg = cfg
        c, k, n, p = cfg.channels, cfg.conv_kernel, cfg.state, cfg.pool
        scale = 1.0 / np.sqrt(c)
        self.ln_gamma = Tensor(np.ones(c), requires_grad=True)
        self.ln_beta = Tensor(np.zeros(c), requires_grad=True)
        self.w_x = Tensor(rng.normal(0.0, scale, (c, c)), requires_grad=True)
        self.w_z = Tensor(rng.normal(0.0, scale, (c, c)), requires_grad=True)
        self.conv_w = Tensor(rng.normal(0.0, 1.0 / np.sqrt(k), (k, c)),
                             requires_grad=True)
        self.conv_b = Tensor(np.zeros(c), requires_grad=True)
        self.fwd = init_ssm_params(rng, c, n)
        self.bwd = init_ssm_params(rng, c, n)
        n_feats = 3 if cfg.use_freq else 2
        self.gate = init_gate_params(rng, c, p, n_feats)
        self.freq: FreqBranchParams | None = None
        if cfg.use_freq:
            self.freq = init_freq_params(c, next_pow2(cfg.length), cfg.band,
                                         cfg.s_low, cfg.s_high)
        self.pe_pre: SharedPositionalEmbedding | None = None
        self.pe_post: SharedPositionalEmbedding | None = None
        if cfg.pos_mode == "pre":
            self.pe_pre = init_posenc(cfg.length, c)
        elif cfg.pos_mode == "post":
            self.pe_post = init_posenc(cfg.length, c)
        elif cfg.pos_mode == "shared":
            self.pe_pre = self.pe_post = init_posenc(cfg.length, c)
        elif cfg.pos_mode == "unshared":
            self.pe_pre = init_posenc(cfg.length, c)
            self.pe_post = init_posenc(cfg.length, c)
        self.last_gate: np.ndarray | None = None

    def forward_tokens(self, tokens: Tensor) -> Tensor:
        if tokens.shape[-2:] != (self.cfg.length, self.cfg.channels):
            raise ValueError(
                f"token shape {tokens.shape} does not match configured scale "
                f"({self.cfg.length}, {self.cfg.channels})")
        x_in = tokens
        if self.pe_pre is not None:
            x_in = add_pre(x_in, self.pe_pre)
        h = layer_norm(x_in, self.ln_gamma, self.ln_beta)
        xs = linear(h, self.w_x)
        zp = silu(linear(h, self.w_z))
        xc = silu(depthwise_conv1d(xs, self.conv_w, self.conv_b))
        y_f, y_b = bidirectional_scan(xc, self.fwd, self.bwd)
        feats = [mul(y_f, zp), mul(y_b, zp)]
        if self.freq is not None:
            feats.append(apply_frequency_branch(xs, zp, self.freq))
        out, weights = _fuse(feats, x_in, self.gate,
                             self.cfg.use_gate, self.cfg.use_residual)
        self.last_gate = weights
        if self.pe_post is not None:
            out = add_post(out, self.pe_post)
        return out

    def __call__(self, feature_map: Tensor) -> Tensor:
        spatial = feature_map.shape[2:]
        tokens = tokens_from_map(feature_map)
        return map_from_tokens(self.forward_tokens(tokens), spatial)

    def named(self, prefix: str):
        out = [(f"{prefix}.ln_gamma", self.ln_gamma),
               (f"{prefix}.ln_beta", self.ln_beta),
               (f"{prefix}.w_x", self.w_x),
               (f"{prefix}.w_z", self.w_z),
               (f"{prefix}.conv_w", self.conv_w),
               (f"{prefix}.conv_b", self.conv_b)]
        out += self.fwd.named(f"{prefix}.fwd")
        out += self.bwd.named(f"{prefix}.bwd")
        out += self.gate.named(f"{prefix}.gate")
        if self.freq is not None:
            out += self.freq.named(f"{prefix}.freq")
        if self.cfg.pos_mode == "shared":
            out += self.pe_pre.named(f"{prefix}.pe")
        else:
            if self.pe_pre is not None:
                out += self.pe_pre.named(f"{prefix}.pe_pre")
            if self.pe_post is not None:
                out += self.pe_post.named(f"{prefix}.pe_post")
        return out
