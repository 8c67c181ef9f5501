"""Three-scale V-shaped segmentation network with Tim blocks.

Each encoder stage refines the incoming features with a small dense block,
halves every spatial axis with a stride-2 conv, and (unless disabled) runs a
Tim block on the flattened tokens of that scale.  The three stage outputs are
upsampled back to the input resolution, concatenated, and mapped to class
logits by a 1x1 conv head.  Convolution rank 2 or 3 is the only difference
between the 2D and 3D models; the Tim code path is identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import (
    Tensor,
    concat,
    conv_nd,
    log_softmax,
    reshape,
    silu,
    softmax,
    tmean,
    tsum,
    upsample_nearest,
)
from .tim import TimBlock, TimConfig

BAND_ORDER = ("low", "band", "high")


@dataclass
class NetConfig:
    rank: int = 2
    input_size: tuple = (64, 64)
    in_channels: int = 1
    classes: int = 2
    channels: tuple = (16, 32, 64)
    depth: int = 2
    growth: int = 8
    state: int = 16
    pool: int = 64
    pos_mode: str = "shared"
    bands: tuple = BAND_ORDER
    s_low: float = 0.1
    s_high: float = 0.9
    use_tim: bool = True
    use_freq: bool = True
    use_gate: bool = True
    use_residual: bool = True
    dice_weight: float = 1.0
    ce_weight: float = 1.0

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.channels = tuple(int(v) for v in self.channels)
        self.bands = tuple(self.bands)
        if self.rank not in (2, 3):
            raise ValueError("rank must be 2 or 3")
        if len(self.input_size) != self.rank:
            raise ValueError(f"input_size {self.input_size} does not match rank {self.rank}")
        if len(self.channels) != 3 or len(self.bands) != 3:
            raise ValueError("exactly three feature scales are supported")
        if any(s % 8 != 0 for s in self.input_size):
            raise ValueError("every input axis must be divisible by 8")
        if self.classes < 2:
            raise ValueError("need at least 2 classes")

    def scale_lengths(self) -> tuple[int, int, int]:
        total = int(np.prod(self.input_size))
        return tuple(total // (2 ** (self.rank * (s + 1))) for s in range(3))


class Conv:
    """Weight/bias pair for one n-D convolution."""

    def __init__(self, rng, rank: int, cin: int, cout: int, k: int,
                 stride: int = 1, padding: int = 0):
        fan_in = cin * k ** rank
        self.w = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                   (cout, cin) + (k,) * rank), requires_grad=True)
        self.b = Tensor(np.zeros(cout), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv_nd(x, self.w, self.b, self.stride, self.padding)

    def named(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


class Stage:
    """Dense block, stride-2 downsample, optional Tim."""

    def __init__(self, cfg: NetConfig, rng, index: int, cin: int):
        ch = cfg.channels[index]
        self.dense = [Conv(rng, cfg.rank, cin + i * cfg.growth, cfg.growth,
                           k=3, padding=1) for i in range(cfg.depth)]
        self.down = Conv(rng, cfg.rank, cin + cfg.depth * cfg.growth, ch,
                         k=2, stride=2)
        self.tim: TimBlock | None = None
        if cfg.use_tim:
            tcfg = TimConfig(channels=ch, length=cfg.scale_lengths()[index],
                             state=cfg.state, pool=cfg.pool,
                             band=cfg.bands[index], s_low=cfg.s_low,
                             s_high=cfg.s_high, pos_mode=cfg.pos_mode,
                             use_freq=cfg.use_freq, use_gate=cfg.use_gate,
                             use_residual=cfg.use_residual)
            self.tim = TimBlock(tcfg, rng)

    def __call__(self, x: Tensor) -> Tensor:
        t = x
        for conv in self.dense:
            t = concat([t, silu(conv(t))], axis=1)
        t = silu(self.down(t))
        if self.tim is not None:
            t = self.tim(t)
        return t

    def named(self, prefix: str):
        out = []
        for i, conv in enumerate(self.dense):
            out += conv.named(f"{prefix}.dense{i}")
        out += self.down.named(f"{prefix}.down")
        if self.tim is not None:
            out += self.tim.named(f"{prefix}.tim")
        return out


class TMambaNet:
    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.stages = []
        cin = cfg.in_channels
        for s in range(3):
            self.stages.append(Stage(cfg, rng, s, cin))
            cin = cfg.channels[s]
        self.head = Conv(rng, cfg.rank, sum(cfg.channels), cfg.classes, k=1)

    def forward(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        expect = (self.cfg.in_channels,) + self.cfg.input_size
        if x.shape[1:] != expect:
            raise ValueError(f"input shape {x.shape[1:]} != configured {expect}")
        outs = []
        t = x
        for stage in self.stages:
            t = stage(t)
            outs.append(t)
        ups = [upsample_nearest(out, 2 ** (s + 1)) for s, out in enumerate(outs)]
        return self.head(concat(ups, axis=1))

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        logits = self.forward(x)
        return np.argmax(logits.data, axis=1)

    def loss(self, logits: Tensor, labels: np.ndarray):
        """Soft-Dice plus cross-entropy, equally weighted by default."""
        k = self.cfg.classes
        labels = np.asarray(labels)
        if labels.shape != (logits.shape[0],) + logits.shape[2:]:
            raise ValueError(f"label shape {labels.shape} does not match logits")
        if labels.min() < 0 or labels.max() >= k:
            raise ValueError(f"labels must lie in [0, {k})")
        bsz = logits.shape[0]
        m = int(np.prod(logits.shape[2:]))
        flat = reshape(logits, (bsz, k, m))
        onehot = (labels.reshape(bsz, 1, m) == np.arange(k).reshape(1, k, 1))
        onehot = onehot.astype(np.float64)

        logp = log_softmax(flat, axis=1)
        ce = tsum(logp * Tensor(onehot)) * (-1.0 / (bsz * m))

        probs = softmax(flat, axis=1)
        smooth = 1e-6
        dice_terms = []
        for c in range(1, k):
            p = probs[:, c]                       # (B, M)
            y = onehot[:, c]
            inter = tsum(p * Tensor(y), axis=1)   # (B,)
            total = tsum(p, axis=1) + Tensor(y.sum(axis=1))
            dice_terms.append((2.0 * inter + smooth) / (total + smooth))
        dice = tmean(concat(dice_terms, axis=0))
        dice_loss = 1.0 - dice
        out = self.cfg.ce_weight * ce + self.cfg.dice_weight * dice_loss
        return out, {"ce": float(ce.data), "dice_loss": float(dice_loss.data)}

    # -- parameter plumbing ------------------------------------------------

    def named_params(self):
        out = []
        for s, stage in enumerate(self.stages):
            out += stage.named(f"stage{s + 1}")
        out += self.head.named("head")
        return out

    def census(self) -> dict:
        """Parameter counts, total and grouped by role."""
        groups = {"conv": 0, "ssm": 0, "freq": 0, "gate": 0, "posenc": 0,
                  "tim_other": 0}
        total = 0
        for name, p in self.named_params():
            total += p.size
            if ".pe" in name:
                groups["posenc"] += p.size
            elif ".fwd." in name or ".bwd." in name:
                groups["ssm"] += p.size
            elif ".freq." in name:
                groups["freq"] += p.size
            elif ".gate." in name:
                groups["gate"] += p.size
            elif ".tim." in name:
                groups["tim_other"] += p.size
            else:
                groups["conv"] += p.size
        return {"total": total, "groups": groups}

    def gate_proportions(self):
        """Mean gate weights per scale from the most recent forward pass."""
        out = {}
        for s, stage in enumerate(self.stages):
            if stage.tim is not None and stage.tim.last_gate is not None:
                out[f"scale{s + 1}"] = stage.tim.last_gate.mean(axis=0).tolist()
        return out

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_params()}

    def load_state_dict(self, state: dict) -> None:
        mine = dict(self.named_params())
        missing = sorted(set(mine) - set(state))
        extra = sorted(set(state) - set(mine))
        if missing or extra:
            raise ValueError(f"checkpoint mismatch; missing={missing[:3]} "
                             f"extra={extra[:3]}")
        for name, p in mine.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{arr.shape} vs {p.shape}")
            p.data = arr.copy()


def build(cfg: NetConfig, seed: int = 0) -> TMambaNet:
    return TMambaNet(cfg, np.random.default_rng(seed))
