"""Training loop: AdamW, plateau learning-rate schedule, logs, checkpoints."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config, ConfigError
from .data import SegSample, load_split, write_tensorfile
from .metrics import overlap_metrics
from .net import NetConfig, TMambaNet, build
from .numcore import no_grad


@dataclass
class TrainSettings:
    epochs: int = 30
    batch: int = 8
    lr: float = 5e-3
    weight_decay: float = 5e-5
    betas: tuple = (0.9, 0.999)
    plateau_patience: int = 3
    plateau_factor: float = 0.5
    min_lr: float = 1e-5
    seed: int = 0

    @classmethod
    def from_config(cls, cfg: Config) -> "TrainSettings":
        return cls(
            epochs=cfg.get_int("train.epochs", 30),
            batch=cfg.get_int("train.batch", 8),
            lr=cfg.get_float("train.lr", 5e-3),
            weight_decay=cfg.get_float("train.weight_decay", 5e-5),
            betas=(cfg.get_float("train.beta1", 0.9),
                   cfg.get_float("train.beta2", 0.999)),
            plateau_patience=cfg.get_int("train.plateau_patience", 3),
            plateau_factor=cfg.get_float("train.plateau_factor", 0.5),
            min_lr=cfg.get_float("train.min_lr", 1e-5),
            seed=cfg.seed(),
        )


class AdamW:
    """Decoupled weight decay Adam over named parameter tensors."""

    def __init__(self, named_params, lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = [p for _, p in named_params]
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


class ReduceOnPlateau:
    """Halve the learning rate after `patience` epochs without improvement."""

    def __init__(self, opt: AdamW, factor: float = 0.5, patience: int = 3,
                 min_lr: float = 1e-5, rel_eps: float = 1e-4):
        self.opt = opt
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.rel_eps = rel_eps
        self.best = np.inf
        self.wait = 0

    def step(self, value: float) -> bool:
        if value < self.best * (1.0 - self.rel_eps):
            self.best = value
            self.wait = 0
            return False
        self.wait += 1
        if self.wait >= self.patience:
            self.wait = 0
            self.opt.lr = max(self.min_lr, self.opt.lr * self.factor)
            return True
        return False


def _stack(samples: list[SegSample], idx) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([samples[i].image for i in idx])
    masks = np.stack([samples[i].mask for i in idx]).astype(np.int64)
    return images, masks


def evaluate_split(model: TMambaNet, samples: list[SegSample],
                   batch: int = 8) -> dict:
    """Mean loss / DSC / IoU over a sample list without touching gradients."""
    losses, dscs, ious = [], [], []
    with no_grad():
        for lo in range(0, len(samples), batch):
            idx = range(lo, min(lo + batch, len(samples)))
            images, masks = _stack(samples, idx)
            logits = model.forward(images)
            loss, _ = model.loss(logits, masks)
            losses.append(float(loss.data) * len(idx))
            pred = np.argmax(logits.data, axis=1)
            for b in range(pred.shape[0]):
                ov = overlap_metrics(pred[b] == 1, masks[b] == 1)
                dscs.append(ov["dsc"])
                ious.append(ov["iou"])
    n = max(1, len(samples))
    return {"loss": sum(losses) / n,
            "dsc": float(np.mean(dscs)) if dscs else float("nan"),
            "iou": float(np.mean(ious)) if ious else float("nan")}


def save_checkpoint(path, model: TMambaNet, cfg_items: list[tuple[str, str]]) -> None:
    """Parameters in the tensor container plus a key=value config sidecar."""
    path = Path(path)
    write_tensorfile(path, model.state_dict())
    sidecar = path.with_suffix(path.suffix + ".cfg")
    sidecar.write_text("".join(f"{k} = {v}\n" for k, v in cfg_items))


def load_checkpoint(path):
    """Returns (state dict, sidecar Config)."""
    from .data import read_tensorfile

    path = Path(path)
    state = read_tensorfile(path)
    sidecar = path.with_suffix(path.suffix + ".cfg")
    if not sidecar.exists():
        raise ConfigError(f"missing checkpoint config sidecar: {sidecar}")
    return state, Config.from_file(sidecar)


def train_model(netcfg: NetConfig, train_samples: list[SegSample],
                val_samples: list[SegSample], settings: TrainSettings,
                outdir=None, cfg_items=None, quiet: bool = True) -> dict:
    """Full training run; returns {'model', 'history', 'checkpoint'}.

    Writes per-epoch JSONL log records and a checkpoint per epoch when
    outdir is given.  Deterministic for a fixed seed.
    """
    outdir = Path(outdir) if outdir is not None else None
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
    log_fh = (outdir / "train_log.jsonl").open("w") if outdir else None
    cfg_items = cfg_items or []

    model = build(netcfg, seed=settings.seed)
    opt = AdamW(model.named_params(), lr=settings.lr, betas=settings.betas,
                weight_decay=settings.weight_decay)
    sched = ReduceOnPlateau(opt, settings.plateau_factor,
                            settings.plateau_patience, settings.min_lr)
    rng = np.random.default_rng(settings.seed)
    history = []
    ckpt_path = None
    try:
        for epoch in range(1, settings.epochs + 1):
            t0 = time.perf_counter()
            perm = rng.permutation(len(train_samples))
            epoch_loss = 0.0
            for lo in range(0, len(perm), settings.batch):
                idx = perm[lo : lo + settings.batch]
                images, masks = _stack(train_samples, idx)
                logits = model.forward(images)
                loss, _ = model.loss(logits, masks)
                opt.zero_grad()
                loss.backward()
                opt.step()
                epoch_loss += float(loss.data) * len(idx)
            epoch_loss /= max(1, len(train_samples))
            val = (evaluate_split(model, val_samples, settings.batch)
                   if val_samples else
                   {"loss": epoch_loss, "dsc": float("nan"), "iou": float("nan")})
            sched.step(val["loss"])
            record = {
                "epoch": epoch,
                "train_loss": epoch_loss,
                "val_loss": val["loss"],
                "val_dsc": val["dsc"],
                "val_iou": val["iou"],
                "lr": opt.lr,
                "seconds": round(time.perf_counter() - t0, 3),
            }
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if not quiet:
                print(json.dumps(record))
            if outdir is not None:
                ckpt_path = outdir / f"ckpt_ep{epoch:03d}.tmtn"
                save_checkpoint(ckpt_path, model, cfg_items)
        if outdir is not None:
            ckpt_path = outdir / "ckpt_final.tmtn"
            save_checkpoint(ckpt_path, model, cfg_items)
    finally:
        if log_fh:
            log_fh.close()
    return {"model": model, "history": history, "checkpoint": ckpt_path}


def train_from_config(cfg: Config, quiet: bool = True) -> dict:
    """CLI entry: resolve dataset manifest, settings and output directory."""
    manifest = cfg.get_str("data.manifest")
    if manifest is None:
        raise ConfigError("data.manifest is required for training")
    train_samples = load_split(manifest, "train")
    if not train_samples:
        raise ConfigError(f"no train split in manifest {manifest}")
    val_samples = load_split(manifest, "val")
    netcfg = cfg.net_config()
    settings = TrainSettings.from_config(cfg)
    outdir = cfg.get_str("run.outdir", "runs/default")
    result = train_model(netcfg, train_samples, val_samples, settings,
                         outdir=outdir, cfg_items=cfg.flat_items(),
                         quiet=quiet)
    if result["history"]:
        from .report import save_loss_curves

        save_loss_curves(result["history"], Path(outdir) / "loss_curves.png")
    return result
