"""Command line surface: train, eval, gradcheck, bench, filter, synth, sweep.

Every command exits 0 on success and a categorized nonzero code otherwise:
2 config/usage, 3 data or file problems, 4 numeric failures, 5 failed checks.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import run_bench
from .config import Config, ConfigError
from .data import (
    SynthConfig,
    TensorFileError,
    load_split,
    read_tensorfile,
    synth_generate,
    synth_sample,
    write_dataset,
    write_tensorfile,
)
from .freq import BANDS, ResidueError, bandpass_mask, next_pow2
from .metrics import aggregate, evaluate_pair
from .net import NetConfig, build
from .numcore import GraphError, NonFiniteError, Tensor, grad_check, no_grad, tsum
from .numcore.fft import fft_complex
from .train import TrainSettings, load_checkpoint, train_from_config, train_model

GRADCHECK_TOL = 1e-4
NET_GRADCHECK_EPS = 3e-4

TINY_NET_TEXT = """
net.rank = 2
net.input_size = 16,16
net.channels = 4,6,8
net.depth = 1
net.growth = 2
net.state = 4
net.pool = 8
"""


def _load_config(args) -> Config:
    cfg = Config.from_file(args.config) if args.config else Config()
    for assignment in getattr(args, "set", None) or []:
        cfg.override(assignment)
    return cfg


# -- synth -------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    synth = cfg.synth_config()
    splits = {
        "train": cfg.get_int("data.train", 16),
        "val": cfg.get_int("data.val", 4),
        "test": cfg.get_int("data.test", 4),
    }
    outdir = Path(cfg.get_str("data.dir", "dataset"))
    manifest = write_dataset(outdir, synth, splits)
    preview = synth_generate(SynthConfig(**{**synth.__dict__, "count": 6}))
    from .report import save_sample_grid

    save_sample_grid(preview, outdir / "preview.png")
    print(f"manifest\t{manifest}")
    print(f"preview\t{outdir / 'preview.png'}")
    for split, count in splits.items():
        print(f"count.{split}\t{count}")
    return 0


# -- train -------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_config(args)
    result = train_from_config(cfg, quiet=args.quiet)
    if result["history"]:
        last = result["history"][-1]
        print(f"final\tepoch={last['epoch']}\ttrain_loss={last['train_loss']:.6f}"
              f"\tval_loss={last['val_loss']:.6f}\tval_dsc={last['val_dsc']:.4f}")
    print(f"checkpoint\t{result['checkpoint']}")
    return 0


# -- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    state, ckpt_cfg = load_checkpoint(args.ckpt)
    netcfg = ckpt_cfg.net_config()
    model = build(netcfg, seed=0)
    model.load_state_dict(state)
    samples = load_split(args.manifest, args.split)
    if not samples:
        raise TensorFileError(f"no '{args.split}' samples in {args.manifest}")
    outdir = Path(args.out or Path(args.ckpt).parent / f"eval_{args.split}")
    outdir.mkdir(parents=True, exist_ok=True)

    reports = []
    gate_sums: dict[str, np.ndarray] = {}
    gate_batches = 0
    with (outdir / "per_sample.jsonl").open("w") as fh, no_grad():
        for lo in range(0, len(samples), args.batch):
            batch = samples[lo : lo + args.batch]
            images = np.stack([s.image for s in batch])
            logits = model.forward(images)
            preds = np.argmax(logits.data, axis=1)
            for gname, weights in model.gate_proportions().items():
                acc = gate_sums.setdefault(gname, np.zeros(len(weights)))
                acc += np.asarray(weights)
            gate_batches += 1
            for b, sample in enumerate(batch):
                rep = evaluate_pair(preds[b] == 1, sample.mask == 1,
                                    spacing=sample.spacing,
                                    tolerance_mm=args.tolerance)
                rep["id"] = sample.id
                reports.append(rep)
                fh.write(json.dumps(rep) + "\n")
                if lo == 0 and b < 3:
                    from .report import save_overlay

                    save_overlay(sample.image, sample.mask, preds[b],
                                 outdir / f"overlay_{sample.id}.png",
                                 title=sample.id)
        summary = aggregate(reports)
        fh.write(json.dumps({"summary": summary}) + "\n")

    from .report import write_tsv

    cols = ["id", "dsc", "iou", "miou", "acc", "hd", "assd", "so"]
    write_tsv(outdir / "per_sample.tsv", reports, cols)
    print("metric\tmean")
    for key in ("dsc", "iou", "miou", "acc", "hd", "assd", "so"):
        val = summary[key]
        print(f"{key}\t{'' if val is None else f'{val:.6f}'}")
    for gname in sorted(gate_sums):
        props = gate_sums[gname] / max(1, gate_batches)
        print(f"gate.{gname}\t" + "\t".join(f"{p:.4f}" for p in props))
    print(f"report_dir\t{outdir}")
    return 0


# -- gradcheck ---------------------------------------------------------------


def _gradcheck_boundaries(netcfg: NetConfig, eps: float) -> list[dict]:
    from .freq import apply_frequency_branch, init_freq_params
    from .posenc import add_post, add_pre, init_posenc
    from .ssm import init_ssm_params, selective_scan
    from .tim import TimBlock, TimConfig

    rng = np.random.default_rng(7)
    rows = []
    # every probe is a weighted sum: a plain sum has a token-constant
    # cotangent, which leaves parts of the spectral weights untested

    params = init_ssm_params(rng, d=2, n=4)
    x = Tensor(rng.normal(0.0, 1.0, (1, 8, 2)))
    ws = Tensor(rng.normal(0.0, 1.0, (1, 8, 2)))
    leaves = [p for _, p in params.named("ssm")]
    rows.append(("ssm", grad_check(
        lambda: tsum(selective_scan(x, params) * ws), leaves, eps)))

    fparams = init_freq_params(2, 8, "band")
    fparams.wf.data += rng.normal(0.0, 0.1, fparams.wf.shape)
    xf = Tensor(rng.normal(0.0, 1.0, (1, 8, 2)))
    zf = Tensor(rng.normal(0.0, 1.0, (1, 8, 2)))
    wfp = Tensor(rng.normal(0.0, 1.0, (1, 8, 2)))
    rows.append(("freq", grad_check(
        lambda: tsum(apply_frequency_branch(xf, zf, fparams) * wfp),
        [fparams.wf], eps)))

    pe = init_posenc(8, 4)
    xp = Tensor(rng.normal(0.0, 1.0, (2, 8, 4)))
    wmap = Tensor(rng.normal(0.0, 1.0, (8, 4)))
    rows.append(("posenc", grad_check(
        lambda: tsum(add_post(add_pre(xp, pe), pe) * wmap), [pe.table], eps)))

    block = TimBlock(TimConfig(channels=4, length=8, state=4, pool=8), rng)
    xt = Tensor(rng.normal(0.0, 1.0, (1, 8, 4)))
    wt = Tensor(rng.normal(0.0, 1.0, (1, 8, 4)))
    tleaves = [p for _, p in block.named("tim")]
    rows.append(("tim", grad_check(
        lambda: tsum(block.forward_tokens(xt) * wt), tleaves, eps)))

    # the full-model probe is a scaled loss on a real synthetic pair with a
    # larger step: raw-scale losses leave finite-difference roundoff above
    # the 1e-8 denominator floor for near-zero gradient entries
    model = build(netcfg, seed=3)
    sample = synth_sample(SynthConfig(rank=netcfg.rank, size=netcfg.input_size,
                                      seed=40), 0)
    img = sample.image[None]
    labels = sample.mask[None].astype(np.int64)
    nleaves = [p for _, p in model.named_params()]
    rows.append(("net", grad_check(
        lambda: model.loss(model.forward(img), labels)[0] * 0.01,
        nleaves, NET_GRADCHECK_EPS)))

    return [{"boundary": name, "max_rel_err": err, "ok": err < GRADCHECK_TOL}
            for name, err in rows]


def cmd_gradcheck(args) -> int:
    if args.config:
        cfg = _load_config(args)
    else:
        cfg = Config.from_text(TINY_NET_TEXT)
        for assignment in getattr(args, "set", None) or []:
            cfg.override(assignment)
    netcfg = cfg.net_config()
    rows = _gradcheck_boundaries(netcfg, args.eps)
    print("boundary\tmax_rel_err\tstatus")
    worst_fail = False
    for row in rows:
        status = "ok" if row["ok"] else "FAIL"
        worst_fail |= not row["ok"]
        print(f"{row['boundary']}\t{row['max_rel_err']:.3e}\t{status}")
    return 5 if worst_fail else 0


# -- bench -------------------------------------------------------------------


def cmd_bench(args) -> int:
    lengths = [int(v) for v in args.lengths.split(",") if v.strip()]
    rows = run_bench(lengths, repeats=args.repeats)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    from .report import save_bench_plot, write_tsv

    cols = ["length", "scan_s", "attn_s", "scan_ratio", "attn_ratio"]
    write_tsv(outdir / "bench.tsv", rows, cols)
    save_bench_plot(rows, outdir / "bench.png")
    print("\t".join(cols))
    for row in rows:
        print("\t".join("" if row[c] is None else f"{row[c]:.6g}" if
                        isinstance(row[c], float) else str(row[c]) for c in cols))
    print(f"report_dir\t{outdir}")
    return 0


# -- filter ------------------------------------------------------------------


def _spectrum_pgm(pre_row: np.ndarray, post_row: np.ndarray,
                  height: int = 96) -> np.ndarray:
    """Bar-style raster of one channel's spectra: pre dim, post bright."""
    n = pre_row.shape[0]
    top = max(float(pre_row.max()), 1e-300)
    img = np.zeros((height, n))
    pre_h = np.minimum((pre_row / top * (height - 1)).astype(int), height - 1)
    post_h = np.minimum((post_row / top * (height - 1)).astype(int), height - 1)
    for k in range(n):
        if pre_h[k] > 0:
            img[height - pre_h[k] :, k] = 0.45
        if post_h[k] > 0:
            img[height - post_h[k] :, k] = 1.0
    return img


def cmd_filter(args) -> int:
    tensors = read_tensorfile(args.infile)
    if "signal" not in tensors:
        raise TensorFileError(
            f"{args.infile}: expected an entry named 'signal', found "
            f"{sorted(tensors)}")
    signal = np.asarray(tensors["signal"], dtype=np.float64)
    if signal.ndim == 1:
        signal = signal[None, :]
    if signal.ndim != 2:
        raise TensorFileError(f"signal must be (L,) or (C, L), got {signal.shape}")
    channels, length = signal.shape
    n = next_pow2(length)
    mask = bandpass_mask(n, args.band, args.slow, args.shigh)
    padded = np.pad(signal, ((0, 0), (0, n - length)))
    spec_pre = fft_complex(padded.astype(np.complex128))
    spec_post = spec_pre * mask
    recon = fft_complex(spec_post, inverse=True).real[:, :length]

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    pre_mag = np.abs(spec_pre)
    post_mag = np.abs(spec_post)
    write_tensorfile(outdir / "filter_out.tmtn", {
        "spectrum_pre": pre_mag,
        "spectrum_post": post_mag,
        "reconstructed": recon,
        "mask": mask,
    })
    from .report import save_spectrum_plot, write_pgm

    save_spectrum_plot(pre_mag, post_mag, mask, outdir / "spectra.png")
    for c in range(channels):
        write_pgm(outdir / f"spectrum_ch{c}.pgm",
                  _spectrum_pgm(pre_mag[c], post_mag[c]))
    kept = int(mask.sum())
    print(f"band\t{args.band}\tkept_bins\t{kept}/{n}")
    print(f"residual\t{np.max(np.abs(signal - recon)) if kept == n else ''}")
    print(f"report_dir\t{outdir}")
    return 0


# -- sweep -------------------------------------------------------------------


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    pairs = []
    for part in args.pairs.split(","):
        lo, _, hi = part.partition(":")
        try:
            pairs.append((float(lo), float(hi)))
        except ValueError:
            raise ConfigError(f"bad threshold pair {part!r}; use LOW:HIGH")
    manifest = cfg.get_str("data.manifest")
    if manifest is None:
        raise ConfigError("data.manifest is required for sweeping")
    train_samples = load_split(manifest, "train")
    val_samples = load_split(manifest, "val") or load_split(manifest, "test")
    settings = TrainSettings.from_config(cfg)
    outdir = Path(cfg.get_str("run.outdir", "runs/sweep"))
    outdir.mkdir(parents=True, exist_ok=True)

    rows = []
    for s_low, s_high in pairs:
        cfg.override(f"net.s_low={s_low}")
        cfg.override(f"net.s_high={s_high}")
        netcfg = cfg.net_config()
        run_dir = outdir / f"slow{s_low:g}_shigh{s_high:g}"
        result = train_model(netcfg, train_samples, val_samples, settings,
                             outdir=run_dir, cfg_items=cfg.flat_items())
        last = result["history"][-1] if result["history"] else {}
        rows.append({
            "s_low": s_low,
            "s_high": s_high,
            "final_train_loss": last.get("train_loss"),
            "final_val_loss": last.get("val_loss"),
            "final_val_dsc": last.get("val_dsc"),
        })
    from .report import write_tsv

    cols = ["s_low", "s_high", "final_train_loss", "final_val_loss",
            "final_val_dsc"]
    write_tsv(outdir / "sweep.tsv", rows, cols)
    print("\t".join(cols))
    for row in rows:
        print("\t".join(f"{row[c]:.6g}" if isinstance(row[c], float)
                        else str(row[c]) for c in cols))
    print(f"report_dir\t{outdir}")
    return 0


# -- wiring ------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tmamba",
        description="Selective state-space segmentation micro-framework")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, required=True):
        p.add_argument("--config", required=required, help="config file path")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    with_config(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train from a config and dataset manifest")
    with_config(p)
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-epoch records on stdout")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--tolerance", type=float, default=1.0,
                   help="surface-overlap tolerance in mm")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every module boundary")
    with_config(p, required=False)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="scan vs attention timing")
    p.add_argument("--lengths", default="1024,2048,4096,8192")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", default="bench_out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("filter", help="bandpass-filter a stored signal")
    p.add_argument("--in", dest="infile", required=True,
                   help="TensorFile with a 'signal' entry")
    p.add_argument("--band", choices=list(BANDS), required=True)
    p.add_argument("--slow", type=float, default=0.1)
    p.add_argument("--shigh", type=float, default=0.9)
    p.add_argument("--out", default="filter_out")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("sweep",
                       help="train across bandpass threshold pairs")
    with_config(p)
    p.add_argument("--pairs", default="0.1:0.9,0.2:0.8,0.3:0.7,0.4:0.6,0.5:0.5")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (TensorFileError, FileNotFoundError, IsADirectoryError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (NonFiniteError, ResidueError, GraphError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
