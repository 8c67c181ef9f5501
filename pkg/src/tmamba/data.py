"""Synthetic segmentation data, binary tensor container, dataset manifests.

Synthetic samples stand in for low-contrast, high-noise dental scans:
arch-shaped arc bands in 2D, ellipsoids in 3D, rendered at a configurable
contrast gap over the background, Gaussian-blurred, then corrupted with
additive Gaussian noise and clipped to [0, 1].  The mask is the clean
pre-noise geometry.  Sample i is generated from seed ^ i, so datasets are
reproducible and order-independent.

The TensorFile container stores named arrays: magic "TMTN", version byte,
entry count (u32 LE), then per entry a length-prefixed UTF-8 name, dtype
code (f64=1, i32=2, u8=3), rank byte, u32 LE extents, and the raw
little-endian payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"TMTN"
VERSION = 1

_DTYPE_CODES = {1: np.dtype("<f8"), 2: np.dtype("<i4"), 3: np.dtype("u1")}
_CODE_FOR_KIND = {"f8": 1, "i4": 2, "u1": 3}


class TensorFileError(Exception):
    """Base class for container format errors."""


class BadMagicError(TensorFileError):
    pass


class BadVersionError(TensorFileError):
    pass


class TruncatedError(TensorFileError):
    pass


class DtypeError(TensorFileError):
    pass


def write_tensorfile(path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<BI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        key = arr.dtype.str.lstrip("<>|=")
        code = _CODE_FOR_KIND.get(key)
        if code is None:
            raise DtypeError(f"unsupported dtype {arr.dtype} for entry {name!r}")
        if code == 1 and not np.isfinite(arr).all():
            raise ValueError(f"refusing to write non-finite values in {name!r}")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def pull(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedError(
                f"needed {n} bytes at offset {self.pos}, file has "
                f"{len(self.blob)}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out


def read_tensorfile(path) -> dict[str, np.ndarray]:
    r = _Reader(Path(path).read_bytes())
    if r.pull(4) != MAGIC:
        raise BadMagicError(f"{path}: not a TMTN container")
    version, count = struct.unpack("<BI", r.pull(5))
    if version != VERSION:
        raise BadVersionError(f"{path}: unknown version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", r.pull(4))
        try:
            name = r.pull(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise TensorFileError(f"{path}: undecodable entry name: {e}")
        code, rank = struct.unpack("<BB", r.pull(2))
        dtype = _DTYPE_CODES.get(code)
        if dtype is None:
            raise DtypeError(f"{path}: entry {name!r} has unknown dtype code {code}")
        shape = struct.unpack(f"<{rank}I", r.pull(4 * rank))
        n_items = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = r.pull(n_items * dtype.itemsize)
        out[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return out


# -- synthetic data ---------------------------------------------------------


@dataclass
class SegSample:
    image: np.ndarray      # (1, spatial...), float64 in [0, 1]
    mask: np.ndarray       # (spatial...), uint8 in {0, 1}
    spacing: tuple
    id: str


@dataclass
class SynthConfig:
    rank: int = 2
    size: tuple = (64, 64)
    count: int = 16
    min_objects: int = 1
    max_objects: int = 3
    contrast: float = 0.12
    noise: float = 0.08
    blur: float = 1.0
    spacing: tuple | float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.size = tuple(int(v) for v in self.size)
        if self.rank not in (2, 3) or len(self.size) != self.rank:
            raise ValueError("rank must be 2 or 3 and match the size tuple")
        if any(v < 8 for v in self.size):
            raise ValueError("each axis must be at least 8 cells")
        if self.contrast <= 0:
            raise ValueError("contrast gap must be positive")
        if not isinstance(self.spacing, tuple):
            self.spacing = (float(self.spacing),) * self.rank


def _blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img
    radius = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    out = img
    for ax in range(img.ndim):
        moved = np.moveaxis(out, ax, -1)
        padded = np.pad(moved, [(0, 0)] * (img.ndim - 1) + [(radius, radius)],
                        mode="reflect")
        win = np.lib.stride_tricks.sliding_window_view(padded, kernel.size,
                                                       axis=-1)
        out = np.moveaxis(win @ kernel, -1, ax)
    return out


def _render_arcs(rng: np.random.Generator, size, n_objects: int) -> np.ndarray:
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.zeros(size, dtype=bool)
    span_min = min(h, w)
    for _ in range(n_objects):
        cy = rng.uniform(0.40 * h, 0.70 * h)
        cx = rng.uniform(0.35 * w, 0.65 * w)
        radius = rng.uniform(0.22 * span_min, 0.33 * span_min)
        thick = rng.uniform(0.14 * span_min, 0.22 * span_min)
        a0 = rng.uniform(-np.pi, np.pi)
        span = rng.uniform(2.2, 5.0)
        rho = np.hypot(yy - cy, xx - cx)
        ang = np.arctan2(yy - cy, xx - cx)
        rel = np.mod(ang - a0, 2.0 * np.pi)
        mask |= (np.abs(rho - radius) <= 0.5 * thick) & (rel <= span)
    if not mask.any():
        rho = np.hypot(yy - 0.5 * h, xx - 0.5 * w)
        mask = rho <= 0.2 * span_min
    return mask


def _render_ellipsoids(rng: np.random.Generator, size, n_objects: int) -> np.ndarray:
    grids = np.ogrid[tuple(slice(0, s) for s in size)]
    mask = np.zeros(size, dtype=bool)
    for _ in range(n_objects):
        acc = np.zeros(size, dtype=np.float64)
        for g, s in zip(grids, size):
            center = rng.uniform(0.34 * s, 0.66 * s)
            semi = rng.uniform(0.24 * s, 0.38 * s)
            acc = acc + ((g.astype(np.float64) - center) / semi) ** 2
        mask |= acc <= 1.0
    if not mask.any():
        acc = np.zeros(size, dtype=np.float64)
        for g, s in zip(grids, size):
            acc = acc + ((g.astype(np.float64) - 0.5 * s) / (0.25 * s)) ** 2
        mask = acc <= 1.0
    return mask


def synth_sample(cfg: SynthConfig, index: int) -> SegSample:
    """Deterministic sample for the given global index (seed ^ index)."""
    rng = np.random.default_rng(cfg.seed ^ index)
    n_objects = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    if cfg.rank == 2:
        mask = _render_arcs(rng, cfg.size, n_objects)
    else:
        mask = _render_ellipsoids(rng, cfg.size, n_objects)
    background = rng.uniform(0.38, 0.48)
    clean = np.full(cfg.size, background)
    clean[mask] += cfg.contrast
    img = _blur(clean, cfg.blur)
    if cfg.noise > 0:
        img = img + rng.normal(0.0, cfg.noise, size=cfg.size)
    img = np.clip(img, 0.0, 1.0)
    return SegSample(image=img[None], mask=mask.astype(np.uint8),
                     spacing=cfg.spacing, id=f"s{index:06d}")


def synth_generate(cfg: SynthConfig, start: int = 0) -> list[SegSample]:
    return [synth_sample(cfg, start + i) for i in range(cfg.count)]


# -- dataset on disk --------------------------------------------------------


def write_dataset(outdir, cfg: SynthConfig, splits: dict[str, int]) -> Path:
    """Generate split datasets and a JSON-lines manifest; returns its path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = outdir / "manifest.jsonl"
    index = 0
    with manifest.open("w") as fh:
        for split, count in splits.items():
            for _ in range(count):
                sample = synth_sample(cfg, index)
                img_rel = f"{sample.id}.img.tmtn"
                msk_rel = f"{sample.id}.msk.tmtn"
                write_tensorfile(outdir / img_rel, {"image": sample.image})
                write_tensorfile(outdir / msk_rel, {"mask": sample.mask})
                fh.write(json.dumps({
                    "id": sample.id,
                    "image_path": img_rel,
                    "mask_path": msk_rel,
                    "spacing": list(sample.spacing),
                    "split": split,
                }) + "\n")
                index += 1
    return manifest


def read_manifest(path) -> list[dict]:
    records = []
    with Path(path).open() as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise TensorFileError(f"{path}:{ln}: bad manifest record: {e}")
    return records


def load_split(manifest_path, split: str) -> list[SegSample]:
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    out = []
    for rec in read_manifest(manifest_path):
        if rec.get("split") != split:
            continue
        image = read_tensorfile(base / rec["image_path"])["image"]
        mask = read_tensorfile(base / rec["mask_path"])["mask"]
        out.append(SegSample(image=image, mask=mask,
                             spacing=tuple(rec.get("spacing", (1.0,) * mask.ndim)),
                             id=rec["id"]))
    return out
