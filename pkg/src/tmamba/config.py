"""Flat key=value run configuration with dotted keys.

Lists may be written inline (`net.channels = 16,32,64`) or as 1-based
indexed keys (`net.channels.1 = 16` ...); both parse to the same value.
`TMAMBA_SEED` in the environment overrides the configured seed.
"""

from __future__ import annotations

import os
import re
from pathlib import Path

from .data import SynthConfig
from .net import NetConfig


class ConfigError(ValueError):
    pass


_INDEXED = re.compile(r"^(.+)\.(\d+)$")

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def parse_config_text(text: str) -> dict:
    raw: dict[str, object] = {}
    indexed: dict[str, dict[int, str]] = {}
    for ln, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"line {ln}: expected key=value, got {s!r}")
        key, val = (part.strip() for part in s.split("=", 1))
        if not key:
            raise ConfigError(f"line {ln}: empty key")
        m = _INDEXED.match(key)
        if m:
            indexed.setdefault(m.group(1), {})[int(m.group(2))] = val
        else:
            if key in raw:
                raise ConfigError(f"line {ln}: duplicate key {key!r}")
            raw[key] = val
    for base, items in indexed.items():
        if base in raw:
            raise ConfigError(f"key {base!r} given both inline and indexed")
        idxs = sorted(items)
        if idxs != list(range(1, len(idxs) + 1)):
            raise ConfigError(f"indexed key {base!r} must use 1..n, got {idxs}")
        raw[base] = [items[i] for i in idxs]
    return raw


class Config:
    def __init__(self, mapping: dict | None = None):
        self._map: dict[str, object] = dict(mapping or {})

    @classmethod
    def from_text(cls, text: str) -> "Config":
        return cls(parse_config_text(text))

    @classmethod
    def from_file(cls, path) -> "Config":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text())

    def override(self, assignment: str) -> None:
        """Apply one `key=value` override (CLI --set)."""
        if "=" not in assignment:
            raise ConfigError(f"override must be key=value, got {assignment!r}")
        key, val = (p.strip() for p in assignment.split("=", 1))
        self._map[key] = val

    def keys(self):
        return self._map.keys()

    def has(self, key: str) -> bool:
        return key in self._map

    def get_str(self, key: str, default=None):
        val = self._map.get(key, default)
        if isinstance(val, list):
            raise ConfigError(f"{key}: expected a scalar, got a list")
        return val

    def _scalar(self, key: str, default, conv, what: str):
        val = self.get_str(key, None)
        if val is None:
            if default is None and not self.has(key):
                raise ConfigError(f"missing required config key {key!r}")
            return default
        try:
            return conv(val)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected {what}, got {val!r}")

    def get_int(self, key: str, default=None) -> int:
        return self._scalar(key, default, lambda v: int(str(v), 0), "an integer")

    def get_float(self, key: str, default=None) -> float:
        return self._scalar(key, default, float, "a number")

    def get_bool(self, key: str, default=None) -> bool:
        def conv(v):
            s = str(v).lower()
            if s in _TRUE:
                return True
            if s in _FALSE:
                return False
            raise ValueError(s)
        return self._scalar(key, default, conv, "a boolean")

    def get_list(self, key: str, default=None) -> list[str]:
        val = self._map.get(key)
        if val is None:
            return [str(v) for v in (default or [])]
        if isinstance(val, list):
            return [str(v) for v in val]
        return [p.strip() for p in str(val).split(",") if p.strip()]

    def get_ints(self, key: str, default=None) -> list[int]:
        vals = self.get_list(key, default)
        try:
            return [int(v) for v in vals]
        except ValueError:
            raise ConfigError(f"{key}: expected integers, got {vals!r}")

    # -- structured views ------------------------------------------------

    def seed(self) -> int:
        env = os.environ.get("TMAMBA_SEED")
        if env is not None:
            try:
                return int(env)
            except ValueError:
                raise ConfigError(f"TMAMBA_SEED must be an integer, got {env!r}")
        return self.get_int("run.seed", 0)

    def synth_config(self) -> SynthConfig:
        rank = self.get_int("data.rank", 2)
        default_size = [64, 64] if rank == 2 else [32, 32, 16]
        size = tuple(self.get_ints("data.size", default_size))
        spacing = [float(v) for v in self.get_list("data.spacing", ["1.0"])]
        if len(spacing) == 1:
            spacing = spacing * rank
        return SynthConfig(
            rank=rank,
            size=size,
            count=self.get_int("data.count", 16),
            min_objects=self.get_int("data.objects_min", 1),
            max_objects=self.get_int("data.objects_max", 3),
            contrast=self.get_float("data.contrast", 0.12),
            noise=self.get_float("data.noise", 0.08),
            blur=self.get_float("data.blur", 1.0),
            spacing=tuple(spacing),
            seed=self.seed(),
        )

    def net_config(self) -> NetConfig:
        rank = self.get_int("net.rank", self.get_int("data.rank", 2))
        default_size = [64, 64] if rank == 2 else [32, 32, 16]
        size = tuple(self.get_ints(
            "net.input_size", self.get_ints("data.size", default_size)))
        try:
            return NetConfig(
                rank=rank,
                input_size=size,
                in_channels=self.get_int("net.in_channels", 1),
                classes=self.get_int("net.classes", 2),
                channels=tuple(self.get_ints("net.channels", [16, 32, 64])),
                depth=self.get_int("net.depth", 2),
                growth=self.get_int("net.growth", 8),
                state=self.get_int("net.state", 16),
                pool=self.get_int("net.pool", 64),
                pos_mode=self.get_str("net.pos_mode", "shared"),
                bands=tuple(self.get_list("net.bands", ["low", "band", "high"])),
                s_low=self.get_float("net.s_low", 0.1),
                s_high=self.get_float("net.s_high", 0.9),
                use_tim=self.get_bool("net.use_tim", True),
                use_freq=self.get_bool("net.use_freq", True),
                use_gate=self.get_bool("net.use_gate", True),
                use_residual=self.get_bool("net.use_residual", True),
                dice_weight=self.get_float("net.dice_weight", 1.0),
                ce_weight=self.get_float("net.ce_weight", 1.0),
            )
        except ValueError as e:
            raise ConfigError(f"net config: {e}")

    def flat_items(self) -> list[tuple[str, str]]:
        out = []
        for key in sorted(self._map):
            val = self._map[key]
            if isinstance(val, list):
                val = ",".join(str(v) for v in val)
            out.append((key, str(val)))
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.flat_items())
