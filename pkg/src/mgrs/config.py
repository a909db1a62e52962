"""Flat ``key = value`` configuration files.

Lines are UTF-8, ``#`` starts a comment, blank lines are ignored.  Unknown
keys are rejected.  Every key has a default (see :class:`TrainConfig`).
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

# Keys that locate files rather than change results; excluded from the hash.
PATH_KEYS = ("train_dir", "test_dir", "out_dir")


@dataclass
class TrainConfig:
    seed: int = 7
    # degradation threshold for ground-truth masks (mean |clean - degraded| over RGB)
    tau: float = 0.05
    # weight of the distillation loss against L1
    lambda_distill: float = 0.1
    # false skips computing the distillation loss entirely (plain L1 baseline)
    distill: bool = True
    levels: int = 3
    mask_base_channels: int = 8
    restore_base_channels: int = 16
    gated_decoder: bool = True
    lr0: float = 1e-4
    lr_half_every: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    patch_size: int = 64
    batch_size: int = 4
    epochs: int = 30
    # keep a numbered checkpoint copy every k epochs (0: only the latest)
    checkpoint_every: int = 0
    train_dir: str = "data/train"
    test_dir: str = "data/test"
    out_dir: str = "runs"

    def validate(self) -> "TrainConfig":
        if self.levels < 2:
            raise ConfigError("levels must be >= 2")
        for key in ("mask_base_channels", "restore_base_channels", "patch_size", "batch_size",
                    "lr_half_every"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")
        if self.epochs < 0 or self.checkpoint_every < 0:
            raise ConfigError("epochs and checkpoint_every must be non-negative")
        if self.patch_size % 2 ** (self.levels + 1):
            raise ConfigError(f"patch_size {self.patch_size} must be divisible by "
                              f"2**(levels+1) = {2 ** (self.levels + 1)}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.lambda_distill < 0:
            raise ConfigError("lambda_distill must be non-negative")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_text(self, include_paths: bool = True) -> str:
        lines = []
        for f in dataclasses.fields(self):
            if not include_paths and f.name in PATH_KEYS:
                continue
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def hash(self) -> bytes:
        return hashlib.sha256(self.to_text(include_paths=False).encode("utf-8")).digest()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None


_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def field_types() -> dict:
    return {f.name: _TYPES[f.type] if isinstance(f.type, str) else f.type
            for f in dataclasses.fields(TrainConfig)}


def apply_overrides(cfg: TrainConfig, pairs: dict) -> TrainConfig:
    types = field_types()
    changes = {}
    for key, raw in pairs.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        changes[key] = raw if not isinstance(raw, str) else _coerce(key, raw.strip(), types[key])
    return cfg.replace(**changes)


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return apply_overrides(base or TrainConfig(), pairs)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def save_config(cfg: TrainConfig, path):
    Path(path).write_text(cfg.to_text(), encoding="utf-8")
