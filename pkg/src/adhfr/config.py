"""Experiment configuration: ``key = value`` text files with ``#`` comments.

Precedence is defaults < file < command-line overrides.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Mapping

PRESETS = (
    "basic",
    "softmax",
    "adfl-no-adv",
    "adfl-no-cvd",
    "adfl",
    "hallucination",
    "hallucination+adfl",
)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class ExperimentConfig:
    # dataset
    identities: int = 20
    vis_per_id: int = 4
    nir_per_id: int = 6
    image_size: int = 144
    crop_size: int = 128
    identity_seed: int = 0
    folds: int = 2
    seed: int = 0
    # loss weights
    preset: str = "adfl"
    alpha1: float = 10.0
    alpha2: float = 5.0
    lambda1: float = 0.1
    lambda2: float = 1.0
    # optimisation
    hal_lr: float = 2e-3
    feat_lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 4
    classes_per_batch: int = 4
    samples_per_class: int = 2
    hal_iterations: int = 300
    pretrain_iterations: int = 150
    feat_iterations: int = 300
    # architecture
    gen_width: int = 8
    gen_downsample: int = 2
    disc_width: int = 8
    feat_width: int = 8
    feature_dim: int = 256
    fd_hidden: int = 64

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        for name in ("alpha1", "alpha2", "lambda1", "lambda2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("hal_lr", "feat_lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.crop_size > self.image_size:
            raise ConfigError("crop_size exceeds image_size")
        if self.crop_size % 16:
            raise ConfigError("crop_size must be a multiple of 16")
        if self.samples_per_class < 2:
            raise ConfigError("samples_per_class must be >= 2 for the variance loss")

    @property
    def eye_patch(self) -> int:
        # 32 px at the canonical 128 crop
        return self.crop_size // 4

    @property
    def uses_hallucination(self) -> bool:
        return self.preset.startswith("hallucination")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_TYPES = {f.name: {"int": int, "float": float}.get(f.type, str) for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str, line: int | None):
    if key not in _TYPES:
        raise ConfigError(f"unknown key {key!r}", line)
    kind = _TYPES[key]
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {kind.__name__} for {key!r}", line) from None


def parse_config(text: str, overrides: Mapping[str, str] | None = None) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno)
        key, raw = (part.strip() for part in body.split("=", 1))
        values[key] = _coerce(key, raw, lineno)
    for key, raw in (overrides or {}).items():
        values[key] = _coerce(key, str(raw), None)
    try:
        return ExperimentConfig(**values)
    except ConfigError:
        raise
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def format_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))
