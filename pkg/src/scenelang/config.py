"""Flat key = value config files and the model/training config records."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .scenes import GenerationConfig

REGIMES = ("SYN", "NL", "NL_FROZEN", "NL_SYN_MIX")


def parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_kv_file(path: str | Path) -> dict[str, str]:
    return parse_kv_text(Path(path).read_text())


def format_kv(pairs: dict) -> str:
    lines = []
    for key, value in pairs.items():
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _coerce(field: dataclasses.Field, raw: str):
    t = field.type
    if t in ("int", int):
        return int(raw)
    if t in ("float", float):
        return float(raw)
    if t in ("bool", bool):
        return raw.lower() in ("1", "true", "yes")
    if t in ("str", str):
        return raw
    if "tuple" in str(t):
        return tuple(float(v) for v in raw.split(","))
    raise TypeError(f"cannot parse config field {field.name} of type {t}")


def _from_kv(cls, kv: dict[str, str], ignore: set[str] = frozenset()):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in kv.items():
        if key in ignore:
            continue
        if key not in fields:
            raise KeyError(f"unknown config key {key!r} for {cls.__name__}")
        kwargs[key] = _coerce(fields[key], raw)
    return cls(**kwargs)


def load_generation_config(path: str | Path) -> GenerationConfig:
    return _from_kv(GenerationConfig, parse_kv_file(path))


def save_generation_config(cfg: GenerationConfig, path: str | Path) -> None:
    Path(path).write_text(format_kv(dataclasses.asdict(cfg)))


@dataclass
class ModelConfig:
    """Architecture dimensions; defaults are the desk-scale setup."""

    vocab_size: int = 49
    text_embed_dim: int = 64
    text_channels: int = 64
    text_kernel: int = 3
    text_dilation: int = 2
    text_layers: int = 3
    camera_dim: int = 32
    view_dim: int = 256
    merge_blocks: int = 3
    draw_iters: int = 12
    latent_hw: int = 8
    z_channels: int = 32
    lstm_channels: int = 32
    read_channels: int = 32
    cond_channels: int = 32
    image_size: int = 32
    image_channels: int = 3

    def __post_init__(self):
        if self.image_size % self.latent_hw:
            raise ValueError("image_size must be a multiple of latent_hw")

    @property
    def stride(self) -> int:
        return self.image_size // self.latent_hw

    def meta_entries(self) -> dict[str, float]:
        return {f"cfg/{f.name}": float(getattr(self, f.name))
                for f in dataclasses.fields(self)}

    @classmethod
    def from_meta(cls, entries: dict) -> "ModelConfig":
        kwargs = {}
        for f in dataclasses.fields(cls):
            key = f"cfg/{f.name}"
            if key in entries:
                kwargs[f.name] = int(float(entries[key][0]))
        return cls(**kwargs)


@dataclass
class TrainingConfig:
    regime: str = "SYN"
    batch_size: int = 32
    n_context: int = 9
    lr_start: float = 5e-4
    lr_end: float = 5e-5
    anneal_steps: int = 50_000
    max_steps: int = 50_000
    dropout_rate: float = -1.0  # <0 resolves from the regime
    mix_ratio: float = 0.5
    eval_every: int = 500
    eval_samples: int = 3200
    patience: int = 10
    grad_clip: float = 5.0
    seed: int = 0
    unconditional: bool = False
    # model size overrides (0 keeps the ModelConfig default)
    lstm_channels: int = 0
    z_channels: int = 0
    draw_iters: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; one of {REGIMES}")
        if not 1 <= self.n_context:
            raise ValueError("n_context must be >= 1")
        if self.anneal_steps < 1:
            raise ValueError("anneal_steps must be >= 1")

    @property
    def resolved_dropout(self) -> float:
        if self.dropout_rate >= 0.0:
            return self.dropout_rate
        return 0.0 if self.regime == "SYN" else 0.5

    def model_config(self, vocab_size: int) -> ModelConfig:
        cfg = ModelConfig(vocab_size=vocab_size)
        for name in ("lstm_channels", "z_channels", "draw_iters"):
            override = getattr(self, name)
            if override:
                setattr(cfg, name, override)
        return cfg


def load_training_config(path: str | Path) -> TrainingConfig:
    return _from_kv(TrainingConfig, parse_kv_file(path))


def save_training_config(cfg: TrainingConfig, path: str | Path) -> None:
    Path(path).write_text(format_kv(dataclasses.asdict(cfg)))
