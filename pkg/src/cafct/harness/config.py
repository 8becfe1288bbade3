"""Flat ``key = value`` training configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Tuple, Union

from ..aspp import DESK_RATES
from ..encoders import EncoderConfig
from ..gates_decoder import ModelConfig

INTER_CHANNEL_RULES = ("half",)


@dataclass
class TrainConfig:
    # architecture
    input_size: int = 64
    base_channels: int = 16
    patch_size: int = 2
    depth: int = 1
    heads: int = 2
    cnn_depth: int = 2
    se_ratio: int = 4
    se_blocks: int = 1
    aspp_rates: Tuple[int, int, int] = DESK_RATES
    inter_channel_rule: str = "half"
    # optimization (batch size and learning rate follow the reported setup)
    batch_size: int = 8
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 60
    seed: int = 0
    w_bce: float = 1.0
    w_dice: float = 1.0
    # data and outputs; an empty train_dir means "generate synthetic data"
    train_dir: str = ""
    n_train: int = 200
    data_seed: int = 7
    checkpoint: str = "cafct.ckpt"

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.inter_channel_rule not in INTER_CHANNEL_RULES:
            raise ValueError(f"inter_channel_rule must be one of {INTER_CHANNEL_RULES}")
        if self.w_bce < 0 or self.w_dice < 0 or (self.w_bce == 0 and self.w_dice == 0):
            raise ValueError("loss weights must be non-negative and not both zero")
        self.model_config().validate()

    def model_config(self) -> ModelConfig:
        enc = EncoderConfig(
            input_size=self.input_size,
            base_channels=self.base_channels,
            patch_size=self.patch_size,
            transformer_depth=self.depth,
            heads=self.heads,
            cnn_depth=self.cnn_depth,
        )
        return ModelConfig(
            encoder=enc,
            se_ratio=self.se_ratio,
            se_blocks=self.se_blocks,
            aspp_rates=tuple(self.aspp_rates),
        )

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ValueError(f"bad value for {name!r}: {raw!r}") from exc
    return raw


def parse_config(text: str) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    defaults = TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw, getattr(defaults, key))
    config = TrainConfig(**values)
    config.validate()
    return config


def load_config(path: Union[str, Path]) -> TrainConfig:
    return parse_config(Path(path).read_text())
