"""Mini-batch SGD with momentum on the BCE-Dice loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..gates_decoder import CAFCT
from ..numerics.tensor import Parameter, Tensor, backward, no_grad
from ..objective import (
    ConfusionCounts,
    bce_dice_loss,
    confusion_counts,
    metrics_from_counts,
    threshold_logits,
)
from .checkpoint import CheckpointMeta, save_checkpoint
from .config import TrainConfig
from .data import SegSample, foreground_fraction, generate_synthetic_dataset, load_dataset, stack_batch

log = logging.getLogger(__name__)

SMALL_FOREGROUND = 1e-3


class SGD:
    """v <- momentum * v + (grad + weight_decay * p);  p <- p - lr * v."""

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                v *= self.momentum
                v += g
                g = v
            p.data -= self.lr * g


@dataclass
class EpochStats:
    epoch: int
    loss: float
    dice: float

    def line(self) -> str:
        return f"epoch={self.epoch} loss={self.loss:.6f} dice={self.dice:.6f}"


@dataclass
class TrainResult:
    model: CAFCT
    history: List[EpochStats] = field(default_factory=list)
    checkpoint: Optional[Path] = None


def training_samples(config: TrainConfig) -> List[SegSample]:
    if config.train_dir:
        return load_dataset(config.train_dir)
    return generate_synthetic_dataset(config.n_train, config.input_size, config.data_seed)


def check_dataset(samples: Sequence[SegSample], input_size: int) -> None:
    for s in samples:
        if s.image.shape != (1, input_size, input_size):
            raise ValueError(
                f"sample {s.id} has shape {s.image.shape}, model expects (1, {input_size}, {input_size})"
            )


def mean_loss(model: CAFCT, samples: Sequence[SegSample], config: TrainConfig) -> float:
    """Batch-averaged loss in the current mode without recording a graph."""
    total, count = 0.0, 0
    with no_grad():
        for start in range(0, len(samples), config.batch_size):
            x, y = stack_batch(list(samples[start : start + config.batch_size]))
            loss = bce_dice_loss(model(Tensor(x)), y, config.w_bce, config.w_dice)
            total += loss.item() * len(x)
            count += len(x)
    return total / count


def train(
    config: TrainConfig,
    samples: Optional[Sequence[SegSample]] = None,
    model: Optional[CAFCT] = None,
    emit: Callable[[str], None] = print,
    checkpoint: bool = True,
) -> TrainResult:
    """Run ``config.epochs`` epochs and return the model plus per-epoch stats.

    Everything random is derived from ``config.seed``: the initialization
    and a separate stream for per-epoch shuffling.
    """
    config.validate()
    samples = list(samples) if samples is not None else training_samples(config)
    check_dataset(samples, config.input_size)
    fg = foreground_fraction(samples)
    if fg < SMALL_FOREGROUND:
        emit(
            f"warning: foreground fraction {fg:.5f} < {SMALL_FOREGROUND}; "
            "BCE-Dice is known to behave poorly on very small objects"
        )
    model = model or CAFCT(config.model_config(), seed=config.seed)
    model.train()
    opt = SGD(model.parameters(), config.learning_rate, config.momentum, config.weight_decay)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    ckpt_path = Path(config.checkpoint) if checkpoint and config.checkpoint else None
    result = TrainResult(model=model, checkpoint=ckpt_path)

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(samples))
        total_loss, seen = 0.0, 0
        counts = ConfusionCounts(0, 0, 0, 0)
        for start in range(0, len(order), config.batch_size):
            batch = [samples[i] for i in order[start : start + config.batch_size]]
            x, y = stack_batch(batch)
            opt.zero_grad()
            logits = model(Tensor(x))
            loss = bce_dice_loss(logits, y, config.w_bce, config.w_dice)
            backward(loss)
            opt.step()
            total_loss += loss.item() * len(batch)
            seen += len(batch)
            counts = counts + confusion_counts(threshold_logits(logits), y)
        stats = EpochStats(epoch, total_loss / seen, metrics_from_counts(counts).dice)
        result.history.append(stats)
        emit(stats.line())
        if ckpt_path is not None:
            meta = CheckpointMeta(epoch=epoch, rng_state=shuffle_rng.bit_generator.state)
            save_checkpoint(model, config, ckpt_path, meta)
    if ckpt_path is not None and config.epochs == 0:
        save_checkpoint(model, config, ckpt_path, CheckpointMeta(epoch=0))
    return result
