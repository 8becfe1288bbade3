"""Evaluation over a dataset and single-image inference."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..gates_decoder import CAFCT
from ..numerics import functional as F
from ..numerics.tensor import Tensor, no_grad
from ..objective import (
    ConfusionCounts,
    MetricsReport,
    aggregate_metrics,
    confusion_counts,
    metrics_from_counts,
)
from .checkpoint import load_checkpoint
from .data import SegSample, image_to_bytes, read_image_pgm, stack_batch, write_mask_pgm
from .data import encode_pgm

THRESHOLD = 0.5
CONVENTION_NOTE = (
    "# empty-denominator convention: a metric is 1 when both of its defining sets are "
    "empty, 0 when only its numerator is empty"
)


@dataclass
class EvaluationResult:
    per_image: List[Tuple[str, ConfusionCounts]]
    per_image_mean: MetricsReport
    global_report: MetricsReport

    def to_text(self) -> str:
        lines = []
        for sid, c in self.per_image:
            m = metrics_from_counts(c)
            lines.append(
                f"image={sid} tp={c.tp} fp={c.fp} fn={c.fn} tn={c.tn} "
                f"iou={m.iou:.6f} dice={m.dice:.6f}"
            )
        lines.append(CONVENTION_NOTE)
        lines.append(self.global_report.to_text())
        lines.append(self.per_image_mean.to_text())
        return "\n".join(lines) + "\n"


def predict_probabilities(model: CAFCT, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Eval-mode sigmoid probabilities for (N, 1, H, W) images."""
    model.eval()
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            logits = model(Tensor(images[start : start + batch_size]))
            out.append(F._sigmoid(logits.data))
    return np.concatenate(out, axis=0)


def evaluate_predictions(
    ids: Sequence[str], predictions: Sequence[np.ndarray], targets: Sequence[np.ndarray]
) -> EvaluationResult:
    per_image = [(sid, confusion_counts(p, t)) for sid, p, t in zip(ids, predictions, targets)]
    counts = [c for _, c in per_image]
    return EvaluationResult(
        per_image=per_image,
        per_image_mean=aggregate_metrics(counts, "per_image_mean"),
        global_report=aggregate_metrics(counts, "global"),
    )


def evaluate(
    model: CAFCT,
    samples: Sequence[SegSample],
    batch_size: int = 8,
    predictor: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> EvaluationResult:
    """Threshold eval-mode probabilities at 0.5 and score against the masks.

    ``predictor`` replaces the model with any images -> binary masks map.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty evaluation set")
    size = model.config.encoder.input_size if model is not None else None
    for s in samples:
        if size is not None and s.image.shape != (1, size, size):
            raise ValueError(f"sample {s.id} shape {s.image.shape} does not match model input {size}")
    images, masks = stack_batch(samples)
    if predictor is None:
        preds = (predict_probabilities(model, images, batch_size) > THRESHOLD).astype(np.float64)
    else:
        preds = predictor(images)
    return evaluate_predictions([s.id for s in samples], preds, masks)


def evaluate_checkpoint(path: Union[str, Path], samples: Sequence[SegSample]) -> EvaluationResult:
    model, config, _ = load_checkpoint(path)
    return evaluate(model, samples, config.batch_size)


def probability_bytes(prob: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Quantize probabilities so that ``byte >= 128`` reproduces ``mask`` exactly."""
    b = image_to_bytes(prob).astype(np.int16)
    b = np.where(mask > 0, np.maximum(b, 128), np.minimum(b, 127))
    return b.astype(np.uint8)


def infer(
    checkpoint: Union[str, Path],
    image_path: Union[str, Path],
    out_path: Union[str, Path],
    prob_path: Optional[Union[str, Path]] = None,
) -> np.ndarray:
    """Write the thresholded mask (and optionally the probability map) as PGM."""
    model, config, _ = load_checkpoint(checkpoint)
    image = read_image_pgm(image_path)
    size = config.input_size
    if image.shape != (1, size, size):
        raise ValueError(f"image is {image.shape[1]}x{image.shape[2]}, checkpoint expects {size}x{size}")
    prob = predict_probabilities(model, image[None])[0, 0]
    mask = (prob > THRESHOLD).astype(np.float64)
    write_mask_pgm(mask, out_path)
    if prob_path is not None:
        Path(prob_path).write_bytes(encode_pgm(probability_bytes(prob, mask)))
    return mask
