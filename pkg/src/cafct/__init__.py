"""Hybrid CNN/transformer segmentation network with attentional and contextual fusion.

Everything runs on a small float64 numpy autodiff engine in
:mod:`cafct.numerics`.
"""

from .aspp import ASPP, effective_receptive_field
from .encoders import CNNEncoder, EncoderConfig, FeaturePyramid, TransformerEncoder
from .fusion import AFF, PyramidFusion, SEBlock
from .gates_decoder import CAFCT, AttentionGate, Decoder, ModelConfig
from .objective import (
    ConfusionCounts,
    MetricsReport,
    aggregate_metrics,
    bce_dice_loss,
    bce_loss,
    confusion_counts,
    dice_loss,
    metrics_from_counts,
)

__version__ = "0.1.0"
