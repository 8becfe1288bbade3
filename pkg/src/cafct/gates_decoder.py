"""Attention-gated skip connections, the decoder, and the full network."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .aspp import ASPP, DESK_RATES
from .encoders import CNNEncoder, EncoderConfig, FeaturePyramid, TransformerEncoder
from .fusion import PyramidFusion
from .numerics import functional as F
from .numerics.layers import Conv2d, ConvBNReLU, Module
from .numerics.tensor import Tensor, concat


def inter_channels_for(skip_channels: int) -> int:
    return max(1, skip_channels // 2)


class AttentionGate(Module):
    """Spatial gate on a skip feature driven by a coarser gating signal.

    The additive attention runs at the gate's resolution; the one-channel
    coefficient map is resampled back to the skip resolution and multiplied
    into every skip channel.
    """

    def __init__(self, skip_channels: int, gate_channels: int, inter_channels: int, rng: np.random.Generator):
        super().__init__()
        self.w_x = Conv2d(skip_channels, inter_channels, 1, rng, bias=False)
        self.w_g = Conv2d(gate_channels, inter_channels, 1, rng, bias=True)
        self.psi = Conv2d(inter_channels, 1, 1, rng, bias=True)

    def coefficients(self, x_skip: Tensor, g: Tensor) -> Tensor:
        """Attention map (N, 1, Hx, Wx) with entries in (0, 1)."""
        if x_skip.shape[0] != g.shape[0]:
            raise ValueError(f"batch mismatch: skip {x_skip.shape} vs gate {g.shape}")
        hx, wx = x_skip.shape[2], x_skip.shape[3]
        hg, wg = g.shape[2], g.shape[3]
        if hg > hx or wg > wx:
            raise ValueError(f"gate {g.shape} must not be finer than skip {x_skip.shape}")
        xs = self.w_x(x_skip)
        if (hx, wx) != (hg, wg):
            xs = F.bilinear_resize(xs, hg, wg)
        a = F.sigmoid(self.psi(F.relu(xs + self.w_g(g))))
        return F.bilinear_resize(a, hx, wx)

    def forward(self, x_skip: Tensor, g: Tensor) -> Tensor:
        return x_skip * self.coefficients(x_skip, g)


def attention_gate(x_skip: Tensor, g: Tensor, gate: AttentionGate) -> Tensor:
    return gate(x_skip, g)


class DecoderBlock(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = ConvBNReLU(cin, cout, 3, rng, padding=1)
        self.conv2 = ConvBNReLU(cout, cout, 3, rng, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(self.conv1(x))


class Decoder(Module):
    """Walks levels 3 -> 1: gate the fused skip with the running state, upsample, merge.

    The state starts as the ASPP context at level-4 resolution. A 1x1 head
    and a final bilinear upsample produce one logit per input pixel.
    """

    def __init__(self, channels: Sequence[int], input_size: int, rng: np.random.Generator):
        super().__init__()
        self.channels = tuple(channels)
        self.input_size = input_size
        # index 0 handles level 3, index 2 handles level 1
        self.gates = []
        self.blocks = []
        for lvl in (2, 1, 0):
            skip_c, state_c = channels[lvl], channels[lvl + 1]
            self.gates.append(AttentionGate(skip_c, state_c, inter_channels_for(skip_c), rng))
            self.blocks.append(DecoderBlock(state_c + skip_c, skip_c, rng))
        self.head = Conv2d(channels[0], 1, 1, rng, bias=True)

    def forward(self, fused: FeaturePyramid, context: Tensor, details: Optional[dict] = None) -> Tensor:
        if len(fused) != 4:
            raise ValueError(f"decoder expects a 4-level pyramid, got {len(fused)}")
        for i, t in enumerate(fused):
            if t.shape[1] != self.channels[i]:
                raise ValueError(f"level {i + 1} has {t.shape[1]} channels, expected {self.channels[i]}")
        if context.shape[1:] != fused[3].shape[1:] or context.shape[0] != fused[3].shape[0]:
            raise ValueError(f"context {context.shape} inconsistent with level 4 {fused[3].shape}")
        state = context
        for gate, block, lvl in zip(self.gates, self.blocks, (2, 1, 0)):
            skip = fused[lvl]
            coeff = gate.coefficients(skip, state)
            if details is not None:
                details.setdefault("gate_coefficients", []).append(coeff)
            gated = skip * coeff
            up = F.bilinear_resize(state, skip.shape[2], skip.shape[3])
            state = block(concat([up, gated], axis=1))
        logits = self.head(state)
        return F.bilinear_resize(logits, self.input_size, self.input_size)


def decoder_forward(fused: FeaturePyramid, context: Tensor, decoder: Decoder) -> Tensor:
    return decoder(fused, context)


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    se_ratio: int = 4
    se_blocks: int = 1
    aspp_rates: Tuple[int, int, int] = DESK_RATES

    def validate(self) -> None:
        self.encoder.validate()
        for c in self.encoder.channels():
            if c % self.se_ratio:
                raise ValueError(f"stage width {c} not divisible by se_ratio={self.se_ratio}")


class CAFCT(Module):
    """Dual encoders -> per-level AFF -> ASPP on level 4 -> gated decoder -> logits."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        enc = config.encoder
        chans = enc.channels()
        self.cnn = CNNEncoder(enc, rng)
        self.transformer = TransformerEncoder(enc, rng)
        self.fusion = PyramidFusion(chans, config.se_ratio, rng, config.se_blocks)
        self.aspp = ASPP(chans[3], chans[3], rng, config.aspp_rates)
        self.decoder = Decoder(chans, enc.input_size, rng)
        self.assign_names()

    def forward(self, image: Tensor, details: Optional[dict] = None) -> Tensor:
        if image.ndim != 4 or image.shape[1] != 1:
            raise ValueError(f"expected (N, 1, H, W) image, got {image.shape}")
        s = self.config.encoder.input_size
        if image.shape[2:] != (s, s):
            raise ValueError(f"image size {image.shape[2:]} does not match model input_size {s}")
        p_cnn = self.cnn(image)
        p_trans = self.transformer(image)
        fused = self.fusion(p_cnn, p_trans)
        context = self.aspp(fused[3])
        if details is not None:
            details.update(cnn=p_cnn, transformer=p_trans, fused=fused, context=context)
        return self.decoder(fused, context, details)


def cafct_forward(image: Tensor, model: CAFCT) -> Tensor:
    return model(image)


def parameter_report(model: Module) -> Dict[str, int]:
    """Parameter counts per top-level submodule plus the total."""
    counts: Dict[str, int] = {}
    for name, p in model.named_parameters():
        top = name.split(".", 1)[0]
        counts[top] = counts.get(top, 0) + p.size
    counts["total"] = sum(v for k, v in counts.items())
    return counts
