"""Atrous spatial pyramid pooling over the deepest fused feature map."""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from .numerics import functional as F
from .numerics.layers import ConvBNReLU, Module
from .numerics.tensor import Tensor, concat

WIDE_RATES: Tuple[int, int, int] = (6, 12, 18)
# desk-scale bottlenecks are 4x4; the wide rates would hit almost only padding there
DESK_RATES: Tuple[int, int, int] = (2, 3, 4)

BRANCH_ORDER = ("conv1x1", "atrous0", "atrous1", "atrous2", "pool")


def effective_receptive_field(kernel: int, dilation: int) -> int:
    """Span in pixels covered by a ``kernel``-tap dilated kernel along one axis."""
    if kernel < 1 or dilation < 1:
        raise ValueError(f"kernel and dilation must be >= 1, got {kernel}, {dilation}")
    return dilation * (kernel - 1) + 1


class ASPP(Module):
    """Five parallel branches (1x1, three dilated 3x3, image pooling), concat, 1x1 projection.

    Every branch outputs ``out_channels``; the concatenation therefore has
    five times that many channels before projection.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        rates: Sequence[int] = WIDE_RATES,
    ):
        super().__init__()
        rates = tuple(int(r) for r in rates)
        if len(rates) != 3 or any(r < 1 for r in rates) or list(rates) != sorted(set(rates)):
            raise ValueError(f"ASPP needs three strictly increasing positive rates, got {rates}")
        self.rates = rates
        self.conv1x1 = ConvBNReLU(in_channels, out_channels, 1, rng)
        self.atrous = [
            ConvBNReLU(in_channels, out_channels, 3, rng, padding=r, dilation=r) for r in rates
        ]
        self.pool = ConvBNReLU(in_channels, out_channels, 1, rng)
        self.project = ConvBNReLU(5 * out_channels, out_channels, 1, rng)

    def branches(self, x: Tensor) -> list:
        h, w = x.shape[2], x.shape[3]
        outs = [self.conv1x1(x)]
        outs.extend(branch(x) for branch in self.atrous)
        pooled = self.pool(F.global_avg_pool(x))
        outs.append(F.bilinear_resize(pooled, h, w))
        return outs

    def pre_projection(self, x: Tensor) -> Tensor:
        return concat(self.branches(x), axis=1)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise ValueError(f"ASPP expects NCHW input, got {x.shape}")
        return self.project(self.pre_projection(x))


def aspp_forward(x: Tensor, module: ASPP) -> Tensor:
    return module(x)
