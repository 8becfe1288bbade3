"""Attentional feature fusion of the CNN and transformer pyramids."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .encoders import FeaturePyramid
from .numerics import functional as F
from .numerics.layers import BatchNorm2d, Conv2d, Linear, Module
from .numerics.tensor import Tensor, concat, reshape


class SEBlock(Module):
    """Squeeze-and-excitation: pool, bottleneck MLP, sigmoid channel weights."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        if reduction < 1 or channels % reduction:
            raise ValueError(f"channels {channels} not divisible by reduction ratio {reduction}")
        self.reduction = reduction
        self.reduce = Linear(channels, channels // reduction, rng)
        self.expand = Linear(channels // reduction, channels, rng)

    def channel_weights(self, x: Tensor) -> Tensor:
        """Per-(sample, channel) excitation weights in (0, 1), shape (N, C)."""
        n, c = x.shape[0], x.shape[1]
        if c != self.expand.weight.shape[0]:
            raise ValueError(f"SE block built for {self.expand.weight.shape[0]} channels, got {c}")
        s = reshape(F.global_avg_pool(x), (n, c))
        return F.sigmoid(self.expand(F.relu(self.reduce(s))))

    def forward(self, x: Tensor) -> Tensor:
        n, c = x.shape[0], x.shape[1]
        w = self.channel_weights(x)
        return x * reshape(w, (n, c, 1, 1))


class AFF(Module):
    """concat(F_cnn, F_trans) -> 1x1 conv to C -> BN -> ReLU -> SE block(s)."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator, num_se: int = 1):
        super().__init__()
        self.reduce = Conv2d(2 * channels, channels, 1, rng, bias=False)
        self.bn = BatchNorm2d(channels)
        self.se = [SEBlock(channels, reduction, rng) for _ in range(num_se)]

    def forward(self, f_cnn: Tensor, f_trans: Tensor) -> Tensor:
        if f_cnn.shape != f_trans.shape:
            raise ValueError(f"branch shapes differ: cnn {f_cnn.shape} vs transformer {f_trans.shape}")
        x = F.relu(self.bn(self.reduce(concat([f_cnn, f_trans], axis=1))))
        for block in self.se:
            x = block(x)
        return x


class PyramidFusion(Module):
    """One independently parameterized AFF per pyramid level."""

    def __init__(
        self,
        channels: Sequence[int],
        reduction: int,
        rng: np.random.Generator,
        num_se: int = 1,
    ):
        super().__init__()
        self.levels = [AFF(c, reduction, rng, num_se) for c in channels]

    def forward(self, p_cnn: FeaturePyramid, p_trans: FeaturePyramid) -> FeaturePyramid:
        if len(p_cnn) != len(self.levels) or len(p_trans) != len(self.levels):
            raise ValueError(
                f"expected {len(self.levels)} levels, got {len(p_cnn)} (cnn) and {len(p_trans)} (transformer)"
            )
        return FeaturePyramid([aff(a, b) for aff, a, b in zip(self.levels, p_cnn, p_trans)])


def se_block(x: Tensor, block: SEBlock) -> Tensor:
    return block(x)


def aff_fuse(f_cnn: Tensor, f_trans: Tensor, module: AFF) -> Tensor:
    return module(f_cnn, f_trans)


def fuse_pyramids(p_cnn: FeaturePyramid, p_trans: FeaturePyramid, module: PyramidFusion) -> FeaturePyramid:
    return module(p_cnn, p_trans)
