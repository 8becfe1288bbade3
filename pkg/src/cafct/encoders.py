"""Two-branch encoder: a convolutional pyramid and a hierarchical transformer pyramid.

Both branches emit four levels at strides 2, 4, 8, 16 with channel
schedule (C, 2C, 4C, 4C), so level ``i`` of one branch can be fused with
level ``i`` of the other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from .numerics import functional as F
from .numerics.layers import MLP, ConvBNReLU, LayerNorm, Linear, Module, MultiHeadSelfAttention
from .numerics.tensor import Parameter, Tensor, reshape, transpose

NUM_LEVELS = 4


@dataclass
class EncoderConfig:
    input_size: int = 64
    base_channels: int = 16
    patch_size: int = 2
    transformer_depth: int = 1
    heads: int = 2
    cnn_depth: int = 2
    mlp_ratio: int = 2

    def validate(self) -> None:
        if self.input_size < 16 or self.input_size % 16:
            raise ValueError(f"input_size must be a positive multiple of 16, got {self.input_size}")
        if self.patch_size != 2:
            # level 1 sits at stride 2 in both branches, so the stage-1 patch grid must too
            raise ValueError(f"patch_size must be 2 to align with the CNN pyramid, got {self.patch_size}")
        if self.base_channels < 1 or self.cnn_depth < 1 or self.transformer_depth < 0:
            raise ValueError("base_channels and cnn_depth must be >= 1, transformer_depth >= 0")
        for c in self.channels():
            if c % self.heads:
                raise ValueError(f"stage width {c} not divisible by heads={self.heads}")

    def channels(self) -> Tuple[int, int, int, int]:
        c = self.base_channels
        return (c, 2 * c, 4 * c, 4 * c)

    def spatial(self) -> Tuple[int, int, int, int]:
        s = self.input_size
        return (s // 2, s // 4, s // 8, s // 16)

    def level_shapes(self, batch: int = 1) -> List[Tuple[int, int, int, int]]:
        return [(batch, c, s, s) for c, s in zip(self.channels(), self.spatial())]

    def token_counts(self) -> Tuple[int, ...]:
        return tuple(s * s for s in self.spatial())


class FeaturePyramid:
    """Ordered list of four NCHW feature maps, finest first."""

    def __init__(self, levels: Sequence[Tensor]):
        self.levels = list(levels)

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> Tensor:
        return self.levels[i]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.levels)

    @property
    def shapes(self) -> List[Tuple[int, ...]]:
        return [t.shape for t in self.levels]

    def check_schedule(self) -> None:
        """Raise if the halving / doubling rule (last level keeps width) is violated."""
        if len(self.levels) != NUM_LEVELS:
            raise ValueError(f"expected {NUM_LEVELS} levels, got {len(self.levels)}")
        shapes = self.shapes
        for i in range(NUM_LEVELS - 1):
            (n0, c0, h0, w0), (n1, c1, h1, w1) = shapes[i], shapes[i + 1]
            want_c = c0 if i == NUM_LEVELS - 2 else 2 * c0
            if n0 != n1 or h1 * 2 != h0 or w1 * 2 != w0 or c1 != want_c:
                raise ValueError(f"pyramid schedule violated between levels {i + 1} and {i + 2}: {shapes}")


def _validate_image(image: Tensor, config: EncoderConfig) -> None:
    if image.ndim != 4 or image.shape[1] != 1:
        raise ValueError(f"expected a single-channel NCHW image, got shape {image.shape}")
    h, w = image.shape[2], image.shape[3]
    if h != w:
        raise ValueError(f"input must be square, got {h}x{w}")
    if h != config.input_size:
        raise ValueError(f"input size {h} does not match configured input_size {config.input_size}")


class CNNStage(Module):
    def __init__(self, cin: int, cout: int, depth: int, rng: np.random.Generator):
        super().__init__()
        self.blocks = [
            ConvBNReLU(cin if i == 0 else cout, cout, 3, rng, padding=1) for i in range(depth)
        ]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return F.avg_pool2x2(x)


class CNNEncoder(Module):
    """Four stages of [3x3 conv, BN, ReLU] x depth, each closed by 2x2 stride-2 pooling."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        chans = (1,) + config.channels()
        self.stages = [
            CNNStage(chans[i], chans[i + 1], config.cnn_depth, rng) for i in range(NUM_LEVELS)
        ]

    def forward(self, image: Tensor) -> FeaturePyramid:
        _validate_image(image, self.config)
        levels = []
        x = image
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return FeaturePyramid(levels)


def patchify(x: Tensor, p: int) -> Tensor:
    """(N, C, H, W) -> (N, (H/p)(W/p), C p p), patches in row-major grid order."""
    n, c, h, w = x.shape
    if h % p or w % p:
        raise ValueError(f"spatial extent {h}x{w} not divisible by patch size {p}")
    t = reshape(x, (n, c, h // p, p, w // p, p))
    t = transpose(t, (0, 2, 4, 1, 3, 5))
    return reshape(t, (n, (h // p) * (w // p), c * p * p))


def tokens_to_map(tokens: Tensor, h: int, w: int) -> Tensor:
    n, length, d = tokens.shape
    if length != h * w:
        raise ValueError(f"{length} tokens cannot form a {h}x{w} grid")
    return transpose(reshape(tokens, (n, h, w, d)), (0, 3, 1, 2))


class TransformerBlock(Module):
    """Pre-norm residual block: x + MHSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TransformerStage(Module):
    """Patch embedding (stage 1) or 2x2 patch merging, positional embedding, blocks."""

    def __init__(
        self,
        cin: int,
        cout: int,
        patch: int,
        tokens: int,
        config: EncoderConfig,
        rng: np.random.Generator,
        merge: bool,
    ):
        super().__init__()
        self.patch = patch
        in_features = cin * patch * patch
        # patch merging normalizes the concatenated 2x2 neighborhood first
        self.merge_norm = LayerNorm(in_features) if merge else None
        self.embed = Linear(in_features, cout, rng)
        self.pos = Parameter(rng.standard_normal((1, tokens, cout)) * 0.02)
        self.blocks = [
            TransformerBlock(cout, config.heads, config.mlp_ratio, rng)
            for _ in range(config.transformer_depth)
        ]
        self.norm = LayerNorm(cout)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2] // self.patch, x.shape[3] // self.patch
        t = patchify(x, self.patch)
        if self.merge_norm is not None:
            t = self.merge_norm(t)
        t = self.embed(t) + self.pos
        for block in self.blocks:
            t = block(t)
        return tokens_to_map(self.norm(t), h, w)


class TransformerEncoder(Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        chans = (1,) + config.channels()
        tokens = config.token_counts()
        self.stages = [
            TransformerStage(
                chans[i],
                chans[i + 1],
                config.patch_size if i == 0 else 2,
                tokens[i],
                config,
                rng,
                merge=i > 0,
            )
            for i in range(NUM_LEVELS)
        ]

    def forward(self, image: Tensor) -> FeaturePyramid:
        _validate_image(image, self.config)
        levels = []
        x = image
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return FeaturePyramid(levels)


def cnn_encoder_forward(image: Tensor, encoder: CNNEncoder) -> FeaturePyramid:
    return encoder(image)


def transformer_encoder_forward(image: Tensor, encoder: TransformerEncoder) -> FeaturePyramid:
    return encoder(image)
