"""Module containers holding parameters for the functional primitives."""

from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Module:
    """Minimal parameter container.

    Parameters, buffers and child modules are discovered from instance
    attributes (including lists of modules) in assignment order, which
    fixes the parameter naming and the checkpoint record order.
    """

    training: bool = True

    def __init__(self):
        self.training = True
        self._buffers: Dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def _children(self) -> Iterator[Tuple[str, "Module"]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Parameter]]:
        out = []
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                out.append((prefix + key, value))
        for key, child in self._children():
            out.extend(child.named_parameters(prefix + key + "."))
        return out

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> List[Tuple[str, np.ndarray]]:
        out = [(prefix + k, v) for k, v in self._buffers.items()]
        for key, child in self._children():
            out.extend(child.named_buffers(prefix + key + "."))
        return out

    def assign_names(self) -> None:
        """Write hierarchical names into each Parameter; names must be unique."""
        named = self.named_parameters()
        names = [n for n, _ in named]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names in model")
        for name, p in named:
            p.name = name

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        dilation: int = 1,
        bias: bool = True,
    ):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(
            he_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        )
        self.bias = Parameter(np.zeros(out_channels)) if bias else None
        self.stride, self.padding, self.dilation = stride, padding, dilation

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = F.BN_EPS, momentum: float = F.BN_MOMENTUM):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.eps, self.momentum = eps, momentum
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x,
            self.gamma,
            self.beta,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            training=self.training,
            eps=self.eps,
            momentum=self.momentum,
        )


class ConvBNReLU(Module):
    """conv (no bias, BN absorbs it) -> batch norm -> ReLU."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        padding: int = 0,
        dilation: int = 1,
    ):
        super().__init__()
        self.conv = Conv2d(
            in_channels, out_channels, kernel_size, rng,
            padding=padding, dilation=dilation, bias=False,
        )
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.bn(self.conv(x)))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = Parameter(he_normal(rng, (out_features, in_features), in_features))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta)


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise ValueError(f"embedding dim {dim} is not divisible by heads={heads}")
        self.heads = heads
        # Xavier-style scale keeps initial attention logits O(1)
        self.w_qkv = Parameter(rng.standard_normal((3 * dim, dim)) / np.sqrt(dim))
        self.w_out = Parameter(rng.standard_normal((dim, dim)) / np.sqrt(dim))
        self.b_out = Parameter(np.zeros(dim))

    def forward(self, x: Tensor, return_weights: bool = False):
        return F.multi_head_self_attention(
            x, self.w_qkv, self.w_out, self.b_out, self.heads, return_weights
        )


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


def set_requires_grad(module: Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad = flag


def count_parameters(module: Optional[Module]) -> int:
    return 0 if module is None else module.num_parameters()
