"""Central finite differences, the oracle for every backward rule."""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .tensor import Tensor, backward, no_grad


def finite_diff_grad(
    f: Callable[[Tensor], Union[Tensor, float]],
    x: Union[Tensor, np.ndarray],
    eps: float = 1e-5,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """(f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for each flat index i.

    ``x`` is perturbed in place and restored. When ``indices`` is given,
    only those flat positions are probed and the rest of the result is NaN.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    arr = x.data if isinstance(x, Tensor) else x
    flat = arr.reshape(-1)
    if not np.shares_memory(flat, arr):
        raise ValueError("finite_diff_grad needs a contiguous array to perturb in place")
    probe = range(flat.size) if indices is None else indices
    grad = np.full(flat.size, np.nan) if indices is not None else np.zeros(flat.size)

    def value() -> float:
        with no_grad():
            out = f(x)
        return float(out.data if isinstance(out, Tensor) else out)

    for i in probe:
        orig = flat[i]
        flat[i] = orig + eps
        plus = value()
        flat[i] = orig - eps
        minus = value()
        flat[i] = orig
        grad[i] = (plus - minus) / (2 * eps)
    return grad.reshape(arr.shape)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise |a - b| / max(|a|, |b|, floor)."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def max_relative_error(
    f: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    eps: float = 1e-5,
    max_probes: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Worst relative error between backward and finite differences.

    ``f`` is a closure computing a scalar from ``tensors`` (which must have
    ``requires_grad``). With ``max_probes`` each tensor is checked on a
    random subset of at most that many entries.
    """
    for t in tensors:
        t.grad = np.zeros_like(t.data) if t.requires_grad else None
    loss = f()
    backward(loss)
    analytic = [t.grad.copy() for t in tensors]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        idx = None
        if max_probes is not None and t.size > max_probes:
            idx = rng.choice(t.size, size=max_probes, replace=False)
        gn = finite_diff_grad(lambda _: f(), t, eps=eps, indices=idx)
        if idx is None:
            err = relative_error(ga, gn)
        else:
            err = relative_error(ga.reshape(-1)[idx], gn.reshape(-1)[idx])
        worst = max(worst, float(err.max()))
    return worst
