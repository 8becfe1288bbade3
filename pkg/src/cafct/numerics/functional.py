"""Neural-network primitives with hand-written backward rules."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .tensor import Tensor, as_tensor, make_result, matmul, reshape, transpose

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# --- activations ----------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # branch-free stable form: exp never sees a positive argument
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), grad_fn, "softmax")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    x = as_tensor(x)
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def grad_fn(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * d_inner),)

    return make_result(out, (x,), grad_fn, "gelu")


# --- affine maps ----------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` over the trailing axis; weight is (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(
            f"linear: input trailing extent {x.shape[-1]} (shape {x.shape}) does not "
            f"match weight in-features {weight.shape[1]} (shape {weight.shape})"
        )
    parents = (x, weight) if bias is None else (x, weight, as_tensor(bias))
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + parents[2].data

    def grad_fn(g):
        gx = g @ weight.data
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ x.data.reshape(-1, x.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(out, parents, grad_fn, "linear")


def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """2D cross-correlation with zero padding and dilated taps (NCHW).

    Implemented as one GEMM over gathered taps; the backward pass scatters
    the tap gradients back into the padded input.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4D input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ValueError(
            f"conv2d: input channels {cin} (input shape {x.shape}) do not match "
            f"weight in-channels {wcin} (weight shape {weight.shape})"
        )
    if stride < 1 or dilation < 1 or kh < 1 or kw < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride}, padding={padding}, dilation={dilation}")
    ext_h, ext_w = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    if ext_h > h + 2 * padding or ext_w > w + 2 * padding:
        raise ValueError(
            f"conv2d: effective kernel {ext_h}x{ext_w} exceeds padded input "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # cols: (cin, kh, kw, n, ho, wo)
    cols = np.empty((cin, kh, kw, n, ho, wo))
    taps = []
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            rs = slice(r0, r0 + stride * (ho - 1) + 1, stride)
            cs = slice(c0, c0 + stride * (wo - 1) + 1, stride)
            taps.append((i, j, rs, cs))
            cols[:, i, j] = xp[:, :, rs, cs].transpose(1, 0, 2, 3)
    k = cin * kh * kw
    cols2 = cols.reshape(k, n * ho * wo)
    w2 = weight.data.reshape(cout, k)
    out = (w2 @ cols2).reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape(1, -1, 1, 1)
        parents.append(bias)

    def grad_fn(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, n * ho * wo)
        gw = (g2 @ cols2.T).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(cin, kh, kw, n, ho, wo)
            gxp = np.zeros_like(xp)
            for i, j, rs, cs in taps:
                gxp[:, :, rs, cs] += gcols[:, i, j].transpose(1, 0, 2, 3)
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    return make_result(np.ascontiguousarray(out), parents, grad_fn, "conv2d")


# --- normalization --------------------------------------------------------


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Optional[np.ndarray] = None,
    running_var: Optional[np.ndarray] = None,
    training: bool = True,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode the batch statistics normalize the input and, when
    running buffers are supplied, update them in place by EMA (unbiased
    variance). Eval mode requires the running buffers.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ValueError("batch_norm: eps must be positive")
    if x.ndim != 4:
        raise ValueError(f"batch_norm expects NCHW input, got {x.shape}")
    c = x.shape[1]
    shape = (1, c, 1, 1)
    g_ = gamma.data.reshape(shape)

    if not training:
        if running_mean is None or running_var is None:
            raise ValueError("batch_norm: eval mode requires populated running statistics")
        inv_std = 1.0 / np.sqrt(running_var.reshape(shape) + eps)
        xhat = (x.data - running_mean.reshape(shape)) * inv_std
        out = g_ * xhat + beta.data.reshape(shape)

        def eval_grad(g):
            return (
                g * g_ * inv_std,
                (g * xhat).sum(axis=(0, 2, 3)),
                g.sum(axis=(0, 2, 3)),
            )

        return make_result(out, (x, gamma, beta), eval_grad, "batch_norm")

    axes = (0, 2, 3)
    m = x.data.size // c
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = g_ * xhat + beta.data.reshape(shape)

    if running_mean is not None and running_var is not None:
        unbiased = var.reshape(-1) * (m / (m - 1)) if m > 1 else var.reshape(-1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased

    def grad_fn(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * g_
        dx = (inv_std / m) * (
            m * dxhat
            - dxhat.sum(axis=axes, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
        )
        return dx, dgamma, dbeta

    return make_result(out, (x, gamma, beta), grad_fn, "batch_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = BN_EPS) -> Tensor:
    """Normalize over the trailing axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def grad_fn(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gamma.data
        dx = (inv_std / d) * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_result(out, (x, gamma, beta), grad_fn, "layer_norm")


# --- pooling and resampling ----------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over each channel's H x W plane -> (N, C, 1, 1)."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ValueError(f"global_avg_pool expects NCHW input, got {x.shape}")
    hw = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return make_result(
        out, (x,), lambda g: (np.broadcast_to(g / hw, x.shape).copy(),), "global_avg_pool"
    )


def avg_pool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 average pooling (stride 2); H and W must be even."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2x2 needs even spatial extents, got {x.shape}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def grad_fn(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return make_result(out, (x,), grad_fn, "avg_pool2x2")


def bilinear_matrix(in_size: int, out_size: int) -> np.ndarray:
    """(out_size, in_size) interpolation weights with half-pixel centers.

    Source coordinate for output index i is (i + 0.5) * in/out - 0.5,
    clamped to [0, in_size - 1].
    """
    if in_size < 1 or out_size < 1:
        raise ValueError(f"bilinear sizes must be positive, got {in_size} -> {out_size}")
    m = np.zeros((out_size, in_size))
    if in_size == out_size:
        np.fill_diagonal(m, 1.0)
        return m
    scale = in_size / out_size
    src = np.clip((np.arange(out_size) + 0.5) * scale - 0.5, 0.0, in_size - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    rows = np.arange(out_size)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear resampling of an NCHW tensor to (out_h, out_w)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"bilinear_resize expects NCHW input, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize: output size must be positive, got {out_h}x{out_w}")
    h, w = x.shape[2], x.shape[3]
    if (h, w) == (out_h, out_w):
        return make_result(x.data.copy(), (x,), lambda g: (g,), "bilinear_resize")
    rh = bilinear_matrix(h, out_h)
    rw = bilinear_matrix(w, out_w)
    out = rh @ x.data @ rw.T
    return make_result(out, (x,), lambda g: (rh.T @ g @ rw,), "bilinear_resize")


# --- attention ------------------------------------------------------------


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) over the key axis; q, k are (..., L, d)."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = matmul(q * scale, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    return softmax(scores, axis=-1)


def _softmax_inplace(scores: np.ndarray) -> np.ndarray:
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    return scores


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v as one node; keeps a single (L, L) buffer alive."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    scale = 1.0 / np.sqrt(q.shape[-1])
    qs = q.data * scale
    kt = np.swapaxes(k.data, -1, -2)
    attn = _softmax_inplace(qs @ kt)
    out = attn @ v.data

    def grad_fn(g):
        gv = np.swapaxes(attn, -1, -2) @ g
        ga = g @ np.swapaxes(v.data, -1, -2)
        ga -= (ga * attn).sum(axis=-1, keepdims=True)
        ga *= attn  # now d(scores)
        gq = (ga @ k.data) * scale
        gk = np.swapaxes(ga, -1, -2) @ qs
        return gq, gk, gv

    return make_result(out, (q, k, v), grad_fn, "sdpa")


def multi_head_self_attention(
    x: Tensor,
    w_qkv: Tensor,
    w_out: Tensor,
    b_out: Tensor,
    heads: int,
    return_weights: bool = False,
):
    """Scaled dot-product self-attention over tokens of ``x`` (N, L, D).

    ``w_qkv`` is (3D, D): the query, key and value projections stacked.
    The projections carry no bias; a key bias is invisible to the softmax.
    """
    x = as_tensor(x)
    n, length, d = x.shape
    if heads < 1 or d % heads:
        raise ValueError(f"embedding dim {d} is not divisible by heads={heads}")
    hd = d // heads
    qkv = linear(x, w_qkv)  # (N, L, 3D)
    qkv = transpose(reshape(qkv, (n, length, 3, heads, hd)), (2, 0, 3, 1, 4))
    # split the leading stacked axis without copying through the tape more than once
    q = _take(qkv, 0)
    k = _take(qkv, 1)
    v = _take(qkv, 2)
    if return_weights:
        weights = attention_weights(q, k)  # (N, heads, L, L)
        ctx = matmul(weights, v)
    else:
        ctx = scaled_dot_product_attention(q, k, v)  # (N, heads, L, hd)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (n, length, d))
    out = linear(ctx, w_out, b_out)
    if return_weights:
        return out, weights
    return out


def _take(x: Tensor, index: int) -> Tensor:
    """Select ``x[index]`` along the leading axis."""
    shape = x.shape

    def grad_fn(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return make_result(x.data[index], (x,), grad_fn, "take")
