"""Registered finite-difference suites, one group per architecture module.

Each case builds a small random problem, back-propagates a randomly
weighted sum of the output, and reports the worst relative error against
central differences (eps = 1e-5). Plain sums are avoided because several
outputs (normalizations, softmax) have identically zero sum-gradients,
which would make the check vacuous.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..aspp import ASPP, WIDE_RATES
from ..encoders import CNNEncoder, EncoderConfig, TransformerEncoder
from ..fusion import AFF, SEBlock
from ..gates_decoder import CAFCT, AttentionGate, ModelConfig
from ..numerics import functional as F
from ..numerics.gradcheck import max_relative_error
from ..numerics.layers import Module
from ..numerics.tensor import Tensor, concat, no_grad, reshape
from ..objective import bce_dice_loss, bce_loss, dice_loss

TOL_PRIMITIVE = 1e-4
TOL_END_TO_END = 1e-3
TOL_LOSS = 1e-5
# per-tensor entry sample for module-level checks; primitives are checked exhaustively
MODULE_PROBES = 8

TINY = EncoderConfig(input_size=16, base_channels=4, patch_size=2, transformer_depth=1, heads=2)


@dataclass
class Case:
    name: str
    tolerance: float
    run: Callable[[np.random.Generator], float]


@dataclass
class CaseResult:
    module: str
    name: str
    tolerance: float
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error < self.tolerance


def _leaf(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * weights).sum()


def _check_fn(rng, fn, inputs: Sequence[Tensor], probes: Optional[int] = None) -> float:
    """Max relative error of ``fn(*inputs)`` contracted with fixed random weights."""
    out_shape = fn(*inputs).shape
    weights = rng.standard_normal(out_shape)
    return max_relative_error(lambda: _weighted(fn(*inputs), weights), list(inputs), max_probes=probes, rng=rng)


def _check_module(rng, module: Module, fn, inputs: Sequence[Tensor], probes: Optional[int] = MODULE_PROBES) -> float:
    module.train()
    weights = rng.standard_normal(fn().shape)
    tensors = list(inputs) + module.parameters()
    return max_relative_error(lambda: _weighted(fn(), weights), tensors, max_probes=probes, rng=rng)


# --- numerics ---------------------------------------------------------------


def _conv_case(stride, padding, dilation, shape=(1, 2, 6, 6)):
    def run(rng):
        x = _leaf(rng, shape)
        w = _leaf(rng, (3, shape[1], 3, 3))
        b = _leaf(rng, (3,))
        return _check_fn(rng, lambda x, w, b: F.conv2d(x, w, b, stride, padding, dilation), [x, w, b])

    return run


def _bn_case(training):
    def run(rng):
        x = _leaf(rng, (2, 3, 4, 4))
        g = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
        b = _leaf(rng, (3,))
        rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)
        return _check_fn(
            rng, lambda x, g, b: F.batch_norm(x, g, b, rm.copy(), rv.copy(), training=training), [x, g, b]
        )

    return run


def _unary_case(op, shape=(2, 3, 4, 4)):
    return lambda rng: _check_fn(rng, op, [_leaf(rng, shape)])


def _layer_norm(rng):
    x, g, b = _leaf(rng, (2, 5, 6)), _leaf(rng, (6,)), _leaf(rng, (6,))
    return _check_fn(rng, F.layer_norm, [x, g, b])


def _linear(rng):
    x, w, b = _leaf(rng, (2, 4, 5)), _leaf(rng, (3, 5)), _leaf(rng, (3,))
    return _check_fn(rng, F.linear, [x, w, b])


def _attention(return_weights):
    def run(rng):
        d = 8
        x = _leaf(rng, (2, 5, d))
        wqkv = _leaf(rng, (3 * d, d), 0.4)
        wo, bo = _leaf(rng, (d, d), 0.4), _leaf(rng, (d,), 0.1)

        def fn(*args):
            out = F.multi_head_self_attention(*args, heads=2, return_weights=return_weights)
            return out[0] if return_weights else out

        return _check_fn(rng, fn, [x, wqkv, wo, bo])

    return run


def _numerics_cases() -> List[Case]:
    t = TOL_PRIMITIVE
    return [
        Case("conv2d", t, _conv_case(1, 1, 1)),
        Case("conv2d_dilated", t, _conv_case(1, 2, 2)),
        Case("conv2d_strided", t, _conv_case(2, 1, 1)),
        Case("batch_norm_train", t, _bn_case(True)),
        Case("batch_norm_eval", t, _bn_case(False)),
        Case("layer_norm", t, _layer_norm),
        Case("global_avg_pool", t, _unary_case(F.global_avg_pool)),
        Case("avg_pool2x2", t, _unary_case(F.avg_pool2x2)),
        Case("bilinear_up", t, _unary_case(lambda x: F.bilinear_resize(x, 7, 5), (1, 2, 3, 4))),
        Case("bilinear_down", t, _unary_case(lambda x: F.bilinear_resize(x, 4, 3), (1, 2, 8, 6))),
        Case("relu", t, _unary_case(F.relu)),
        Case("sigmoid", t, _unary_case(F.sigmoid)),
        Case("softmax", t, _unary_case(lambda x: F.softmax(x, axis=1))),
        Case("gelu", t, _unary_case(F.gelu)),
        Case("linear", t, _linear),
        Case("attention_fused", t, _attention(False)),
        Case("attention_weights", t, _attention(True)),
    ]


# --- architecture modules ---------------------------------------------------


def _encoder_case(cls):
    def run(rng):
        enc = cls(TINY, rng)
        x = Tensor(rng.random((2, 1, 16, 16)), requires_grad=True)

        def fn():
            levels = enc(x).levels
            return _concat_flat(levels)

        return _check_module(rng, enc, fn, [x])

    return run


def _concat_flat(levels):
    return concat([reshape(t, (t.shape[0], -1)) for t in levels], axis=1)


def _encoder_cases() -> List[Case]:
    return [
        Case("cnn_encoder", TOL_PRIMITIVE, _encoder_case(CNNEncoder)),
        Case("transformer_encoder", TOL_PRIMITIVE, _encoder_case(TransformerEncoder)),
    ]


def _se_case(rng):
    block = SEBlock(4, 2, rng)
    x = _leaf(rng, (1, 4, 6, 6))
    return _check_module(rng, block, lambda: block(x), [x], probes=None)


def _aff_case(branch):
    def run(rng):
        module = AFF(4, 2, rng)
        a, b = _leaf(rng, (1, 4, 6, 6)), _leaf(rng, (1, 4, 6, 6))
        inputs = [a] if branch == "cnn" else [b]
        return _check_module(rng, module, lambda: module(a, b), inputs, probes=None)

    return run


def _fusion_cases() -> List[Case]:
    return [
        Case("se_block", TOL_PRIMITIVE, _se_case),
        Case("aff_cnn_branch", TOL_PRIMITIVE, _aff_case("cnn")),
        Case("aff_transformer_branch", TOL_PRIMITIVE, _aff_case("trans")),
    ]


def _aspp_case(rates, shape):
    def run(rng):
        module = ASPP(shape[1], shape[1], rng, rates)
        x = _leaf(rng, shape)
        return _check_module(rng, module, lambda: module(x), [x])

    return run


def _aspp_cases() -> List[Case]:
    return [
        # batch of 2: with one sample the pooling branch is a per-channel constant that the
        # projection's batch norm cancels, leaving structurally zero gradients
        Case("aspp_small_rates", TOL_PRIMITIVE, _aspp_case((1, 2, 3), (2, 4, 9, 9))),
        Case("aspp_wide_rates", TOL_PRIMITIVE, _aspp_case(WIDE_RATES, (2, 4, 20, 20))),
    ]


def _gate_case(rng):
    gate = AttentionGate(4, 6, 2, rng)
    x, g = _leaf(rng, (2, 4, 8, 8)), _leaf(rng, (2, 6, 4, 4))
    return _check_module(rng, gate, lambda: gate(x, g), [x, g], probes=None)


def _end_to_end(rng):
    """sum(logits^2) through the whole tiny network, batch norm in eval mode.

    Train-mode batch norm over the 1x1 bottleneck normalizes a handful of
    values per channel; the resulting curvature swamps a 1e-5 central
    difference, and per-channel shifts it cancels have exactly zero
    gradient. Running statistics are populated first so eval mode is a
    genuine affine map.
    """
    model = CAFCT(ModelConfig(encoder=TINY, se_ratio=2, aspp_rates=(1, 2, 3)), seed=int(rng.integers(1 << 31)))
    with no_grad():
        for _ in range(3):
            model(Tensor(rng.random((4, 1, 16, 16))))
    model.eval()
    x = Tensor(rng.random((2, 1, 16, 16)), requires_grad=True)
    tensors = [x] + model.parameters()
    return max_relative_error(lambda: (model(x) ** 2).sum(), tensors, max_probes=MODULE_PROBES, rng=rng)


def _gates_cases() -> List[Case]:
    return [
        Case("attention_gate", TOL_PRIMITIVE, _gate_case),
        Case("cafct_end_to_end", TOL_END_TO_END, _end_to_end),
    ]


def _loss_case(loss_fn):
    def run(rng):
        z = _leaf(rng, (2, 1, 4, 4), 2.0)
        t = (rng.random((2, 1, 4, 4)) > 0.5).astype(float)
        return max_relative_error(lambda: loss_fn(z, t), [z])

    return run


def _objective_cases() -> List[Case]:
    return [
        Case("bce", TOL_LOSS, _loss_case(bce_loss)),
        Case("dice", TOL_LOSS, _loss_case(dice_loss)),
        Case("bce_dice", TOL_LOSS, _loss_case(lambda z, t: bce_dice_loss(z, t, 1.0, 1.0))),
        Case("bce_dice_weighted", TOL_LOSS, _loss_case(lambda z, t: bce_dice_loss(z, t, 0.3, 2.0))),
    ]


def default_registry() -> Dict[str, List[Case]]:
    return {
        "numerics": _numerics_cases(),
        "encoders": _encoder_cases(),
        "fusion": _fusion_cases(),
        "aspp": _aspp_cases(),
        "gates_decoder": _gates_cases(),
        "objective": _objective_cases(),
    }


def run_grad_checks(
    scope: str = "all",
    seed: int = 0,
    registry: Optional[Dict[str, List[Case]]] = None,
    emit: Callable[[str], None] = print,
) -> List[CaseResult]:
    """Run the suites in ``scope`` and print one line per case plus a per-module summary."""
    registry = registry if registry is not None else default_registry()
    if scope != "all" and scope not in registry:
        raise KeyError(f"unknown grad-check scope {scope!r}; choose from {sorted(registry)} or 'all'")
    modules = list(registry) if scope == "all" else [scope]
    results = []
    for module in modules:
        for i, case in enumerate(registry[module]):
            rng = np.random.default_rng([seed, i, len(module)])
            start = time.perf_counter()
            try:
                err = float(case.run(rng))
            except Exception as exc:  # a crashing case is a failing case
                emit(f"{module}.{case.name}: error {exc!r}")
                err = float("inf")
            res = CaseResult(module, case.name, case.tolerance, err, time.perf_counter() - start)
            results.append(res)
            emit(
                f"{'PASS' if res.passed else 'FAIL'}  {module + '.' + case.name:<38} "
                f"rel_err={err:.3e}  tol={case.tolerance:.0e}  ({res.seconds:.1f}s)"
            )
    for module in modules:
        mine = [r for r in results if r.module == module]
        worst = max(r.error for r in mine)
        status = "PASS" if all(r.passed for r in mine) else "FAIL"
        emit(f"summary {module:<14} worst_rel_err={worst:.3e}  {status}")
    return results
