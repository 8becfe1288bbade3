"""Acceptance suite: one PASS/FAIL line per primary criterion.

The toy-learning check drives the real CLI end to end (data generation,
training with the desk default config, held-out evaluation) and is by far
the slowest test in the repository.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record_acceptance, warm_up
from cafct import CAFCT, EncoderConfig, ModelConfig
from cafct.harness.checkpoint import load_checkpoint
from cafct.harness.cli import main
from cafct.harness.config import TrainConfig, load_config
from cafct.harness.evaluate import predict_probabilities
from cafct.harness.gradcheck_suites import run_grad_checks
from cafct.harness.train import train
from cafct.numerics.tensor import Tensor, no_grad
from cafct.objective import (
    ConfusionCounts,
    aggregate_metrics,
    bce_loss,
    confusion_counts,
    dice_loss,
    metrics_from_counts,
)

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk_default.cfg"


def test_gradient_suite():
    start = time.perf_counter()
    results = run_grad_checks("all", seed=0, emit=lambda line: None)
    elapsed = time.perf_counter() - start
    failed = [f"{r.module}.{r.name}" for r in results if not r.passed]
    worst = {}
    for r in results:
        worst[r.module] = max(worst.get(r.module, 0.0), r.error)
    detail = f"{len(results)} cases, {len(failed)} failed {failed}, {elapsed:.0f}s < 300s, worst " + ", ".join(
        f"{m}={e:.1e}" for m, e in worst.items()
    )
    assert record_acceptance("gradient suite", not failed and elapsed < 300, detail)


SHAPE_CONFIGS = [
    EncoderConfig(input_size=64, base_channels=16, heads=2),
    EncoderConfig(input_size=32, base_channels=8, heads=2),
    EncoderConfig(input_size=48, base_channels=12, heads=3),
    EncoderConfig(input_size=16, base_channels=4, heads=1, transformer_depth=2),
]


def test_shape_schedule():
    problems = []
    for enc in SHAPE_CONFIGS:
        model = CAFCT(ModelConfig(encoder=enc, se_ratio=4 if enc.base_channels % 4 == 0 else 2), seed=0)
        details = {}
        s = enc.input_size
        with no_grad():
            logits = model(Tensor(np.random.default_rng(0).random((2, 1, s, s))), details)
        tag = f"{s}/{enc.base_channels}"
        for branch in ("cnn", "transformer"):
            pyramid = details[branch]
            try:
                pyramid.check_schedule()
            except ValueError as exc:
                problems.append(f"{tag} {branch}: {exc}")
            if pyramid.shapes != enc.level_shapes(2):
                problems.append(f"{tag} {branch} shapes {pyramid.shapes}")
            c = [shape[1] for shape in pyramid.shapes]
            if c[3] != c[2]:
                problems.append(f"{tag} {branch}: last level width changed")
        if details["fused"].shapes != details["cnn"].shapes:
            problems.append(f"{tag}: fusion changed shapes")
        with no_grad():
            pre = model.aspp.pre_projection(details["fused"][3])
        if pre.shape[1] != 5 * enc.channels()[3]:
            problems.append(f"{tag}: ASPP concat width {pre.shape[1]}")
        if logits.shape != (2, 1, s, s):
            problems.append(f"{tag}: logits {logits.shape}")
    detail = f"{len(SHAPE_CONFIGS)} configs checked" + (f"; {problems}" if problems else "")
    assert record_acceptance("shape schedule", not problems, detail)


def _loop_counts(pred, target):
    tp = fp = fn = tn = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            p, t = pred[i, j] == 1, target[i, j] == 1
            tp += p and t
            fp += p and not t
            fn += t and not p
            tn += not p and not t
    return ConfusionCounts(tp, fp, fn, tn)


def test_metric_oracle():
    rng = np.random.default_rng(2024)
    mismatches, identity_failures = 0, 0
    per_image = []
    for _ in range(1000):
        # vary the foreground density so empty and full masks also occur
        pred = (rng.random((16, 16)) < rng.choice([0.0, 0.05, 0.5, 0.95, 1.0])).astype(float)
        target = (rng.random((16, 16)) < rng.choice([0.0, 0.05, 0.5, 0.95, 1.0])).astype(float)
        counts = confusion_counts(pred, target)
        oracle = _loop_counts(pred, target)
        m = metrics_from_counts(counts)
        iou_ref = oracle.tp / (oracle.tp + oracle.fn + oracle.fp) if oracle.tp + oracle.fn + oracle.fp else 1.0
        dice_den = (oracle.tp + oracle.fn) + (oracle.tp + oracle.fp)
        dice_ref = 2 * oracle.tp / dice_den if dice_den else 1.0
        if counts != oracle or m.iou != iou_ref or m.dice != dice_ref:
            mismatches += 1
        if abs(m.dice - 2 * m.iou / (1 + m.iou)) > 1e-12:
            identity_failures += 1
        per_image.append(counts)
    total = ConfusionCounts(0, 0, 0, 0)
    for c in per_image:
        total = total + c
    glob = aggregate_metrics(per_image, "global")
    mean = aggregate_metrics(per_image, "per_image_mean")
    additive = glob.counts == total and glob.as_dict() == metrics_from_counts(total).as_dict()
    mean_ok = math.isclose(mean.iou, np.mean([metrics_from_counts(c).iou for c in per_image]), abs_tol=1e-12)
    passed = mismatches == 0 and identity_failures == 0 and additive and mean_ok
    detail = (
        f"1000 pairs, {mismatches} oracle mismatches, {identity_failures} dice/iou identity failures, "
        f"additivity {'ok' if additive and mean_ok else 'broken'}"
    )
    assert record_acceptance("metric oracle", passed, detail)


def test_attention_range():
    rng = np.random.default_rng(99)
    model = CAFCT(ModelConfig(encoder=EncoderConfig(input_size=16, base_channels=4), se_ratio=2), seed=1)
    se_weights = []
    for level in model.fusion.levels:
        for block in level.se:
            original = block.channel_weights

            def recording(x, _original=original):
                w = _original(x)
                se_weights.append(w.data)
                return w

            block.channel_weights = recording
    lo, hi, violations = 1.0, 0.0, 0
    for i in range(100):
        model.train(i % 2 == 0)
        details = {}
        scale = rng.choice([0.1, 1.0, 10.0])
        with no_grad():
            model(Tensor(rng.standard_normal((2, 1, 16, 16)) * scale), details)
        for values in se_weights + [a.data for a in details["gate_coefficients"]]:
            lo, hi = min(lo, values.min()), max(hi, values.max())
            violations += int(np.any((values <= 0) | (values >= 1)))
        se_weights.clear()

    gate = model.decoder.gates[0]
    x = Tensor(rng.standard_normal((2,) + tuple(gate.w_x.weight.shape[1:2]) + (4, 4)))
    g = Tensor(rng.standard_normal((2, gate.w_g.weight.shape[1], 2, 2)))
    saved = gate.psi.weight.data.copy(), gate.psi.bias.data.copy()
    gate.psi.weight.data[...] = 0.0
    errors = []
    for bias, target in ((20.0, x.data), (-20.0, np.zeros_like(x.data))):
        gate.psi.bias.data[...] = bias
        with no_grad():
            errors.append(float(np.abs(gate(x, g).data - target).max()))
    gate.psi.weight.data[...], gate.psi.bias.data[...] = saved
    passed = violations == 0 and max(errors) < 1e-6
    detail = (
        f"100 passes, {violations} out-of-range maps, range [{lo:.3e}, {hi:.6f}], "
        f"saturation err +20: {errors[0]:.1e}, -20: {errors[1]:.1e} (tol 1e-6)"
    )
    assert record_acceptance("attention range", passed, detail)


def _parse_log(text):
    rows = []
    for line in text.splitlines():
        if line.startswith("epoch="):
            rows.append(dict(part.split("=") for part in line.split()))
    return rows


def _report_value(text, aggregation, key):
    block, current = {}, None
    for line in text.splitlines():
        if line.startswith("aggregation="):
            current = line.split("=", 1)[1]
        elif current == aggregation and "=" in line and not line.startswith(("image=", "#")):
            k, v = line.split("=", 1)
            block.setdefault(k, v)
    return float(block[key])


@pytest.mark.slow
def test_toy_learning(tmp_path, capsys):
    config = load_config(DESK_CONFIG)
    assert config.epochs <= 60
    train_dir, held_dir = tmp_path / "data" / "train", tmp_path / "data" / "heldout"
    assert main(["gen-data", "--n", "200", "--size", "64", "--seed", "7", "--out-dir", str(train_dir)]) == 0
    assert main(["gen-data", "--n", "40", "--size", "64", "--seed", "8", "--out-dir", str(held_dir)]) == 0
    cfg = tmp_path / "desk.cfg"
    ckpt = tmp_path / "cafct.ckpt"
    cfg.write_text(DESK_CONFIG.read_text() + f"\ntrain_dir = {train_dir}\ncheckpoint = {ckpt}\n")
    capsys.readouterr()
    start = time.perf_counter()
    assert main(["train", "--config", str(cfg)]) == 0
    minutes = (time.perf_counter() - start) / 60
    log = _parse_log(capsys.readouterr().out)
    assert len(log) == config.epochs
    train_dice = float(log[-1]["dice"])
    assert main(["eval", "--checkpoint", str(ckpt), "--data-dir", str(held_dir)]) == 0
    report = capsys.readouterr().out
    held_dice = _report_value(report, "global", "dice")
    held_mean = _report_value(report, "per_image_mean", "dice")
    passed = train_dice >= 0.85 and held_dice >= 0.80
    detail = (
        f"{config.epochs} epochs in {minutes:.1f} min on this machine, train dice {train_dice:.4f} (>= 0.85), "
        f"held-out global dice {held_dice:.4f} (>= 0.80), per-image mean {held_mean:.4f}"
    )
    assert record_acceptance("toy learning", passed, detail)


def test_determinism_and_persistence(tmp_path):
    base = dict(input_size=16, base_channels=4, se_ratio=2, aspp_rates=(1, 2, 3), batch_size=4, n_train=12, epochs=2)
    logs = []
    for run in range(2):
        lines = []
        result = train(TrainConfig(**base, checkpoint=str(tmp_path / f"{run}.ckpt")), emit=lines.append)
        logs.append(lines)
    same_logs = logs[0] == logs[1]

    model, _, _ = load_checkpoint(tmp_path / "1.ckpt")
    x = np.random.default_rng(5).random((4, 1, 16, 16))
    roundtrip = np.array_equal(predict_probabilities(result.model, x), predict_probabilities(model, x))

    frozen_cfg = TrainConfig(**dict(base, epochs=1, learning_rate=0.0), checkpoint="")
    frozen = CAFCT(frozen_cfg.model_config(), seed=frozen_cfg.seed)
    before = [p.data.copy() for p in frozen.parameters()]
    train(frozen_cfg, model=frozen, emit=lambda line: None)
    unchanged = all(np.array_equal(b, p.data) for b, p in zip(before, frozen.parameters()))

    detail = f"identical logs: {same_logs}, bit-identical round trip: {roundtrip}, lr=0 unchanged: {unchanged}"
    assert record_acceptance("determinism and persistence", same_logs and roundtrip and unchanged, detail)


def test_bce_anchor():
    rng = np.random.default_rng(3)
    target = (rng.random((2, 1, 8, 8)) > 0.5).astype(float)
    bce_err = abs(bce_loss(Tensor(np.zeros(target.shape)), target).item() - math.log(2))
    dice_val = abs(dice_loss(Tensor(np.where(target > 0, 40.0, -40.0)), target).item())
    passed = bce_err < 1e-12 and dice_val < 1e-9
    detail = f"|bce(0) - ln 2| = {bce_err:.1e} (< 1e-12), dice of hard perfect prediction = {dice_val:.1e} (< 1e-9)"
    assert record_acceptance("bce analytic anchor", passed, detail)
