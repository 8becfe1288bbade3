import numpy as np
import pytest

from conftest import warm_up
from cafct import CAFCT, EncoderConfig, ModelConfig
from cafct.gates_decoder import AttentionGate, inter_channels_for, parameter_report
from cafct.numerics.tensor import Tensor


def saturated_gate(rng, bias):
    gate = AttentionGate(4, 6, inter_channels_for(4), rng)
    gate.psi.weight.data[...] = 0.0
    gate.psi.bias.data[...] = bias
    return gate


class TestAttentionGate:
    def test_inter_channels_rule(self):
        assert [inter_channels_for(c) for c in (1, 2, 5, 64)] == [1, 1, 2, 32]

    @pytest.mark.parametrize("bias,expect_pass", [(20.0, True), (-20.0, False)])
    def test_saturation(self, rng, bias, expect_pass):
        gate = saturated_gate(rng, bias)
        x = rng.standard_normal((2, 4, 8, 8))
        out = gate(Tensor(x), Tensor(rng.standard_normal((2, 6, 4, 4)))).data
        target = x if expect_pass else np.zeros_like(x)
        np.testing.assert_allclose(out, target, atol=1e-6, rtol=0)

    @pytest.mark.parametrize("gate_size", [8, 4, 2])
    def test_coefficient_map_shape_and_range(self, rng, gate_size):
        gate = AttentionGate(4, 6, 2, rng)
        a = gate.coefficients(
            Tensor(rng.standard_normal((3, 4, 8, 8)) * 4), Tensor(rng.standard_normal((3, 6, gate_size, gate_size)) * 4)
        ).data
        assert a.shape == (3, 1, 8, 8)
        assert np.all((a > 0) & (a < 1))

    def test_batch_mismatch_rejected(self, rng):
        gate = AttentionGate(4, 6, 2, rng)
        with pytest.raises(ValueError):
            gate(Tensor(np.zeros((2, 4, 8, 8))), Tensor(np.zeros((1, 6, 4, 4))))

    def test_finer_gate_rejected(self, rng):
        gate = AttentionGate(4, 6, 2, rng)
        with pytest.raises(ValueError):
            gate(Tensor(np.zeros((1, 4, 4, 4))), Tensor(np.zeros((1, 6, 8, 8))))


class TestModel:
    def test_logits_shape_and_finite(self, tiny_model, rng):
        out = tiny_model(Tensor(rng.random((2, 1, 16, 16))))
        assert out.shape == (2, 1, 16, 16)
        assert np.all(np.isfinite(out.data))

    def test_default_model_shape_and_size(self):
        model = CAFCT(ModelConfig(), seed=0)
        out = model(Tensor(np.random.default_rng(0).random((1, 1, 64, 64))))
        assert out.shape == (1, 1, 64, 64)
        report = parameter_report(model)
        assert report["total"] == model.num_parameters() < 2_000_000
        assert set(report) == {"cnn", "transformer", "fusion", "aspp", "decoder", "total"}

    def test_size_mismatch_rejected(self, tiny_model):
        with pytest.raises(ValueError):
            tiny_model(Tensor(np.zeros((1, 1, 32, 32))))

    def test_eval_determinism(self, tiny_model, rng):
        warm_up(tiny_model, rng)
        tiny_model.eval()
        x = Tensor(rng.random((2, 1, 16, 16)))
        np.testing.assert_array_equal(tiny_model(x).data, tiny_model(x).data)

    def test_every_parameter_receives_gradient(self, tiny_model, rng):
        # eval-mode batch norm: in train mode a shift feeding a batch norm is
        # cancelled exactly, leaving only round-off gradient on such biases
        warm_up(tiny_model, rng)
        tiny_model.eval()
        tiny_model(Tensor(rng.random((2, 1, 16, 16)))).sum().backward()
        dead = [n for n, p in tiny_model.named_parameters() if np.linalg.norm(p.grad) <= 1e-8]
        assert dead == []

    def test_decoder_details(self, tiny_model, rng):
        details = {}
        tiny_model(Tensor(rng.random((2, 1, 16, 16))), details)
        coeffs = details["gate_coefficients"]
        assert [c.shape for c in coeffs] == [(2, 1, 2, 2), (2, 1, 4, 4), (2, 1, 8, 8)]
        assert details["context"].shape == (2, 16, 1, 1)

    def test_same_seed_same_weights(self, tiny_encoder):
        cfg = ModelConfig(encoder=tiny_encoder, se_ratio=2)
        a, b = CAFCT(cfg, seed=5), CAFCT(cfg, seed=5)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_se_ratio_must_divide_widths(self):
        with pytest.raises(ValueError):
            CAFCT(ModelConfig(encoder=EncoderConfig(input_size=16, base_channels=6), se_ratio=4))
