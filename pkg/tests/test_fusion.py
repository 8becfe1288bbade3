import numpy as np
import pytest

from cafct.encoders import FeaturePyramid
from cafct.fusion import AFF, PyramidFusion, SEBlock
from cafct.numerics.tensor import Tensor


class TestSEBlock:
    def test_zero_expand_gives_half(self, rng):
        block = SEBlock(8, 4, rng)
        block.expand.weight.data[...] = 0.0
        block.expand.bias.data[...] = 0.0
        x = rng.standard_normal((2, 8, 5, 5))
        out = block(Tensor(x))
        np.testing.assert_allclose(out.data, 0.5 * x)

    def test_weights_in_open_unit_interval(self, rng):
        block = SEBlock(8, 2, rng)
        w = block.channel_weights(Tensor(rng.standard_normal((3, 8, 4, 4)) * 5)).data
        assert w.shape == (3, 8)
        assert np.all((w > 0) & (w < 1))

    def test_divisibility_rejected(self, rng):
        with pytest.raises(ValueError):
            SEBlock(6, 4, rng)

    def test_channel_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            SEBlock(8, 2, rng)(Tensor(np.zeros((1, 4, 2, 2))))


class TestAFF:
    def test_shape_preserved(self, rng):
        module = AFF(32, 4, rng)
        a, b = (Tensor(rng.standard_normal((1, 32, 16, 16))) for _ in range(2))
        assert module(a, b).shape == (1, 32, 16, 16)

    def test_zero_inputs_stay_finite(self, rng):
        module = AFF(8, 4, rng)
        out = module(Tensor(np.zeros((2, 8, 4, 4))), Tensor(np.zeros((2, 8, 4, 4))))
        assert np.all(np.isfinite(out.data))
        # conv of zero is zero and BN then ReLU(beta = 0) keeps it there
        np.testing.assert_array_equal(out.data, 0.0)

    def test_branch_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            AFF(8, 4, rng)(Tensor(np.zeros((1, 8, 4, 4))), Tensor(np.zeros((1, 8, 2, 2))))

    @pytest.mark.parametrize("num_se", [1, 2])
    def test_stacked_se_blocks(self, rng, num_se):
        module = AFF(8, 4, rng, num_se=num_se)
        assert len(module.se) == num_se


class TestPyramidFusion:
    def test_per_level_shapes(self, rng):
        shapes = [(2, 4, 8, 8), (2, 8, 4, 4), (2, 16, 2, 2), (2, 16, 1, 1)]
        fusion = PyramidFusion((4, 8, 16, 16), 2, rng)
        p1 = FeaturePyramid([Tensor(rng.standard_normal(s)) for s in shapes])
        p2 = FeaturePyramid([Tensor(rng.standard_normal(s)) for s in shapes])
        assert fusion(p1, p2).shapes == shapes

    def test_level_count_mismatch_rejected(self, rng):
        fusion = PyramidFusion((4, 8, 16, 16), 2, rng)
        p = FeaturePyramid([Tensor(np.zeros((1, 4, 8, 8)))])
        with pytest.raises(ValueError):
            fusion(p, p)
