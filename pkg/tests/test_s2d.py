"""Index-exactness and locality tests for the space-to-depth layers."""

import numpy as np
import pytest

from clerwkv import tensor as T
from clerwkv.errors import ContractViolation
from clerwkv.s2d import (pixel_shuffle, pixel_unshuffle, ps_ds_embed,
                         ps_us_embed, token_count)
from clerwkv.tensor import Tensor


class TestPixelUnshuffle:
    def test_definition_case_2x2(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1))
        out = pixel_unshuffle(x, 2)
        np.testing.assert_array_equal(out.data.reshape(4), [1, 2, 3, 4])

    def test_r1_is_identity(self):
        x = Tensor(np.arange(24.0).reshape(2, 3, 4))
        assert pixel_unshuffle(x, 1) is x

    def test_index_formula_oracle(self):
        # independent oracle: evaluate the index contract element by element
        rng = np.random.default_rng(0)
        H, W, C, r = 4, 4, 2, 2
        x = rng.standard_normal((H, W, C))
        out = pixel_unshuffle(Tensor(x), r).data
        for y in range(H // r):
            for xx in range(W // r):
                for c in range(C):
                    for dy in range(r):
                        for dx in range(r):
                            assert out[y, xx, c * r * r + dy * r + dx] == \
                                x[y * r + dy, xx * r + dx, c]

    def test_divisibility_violation(self):
        with pytest.raises(ContractViolation):
            pixel_unshuffle(Tensor(np.zeros((3, 4, 1))), 2)


class TestPixelShuffle:
    def test_bitwise_round_trip(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((8, 12, 3)).astype(np.float32)
        for r in (1, 2, 4):
            back = pixel_shuffle(pixel_unshuffle(Tensor(x), r), r)
            np.testing.assert_array_equal(back.data, x)

    def test_definition_case(self):
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 4))
        out = pixel_shuffle(x, 2)
        np.testing.assert_array_equal(out.data.reshape(2, 2), [[1, 2], [3, 4]])

    def test_mismatched_factor_raises(self):
        x = Tensor(np.zeros((2, 2, 6)))
        with pytest.raises(ContractViolation):
            pixel_shuffle(x, 2)  # 6 not divisible by 4

    def test_reverse_round_trip_bitwise(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 3, 18))
        back = pixel_unshuffle(pixel_shuffle(Tensor(x), 3), 3)
        np.testing.assert_array_equal(back.data, x)


class TestEmbeddings:
    def test_identity_projection_is_pure_unshuffle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 4, 2))
        proj = Tensor(np.eye(8))
        out = ps_ds_embed(Tensor(x), 2, proj)
        np.testing.assert_array_equal(out.data, pixel_unshuffle(Tensor(x), 2).data)

    def test_sequence_length_contract(self):
        assert token_count(32, 32, 4) == 64

    def test_jacobian_sparsity_one_token_per_patch(self):
        # the "scanning gap" remedy: each token depends on exactly one r x r patch
        rng = np.random.default_rng(4)
        H = W = 8
        r = 4
        x0 = rng.standard_normal((H, W, 1))
        proj = Tensor(rng.standard_normal((r * r, 3)))

        def tokens(x):
            return ps_ds_embed(Tensor(x), r, proj).data.reshape(-1, 3)

        base = tokens(x0)
        h = 1e-6
        for py in range(H):
            for px in range(W):
                bumped = x0.copy()
                bumped[py, px, 0] += h
                delta = np.abs(tokens(bumped) - base).sum(axis=1)
                expected_token = (py // r) * (W // r) + (px // r)
                changed = np.nonzero(delta > 1e-12)[0]
                assert list(changed) == [expected_token]

    def test_ps_us_inverts_ps_ds_with_inverse_projections(self):
        rng = np.random.default_rng(5)
        r, C = 2, 3
        x = rng.standard_normal((6, 6, C))
        fwd = rng.standard_normal((C * r * r, C * r * r))
        inv = np.linalg.inv(fwd)
        down = ps_ds_embed(Tensor(x), r, Tensor(fwd))
        up = ps_us_embed(down, r, Tensor(inv))
        np.testing.assert_allclose(up.data, x, atol=1e-9)

    def test_shape_contract(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((8, 8, 16)))
        proj = Tensor(rng.standard_normal((16, 3 * 16)))
        out = ps_us_embed(x, 4, proj)
        assert out.shape == (32, 32, 3)

    def test_zero_input_zero_output_without_bias(self):
        proj = Tensor(np.random.default_rng(7).standard_normal((4, 8)))
        out = ps_ds_embed(Tensor(np.zeros((4, 4, 1))), 2, proj)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_zero_input_bias_only_with_bias(self):
        rng = np.random.default_rng(8)
        proj = Tensor(rng.standard_normal((4, 8)))
        bias = Tensor(rng.standard_normal(8))
        out = ps_ds_embed(Tensor(np.zeros((4, 4, 1))), 2, proj, bias)
        np.testing.assert_allclose(out.data, np.broadcast_to(bias.data, (2, 2, 8)))

    def test_gradients_flow_through_embed(self):
        from clerwkv.gradcheck import grad_check
        from clerwkv.tensor import Parameter
        rng = np.random.default_rng(9)
        x = Parameter(rng.standard_normal((4, 4, 2)), "x")
        proj = Parameter(rng.standard_normal((8, 3)), "proj")
        wgt = rng.standard_normal((2, 2, 3))

        def fn():
            return T.reduce_sum(T.mul(ps_ds_embed(x, 2, proj), T.Tensor(wgt)))

        assert grad_check(fn, [x, proj], tolerance=1e-5).passed
