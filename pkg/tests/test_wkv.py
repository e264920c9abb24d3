"""Oracle-equivalence, property and gradient tests for the Bi-WKV kernel."""

import numpy as np
import pytest

from clerwkv import tensor as T
from clerwkv.errors import ContractViolation
from clerwkv.gradcheck import grad_check, rel_err
from clerwkv.tensor import Parameter
from clerwkv.wkv import (WkvParams, benchmark, biwkv, biwkv_backward,
                         biwkv_naive, biwkv_scan, default_decay,
                         softplus_inverse)


def rand_kv(rng, B, Tn, C):
    return rng.standard_normal((B, Tn, C)), rng.standard_normal((B, Tn, C))


def rand_params(rng, C):
    return WkvParams(w=rng.uniform(0.0, 2.0, C), u=rng.standard_normal(C))


class TestNaiveDefinition:
    def test_single_token_returns_value(self):
        rng = np.random.default_rng(0)
        k, v = rand_kv(rng, 2, 1, 3)
        out = biwkv_naive(k, v, rand_params(rng, 3))
        np.testing.assert_allclose(out, v, rtol=1e-12)

    def test_two_tokens_uniform_weights(self):
        k = np.zeros((1, 2, 1))
        v = np.array([[[1.0], [3.0]]])
        out = biwkv_naive(k, v, WkvParams(w=np.zeros(1), u=np.zeros(1)))
        np.testing.assert_allclose(out, 2.0, rtol=1e-12)

    def test_two_tokens_self_bonus_hand_case(self):
        # u = ln 3: wkv_0 = (3 v0 + v1)/4, wkv_1 = (v0 + 3 v1)/4
        k = np.zeros((1, 2, 1))
        v = np.array([[[2.0], [-1.0]]])
        out = biwkv_naive(k, v, WkvParams(w=np.zeros(1), u=np.array([np.log(3.0)])))
        np.testing.assert_allclose(out[0, :, 0], [(3 * 2 - 1) / 4, (2 - 3) / 4], rtol=1e-12)


class TestScanEquivalence:
    @pytest.mark.parametrize("Tn", [1, 2, 3, 7, 64, 256])
    @pytest.mark.parametrize("C", [1, 4, 16])
    def test_matches_naive(self, Tn, C):
        for seed in range(20):
            rng = np.random.default_rng(1000 * Tn + 10 * C + seed)
            k, v = rand_kv(rng, 1, Tn, C)
            params = rand_params(rng, C)
            ref = biwkv_naive(k, v, params)
            got = biwkv_scan(k, v, params)
            err = np.abs(got - ref) / np.maximum(np.abs(ref), 1e-8)
            assert err.max() < 1e-5

    def test_constant_value_fixed_point(self):
        rng = np.random.default_rng(9)
        k = rng.standard_normal((1, 33, 4))
        v = np.full((1, 33, 4), 0.73)
        out = biwkv_scan(k, v, rand_params(rng, 4))
        np.testing.assert_allclose(out, 0.73, rtol=1e-10)

    def test_stability_extreme_keys(self):
        rng = np.random.default_rng(10)
        k = rng.choice([-80.0, 80.0], size=(1, 32, 2)) + rng.standard_normal((1, 32, 2))
        v = rng.standard_normal((1, 32, 2))
        params = rand_params(rng, 2)
        got = biwkv_scan(k, v, params)
        assert np.all(np.isfinite(got))
        ref = biwkv_naive(k, v, params)
        np.testing.assert_allclose(got, ref, rtol=1e-8, atol=1e-10)


class TestProperties:
    def test_convexity_bounds(self):
        rng = np.random.default_rng(12)
        k, v = rand_kv(rng, 2, 21, 5)
        out = biwkv_scan(k, v, rand_params(rng, 5))
        lo = v.min(axis=1, keepdims=True)
        hi = v.max(axis=1, keepdims=True)
        assert np.all(out >= lo - 1e-10) and np.all(out <= hi + 1e-10)

    def test_permutation_symmetry_at_zero_decay(self):
        rng = np.random.default_rng(13)
        Tn = 9
        k, v = rand_kv(rng, 1, Tn, 2)
        params = WkvParams(w=np.zeros(2), u=np.zeros(2))
        base = biwkv_scan(k, v, params)
        t = 4
        others = [i for i in range(Tn) if i != t]
        perm = list(rng.permutation(others))
        k2, v2 = k.copy(), v.copy()
        k2[0, others] = k[0, perm]
        v2[0, others] = v[0, perm]
        out = biwkv_scan(k2, v2, params)
        np.testing.assert_allclose(out[0, t], base[0, t], rtol=1e-10)

    def test_monotone_locality_one_hot_impulse(self):
        # with a self-favoring bonus the response peaks at the impulse and
        # decays monotonically outward on each side
        Tn, p = 16, 5
        k = np.zeros((1, Tn, 1))
        v = np.zeros((1, Tn, 1))
        v[0, p, 0] = 1.0
        out = biwkv_scan(k, v, WkvParams(w=np.array([4.0]), u=np.array([1.0])))[0, :, 0]
        right = np.abs(out[p:])
        left = np.abs(out[:p + 1][::-1])
        assert np.all(np.diff(right) <= 1e-12)
        assert np.all(np.diff(left) <= 1e-12)

    def test_monotone_locality_tail_at_zero_bonus(self):
        # at u = 0 the self position holds no advantage over distance-1
        # neighbors; the decay tail (distance >= 1) is still monotone per side
        Tn, p = 16, 5
        k = np.zeros((1, Tn, 1))
        v = np.zeros((1, Tn, 1))
        v[0, p, 0] = 1.0
        out = biwkv_scan(k, v, WkvParams(w=np.array([2.0]), u=np.zeros(1)))[0, :, 0]
        assert np.all(np.diff(np.abs(out[p + 1:])) <= 1e-12)
        assert np.all(np.diff(np.abs(out[:p][::-1])) <= 1e-12)

    def test_rejects_negative_decay(self):
        with pytest.raises(ContractViolation):
            WkvParams(w=np.array([-0.1]), u=np.zeros(1))


class TestBackward:
    def test_zero_upstream_zero_gradients(self):
        rng = np.random.default_rng(14)
        k, v = rand_kv(rng, 1, 6, 3)
        params = rand_params(rng, 3)
        dk, dv, dw, du = biwkv_backward(k, v, params, np.zeros_like(k))
        for arr in (dk, dv, dw, du):
            np.testing.assert_array_equal(arr, 0.0)

    def test_value_jacobian_rows_sum_to_one(self):
        # weights are normalized per output: sum_i d wkv_t / d v_i = 1
        rng = np.random.default_rng(15)
        k, v = rand_kv(rng, 1, 11, 3)
        params = rand_params(rng, 3)
        _, dv, _, _ = biwkv_backward(k, v, params, np.ones_like(k))
        np.testing.assert_allclose(dv.sum(axis=1), 11.0, rtol=1e-9)

    def test_gradients_match_finite_differences_on_naive(self):
        # independent oracle: numeric differentiation of the O(T^2) definition
        rng = np.random.default_rng(16)
        Tn, C = 8, 4
        k, v = rand_kv(rng, 1, Tn, C)
        params = rand_params(rng, C)
        g = rng.standard_normal((1, Tn, C))
        dk, dv, dw, du = biwkv_backward(k, v, params, g)
        h = 1e-5

        def loss(kk, vv, ww, uu):
            return float((biwkv_naive(kk, vv, WkvParams(w=ww, u=uu)) * g).sum())

        worst = 0.0
        for arr, grad in ((k, dk), (v, dv)):
            flat, gflat = arr.reshape(-1), np.asarray(grad).reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = loss(k, v, params.w, params.u)
                flat[i] = orig - h
                fm = loss(k, v, params.w, params.u)
                flat[i] = orig
                worst = max(worst, rel_err(gflat[i], (fp - fm) / (2 * h)))
        for arr, grad in ((params.w, dw), (params.u, du)):
            for i in range(arr.size):
                orig = arr[i]
                arr[i] = orig + h
                fp = loss(k, v, params.w, params.u)
                arr[i] = orig - h
                fm = loss(k, v, params.w, params.u)
                arr[i] = orig
                worst = max(worst, rel_err(grad[i], (fp - fm) / (2 * h)))
        assert worst < 1e-4, worst

    def test_tensor_op_grad_check_with_softplus_decay(self):
        rng = np.random.default_rng(17)
        Tn, C = 8, 4
        kp = Parameter(rng.standard_normal((Tn, C)), "k")
        vp = Parameter(rng.standard_normal((Tn, C)), "v")
        wraw = Parameter(softplus_inverse(default_decay(C)), "w_raw")
        up = Parameter(rng.standard_normal(C) * 0.3, "u")
        proj = rng.standard_normal((Tn, C))

        def fn():
            return T.reduce_sum(T.mul(biwkv(kp, vp, T.softplus(wraw), up), T.Tensor(proj)))

        report = grad_check(fn, [kp, vp, wraw, up], tolerance=1e-4)
        assert report.passed, str(report)


def test_benchmark_smoke():
    report = benchmark(tokens=256, channels=8, repeats=2)
    assert report.speedup > 1.0
    assert "T=256" in report.text() and "speedup" in report.text()
