import math

import numpy as np
import pytest

from embow import numerics
from embow.errors import DegenerateInputError, UsageError


class TestMatmul:
    def test_identity(self):
        b = np.array([[3.0, 4.0], [5.0, 6.0]], dtype=np.float32)
        out = numerics.matmul(np.eye(2, dtype=np.float32), b)
        np.testing.assert_array_equal(out, b)

    def test_zero(self):
        b = np.random.default_rng(0).normal(size=(2, 3)).astype(np.float32)
        out = numerics.matmul(np.zeros((2, 2), dtype=np.float32), b)
        np.testing.assert_array_equal(out, np.zeros((2, 3), dtype=np.float32))

    def test_hand_case(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        b = np.array([[5.0], [6.0]], dtype=np.float32)
        np.testing.assert_allclose(numerics.matmul(a, b), [[17.0], [39.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(UsageError):
            numerics.matmul(np.ones((2, 3), dtype=np.float32), np.ones((2, 3), dtype=np.float32))

    def test_associativity(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            a = rng.normal(size=(4, 5)).astype(np.float32)
            b = rng.normal(size=(5, 6)).astype(np.float32)
            c = rng.normal(size=(6, 3)).astype(np.float32)
            left = numerics.matmul(numerics.matmul(a, b), c)
            right = numerics.matmul(a, numerics.matmul(b, c))
            np.testing.assert_allclose(left, right, rtol=1e-4)


class TestLayerNorm:
    def test_constant_input_is_zero(self):
        x = np.full(6, 3.25, dtype=np.float32)
        ones = np.ones(6, dtype=np.float32)
        zeros = np.zeros(6, dtype=np.float32)
        out, _ = numerics.layer_norm(x, ones, zeros)
        np.testing.assert_array_equal(out, zeros)

    def test_symmetric_pair(self):
        eps = 1e-5
        out, _ = numerics.layer_norm(
            np.array([1.0, -1.0], dtype=np.float64),
            np.ones(2), np.zeros(2), eps,
        )
        expected = 1.0 / math.sqrt(1.0 + eps)
        np.testing.assert_allclose(out, [expected, -expected], rtol=1e-12)

    def test_scalar_arithmetic_oracle(self):
        # independent elementwise recomputation with plain Python floats
        x = [1.0, 2.0, 3.0]
        eps = 1e-5
        mean = sum(x) / 3
        var = sum((v - mean) ** 2 for v in x) / 3  # population variance
        expected = [2.0 * (v - mean) / math.sqrt(var + eps) + 1.0 for v in x]
        out, _ = numerics.layer_norm(
            np.array(x), np.array([2.0, 2.0, 2.0]), np.array([1.0, 1.0, 1.0]), eps
        )
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_standardization_invariant(self):
        rng = np.random.default_rng(3)
        for d in (8, 16, 64):
            x = rng.normal(size=d).astype(np.float32) * 3.0 + 1.0
            out, _ = numerics.layer_norm(x, np.ones(d, np.float32), np.zeros(d, np.float32))
            out64 = out.astype(np.float64)
            assert abs(out64.mean()) <= 1e-6
            assert abs(out64.var() - 1.0) <= 1e-3

    def test_backward_zero_cotangent(self):
        x = np.random.default_rng(0).normal(size=5)
        _, cache = numerics.layer_norm(x, np.ones(5), np.zeros(5))
        d_x, d_gamma, d_beta = numerics.layer_norm_backward(cache, np.zeros(5))
        assert not d_x.any() and not d_gamma.any() and not d_beta.any()

    def test_backward_d_beta_is_cotangent(self):
        rng = np.random.default_rng(1)
        x, d_out = rng.normal(size=7), rng.normal(size=7)
        _, cache = numerics.layer_norm(x, rng.normal(size=7), rng.normal(size=7))
        _, _, d_beta = numerics.layer_norm_backward(cache, d_out)
        np.testing.assert_allclose(d_beta, d_out, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_backward_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        d = 6
        x = rng.normal(size=d)
        gamma = rng.normal(size=d) + 1.5
        beta = rng.normal(size=d)
        w = rng.normal(size=d)  # random linear functional makes the output scalar

        def f_of(which):
            def f(theta):
                args = {"x": x, "gamma": gamma, "beta": beta}
                args[which] = theta
                out, _ = numerics.layer_norm(args["x"], args["gamma"], args["beta"])
                return float(out @ w)
            return f

        _, cache = numerics.layer_norm(x, gamma, beta)
        d_x, d_gamma, d_beta = numerics.layer_norm_backward(cache, w)
        for which, analytic in (("x", d_x), ("gamma", d_gamma), ("beta", d_beta)):
            fd = numerics.finite_diff_grad(f_of(which), {"x": x, "gamma": gamma, "beta": beta}[which])
            assert numerics.block_rel_error(analytic, fd) <= 1e-4

    def test_eps_must_be_positive(self):
        with pytest.raises(UsageError):
            numerics.layer_norm(np.ones(3), np.ones(3), np.zeros(3), eps=0.0)


class TestRelu:
    def test_basic(self):
        out, mask = numerics.relu(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out, [0.0, 0.0, 2.0])
        np.testing.assert_array_equal(mask, [False, False, True])

    def test_all_negative(self):
        x = -np.abs(np.random.default_rng(0).normal(size=5)) - 0.1
        out, mask = numerics.relu(x)
        assert not out.any()
        assert not numerics.relu_backward(mask, np.ones(5)).any()

    def test_backward_matches_finite_differences_away_from_kinks(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=20)
        x = x[np.abs(x) > 1e-3][:10]  # exclude kink neighborhoods
        w = rng.normal(size=x.size)

        def f(theta):
            out, _ = numerics.relu(theta)
            return float(out @ w)

        _, mask = numerics.relu(x)
        analytic = numerics.relu_backward(mask, w)
        fd = numerics.finite_diff_grad(f, x, h=1e-4)
        assert numerics.block_rel_error(analytic, fd) <= 1e-4


class TestL2Normalize:
    def test_three_four_five(self):
        out, _ = numerics.l2_normalize(np.array([3.0, 4.0]))
        np.testing.assert_allclose(out, [0.6, 0.8], rtol=1e-6)

    def test_unit_vector_unchanged(self):
        v = np.array([1.0, 0.0, 0.0])
        out, _ = numerics.l2_normalize(v)
        np.testing.assert_allclose(out, v, atol=1e-12)
        assert abs(np.linalg.norm(out) - 1.0) <= 1e-6

    def test_degenerate_raises(self):
        with pytest.raises(DegenerateInputError):
            numerics.l2_normalize(np.zeros(4))

    @pytest.mark.parametrize("seed", range(4))
    def test_backward_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        v = rng.normal(size=6) + 0.5
        w = rng.normal(size=6)

        def f(theta):
            out, _ = numerics.l2_normalize(theta)
            return float(out @ w)

        _, cache = numerics.l2_normalize(v)
        analytic = numerics.l2_normalize_backward(cache, w)
        fd = numerics.finite_diff_grad(f, v)
        assert numerics.block_rel_error(analytic, fd) <= 1e-4


class TestCosineLogits:
    def test_self_similarity(self):
        rng = np.random.default_rng(0)
        e = rng.normal(size=(4, 8))
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        logits = numerics.cosine_logits(e[2:3], e)
        assert logits[0, 2] == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal_pair(self):
        z = np.array([[1.0, 0.0]])
        e = np.array([[0.0, 1.0]])
        assert numerics.cosine_logits(z, e)[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_hand_case(self):
        z = np.array([[1.0, 0.0]])
        e = np.array([[1.0, 0.0], [1.0, 1.0]])
        logits = numerics.cosine_logits(z, e)
        np.testing.assert_allclose(logits, [[1.0, 1.0 / math.sqrt(2.0)]], rtol=1e-12)

    def test_bounded(self):
        rng = np.random.default_rng(5)
        z = rng.normal(size=(10, 16)).astype(np.float32)
        e = rng.normal(size=(30, 16)).astype(np.float32)
        logits = numerics.cosine_logits(z, e)
        assert logits.max() <= 1.0 + 1e-5 and logits.min() >= -1.0 - 1e-5

    def test_degenerate_row_named(self):
        z = np.ones((3, 4))
        z[1] = 0.0
        with pytest.raises(DegenerateInputError, match="row 1"):
            numerics.cosine_logits(z, np.ones((2, 4)))


class TestFiniteDiff:
    def test_quadratic(self):
        grad = numerics.finite_diff_grad(lambda t: float(t[0] ** 2), np.array([3.0]))
        assert grad[0] == pytest.approx(6.0, abs=1e-5)

    def test_constant(self):
        grad = numerics.finite_diff_grad(lambda t: 1.25, np.ones(4))
        np.testing.assert_array_equal(grad, np.zeros(4))

    def test_rejects_bad_step(self):
        with pytest.raises(UsageError):
            numerics.finite_diff_grad(lambda t: 0.0, np.ones(2), h=0.0)
