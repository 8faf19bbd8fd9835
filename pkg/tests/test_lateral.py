import numpy as np
import numpy.testing as npt
import pytest

from kssnet import lateral
from kssnet.gcn import grad_check
from kssnet.checks import lc_2d_check, lc_3d_check

import oracles


def zero_params(c, n, activation="tanh"):
    return lateral.LcParams(np.zeros((c, n)), np.zeros(c), activation)


class TestForward3d:
    def test_zero_embedding_zero_bias_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 2, 4, 5))
        params = lateral.init_lc_params(3, 7, rng)
        y = lateral.lc_forward_3d(x, np.zeros((7, 3)), params)
        npt.assert_array_equal(y, x)

    def test_shape_preserved_on_video_sized_map(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(64, 8, 14, 14))
        e = rng.normal(size=(157, 64))
        params = lateral.init_lc_params(64, 157, rng)
        assert lateral.lc_forward_3d(x, e, params).shape == (64, 8, 14, 14)

    def test_scalar_hand_case(self):
        params = lateral.LcParams(np.array([[3.0]]), np.array([0.5]))
        y = lateral.lc_forward_3d(
            np.array([[[[2.0]]]]), np.array([[0.0]]), params
        )
        npt.assert_allclose(y, [[[[2.5]]]], rtol=0, atol=1e-15)

    def test_channel_mismatch_rejected(self):
        params = zero_params(4, 6)
        with pytest.raises(ValueError, match="incompatible"):
            lateral.lc_forward_3d(np.zeros((4, 2, 3, 3)), np.zeros((6, 3)), params)

    def test_linear_in_x_structure(self):
        # with fixed sigma(E), the map x -> y is (W sigma(E) + I) x + b per location
        rng = np.random.default_rng(2)
        c, n = 3, 5
        x = rng.normal(size=(c, 1, 2, 2))
        e = rng.normal(size=(n, c))
        params = lateral.LcParams(rng.normal(size=(c, n)), rng.normal(size=c))
        y = lateral.lc_forward_3d(x, e, params)
        op = params.conv_weight @ np.tanh(e) + np.eye(c)
        expected = np.einsum("cd,dthw->cthw", op, x) + params.conv_bias[:, None, None, None]
        npt.assert_allclose(y, expected, rtol=0, atol=1e-12)


class TestForward2d:
    def test_zero_embedding_zero_bias_is_identity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 6, 4))
        params = lateral.init_lc_params(5, 3, rng)
        npt.assert_array_equal(lateral.lc_forward_2d(x, np.zeros((3, 5)), params), x)

    def test_image_sized_map_shape(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(256, 56, 56))
        e = rng.normal(size=(80, 256))
        params = lateral.init_lc_params(256, 80, rng)
        assert lateral.lc_forward_2d(x, e, params).shape == (256, 56, 56)

    def test_2d_equals_3d_with_singleton_time(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 6, 5))
        e = rng.normal(size=(3, 4))
        params = lateral.LcParams(rng.normal(size=(4, 3)), rng.normal(size=4), "sigmoid")
        y2 = lateral.lc_forward_2d(x, e, params)
        y3 = lateral.lc_forward_3d(x[:, None], e, params)
        npt.assert_array_equal(y3[:, 0], y2)

    def test_spatial_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        c, h, w = 3, 4, 5
        x = rng.normal(size=(c, h, w))
        e = rng.normal(size=(6, c))
        params = lateral.LcParams(rng.normal(size=(c, 6)), rng.normal(size=c))
        y = lateral.lc_forward_2d(x, e, params)
        perm = rng.permutation(h * w)
        x_perm = x.reshape(c, -1)[:, perm].reshape(c, h, w)
        y_perm = lateral.lc_forward_2d(x_perm, e, params)
        npt.assert_array_equal(y_perm.reshape(c, -1), y.reshape(c, -1)[:, perm])

    def test_label_permutation_invariance(self):
        rng = np.random.default_rng(7)
        c, n = 3, 5
        x = rng.normal(size=(c, 4, 4))
        e = rng.normal(size=(n, c))
        w = rng.normal(size=(c, n))
        params = lateral.LcParams(w, np.zeros(c))
        perm = rng.permutation(n)
        params_perm = lateral.LcParams(w[:, perm], np.zeros(c))
        y = lateral.lc_forward_2d(x, e, params)
        y_perm = lateral.lc_forward_2d(x, e[perm], params_perm)
        npt.assert_allclose(y_perm, y, rtol=0, atol=1e-12)

    def test_label_permutation_invariance_exact(self):
        # with at most one nonzero conv weight per row the label-dimension
        # contraction never rounds, so invariance must hold bitwise
        rng = np.random.default_rng(7)
        c, n = 3, 5
        x = oracles.dyadic(rng, (c, 4, 4))
        e = oracles.dyadic(rng, (n, c))
        w = np.zeros((c, n))
        for row in range(c):
            w[row, rng.integers(0, n)] = oracles.dyadic(rng, ())
        params = lateral.LcParams(w, np.zeros(c))
        perm = rng.permutation(n)
        params_perm = lateral.LcParams(w[:, perm], np.zeros(c))
        y = lateral.lc_forward_2d(x, e, params)
        y_perm = lateral.lc_forward_2d(x, e[perm], params_perm)
        npt.assert_array_equal(y_perm, y)


class TestBackward:
    def test_zero_upstream_gives_zero_gradients(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(3, 4, 4))
        e = rng.normal(size=(5, 3))
        params = lateral.LcParams(rng.normal(size=(3, 5)), rng.normal(size=3))
        grads = lateral.lc_backward(x, e, params, np.zeros_like(x))
        for g in grads:
            npt.assert_array_equal(g, np.zeros_like(g))

    def test_residual_branch_passes_upstream(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(3, 2, 2))
        e = rng.normal(size=(4, 3))
        upstream = rng.normal(size=x.shape)
        grads = lateral.lc_backward(x, e, zero_params(3, 4), upstream)
        npt.assert_array_equal(grads[0], upstream)

    def test_matches_finite_differences_2d(self):
        fn, params = lc_2d_check(seed=1)
        assert grad_check(fn, params) <= 1e-5

    def test_matches_finite_differences_3d(self):
        fn, params = lc_3d_check(seed=1)
        assert grad_check(fn, params) <= 1e-5

    def test_upstream_shape_checked(self):
        params = zero_params(2, 3)
        with pytest.raises(ValueError, match="upstream"):
            lateral.lc_backward(np.zeros((2, 2, 2)), np.zeros((3, 2)), params,
                                np.zeros((2, 2, 3)))

    def test_backward_against_hand_formulas(self):
        # y[:, p] = (W s + I) x[:, p] + b with s = tanh(E), so the four
        # gradients have closed forms; compare against the engine path.
        rng = np.random.default_rng(10)
        c, n, h, w = 3, 4, 2, 3
        x = rng.normal(size=(c, h, w))
        e = rng.normal(size=(n, c))
        wt = rng.normal(size=(c, n))
        b = rng.normal(size=c)
        params = lateral.LcParams(wt, b)
        up = rng.normal(size=(c, h, w))
        gx, ge, gw, gb = lateral.lc_backward(x, e, params, up)

        xf = x.reshape(c, -1)
        uf = up.reshape(c, -1)
        s = np.tanh(e)  # (n, c)
        m = xf.T @ s.T  # (hw, n)
        npt.assert_allclose(gx, ((wt @ s + np.eye(c)).T @ uf).reshape(x.shape),
                            rtol=0, atol=1e-12)
        npt.assert_allclose(gw, uf @ m, rtol=0, atol=1e-12)
        npt.assert_allclose(gb, uf.sum(axis=1), rtol=0, atol=1e-12)
        npt.assert_allclose(ge, ((wt.T @ uf) @ xf.T) * (1 - s * s), rtol=0, atol=1e-12)


class TestParams:
    def test_bad_activation_rejected(self):
        with pytest.raises(ValueError, match="activation"):
            lateral.LcParams(np.zeros((2, 3)), np.zeros(2), "relu")

    def test_bias_shape_checked(self):
        with pytest.raises(ValueError, match="conv_bias"):
            lateral.LcParams(np.zeros((2, 3)), np.zeros(3))
