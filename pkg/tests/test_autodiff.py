import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from condenhance import autodiff as ad
from condenhance.autodiff import Tensor

from conftest import leaf, numeric_grad


def conv2d_loops(x, w, b, stride, pad):
    """Direct-summation convolution oracle."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for ni in range(n):
        for oi in range(o):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[ni, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[ni, oi, i, j] = np.sum(patch * w[oi]) + b[oi]
    return out


def _check_grads(fn, inputs, tol=1e-6):
    out = fn(*inputs)
    probe = np.random.default_rng(7).standard_normal(out.shape)
    (out * Tensor(probe)).sum().backward()

    def value():
        with ad.no_grad():
            return float(np.sum(fn(*inputs).data * probe))

    for t in inputs:
        num = numeric_grad(value, t.data)
        np.testing.assert_allclose(t.grad, num, rtol=tol, atol=tol)


class TestElementwise:
    def test_arithmetic_gradients(self, rng):
        a, b = leaf(rng, 3, 4), leaf(rng, 3, 4, lo=0.5, hi=2.0)
        _check_grads(lambda a, b: (a * b - a / b + a ** 2.0) * 3.0 - (-b), [a, b])

    def test_broadcast_gradients_are_reduced(self, rng):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 3, 1)
        _check_grads(lambda a, b: a * b + b, [a, b])
        assert b.grad.shape == (3, 1)

    def test_unary_gradients(self, rng):
        x = leaf(rng, 5, lo=0.2, hi=2.0)
        _check_grads(lambda x: ad.log(x) + ad.sqrt(x) + ad.sigmoid(x) + ad.tabs(x - 1.0), [x])

    def test_leaky_relu_values(self):
        x = Tensor(np.array([-2.0, 0.0, 3.0]))
        np.testing.assert_array_equal(ad.leaky_relu(x, 0.2).data, [-0.4, 0.0, 3.0])

    def test_sigmoid_is_stable_for_large_inputs(self):
        out = ad.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
        np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])

    def test_clip_blocks_gradient_outside_range(self):
        x = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
        ad.clip(x, 0.0, 1.0).sum().backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_reductions_and_indexing(self, rng):
        x = leaf(rng, 2, 3, 4)
        _check_grads(lambda x: x.mean(axis=(1, 2), keepdims=True) * x[:, 1:, ::2].sum(), [x])

    def test_concat_and_reshape(self, rng):
        a, b = leaf(rng, 2, 3), leaf(rng, 1, 3)
        _check_grads(lambda a, b: ad.concat([a, b], axis=0).reshape(9) * 2.0, [a, b])


class TestGraph:
    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        y = x * x
        (y + y).backward()
        assert x.grad == pytest.approx(12.0)

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert ad.grad_enabled()

    def test_deep_chain_does_not_recurse(self):
        x = Tensor(np.array(1.0), requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 0.0
        y.backward()
        assert x.grad == 1.0


class TestConv:
    @pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (1, 0), (2, 0)])
    def test_forward_matches_direct_summation(self, rng, stride, pad):
        x = rng.standard_normal((2, 3, 7, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
        np.testing.assert_allclose(got, conv2d_loops(x, w, b, stride, pad), atol=1e-12)

    def test_gradients(self, rng):
        x, w, b = leaf(rng, 1, 2, 5, 4), leaf(rng, 3, 2, 3, 3), leaf(rng, 3)
        _check_grads(lambda x, w, b: ad.conv2d(x, w, b, 2, 1), [x, w, b])

    def test_channel_mismatch_names_shapes(self, rng):
        with pytest.raises(ValueError, match=r"\(1, 2, 4, 4\).*\(3, 5, 3, 3\)"):
            ad.conv2d(leaf(rng, 1, 2, 4, 4), leaf(rng, 3, 5, 3, 3))

    def test_one_by_one_kernel_is_channel_mixing(self, rng):
        x = rng.standard_normal((1, 3, 2, 2))
        w = rng.standard_normal((2, 3, 1, 1))
        got = ad.conv2d(Tensor(x), Tensor(w), None, 1, 0).data
        np.testing.assert_allclose(got, np.einsum("oc,nchw->nohw", w[:, :, 0, 0], x))


class TestNormAndResampling:
    def test_instance_norm_statistics(self, rng):
        out = ad.instance_norm(Tensor(rng.uniform(0, 5, (2, 3, 6, 6))), 1e-5).data
        np.testing.assert_allclose(out.mean(axis=(2, 3)), 0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=(2, 3)), 1, atol=1e-5)

    def test_instance_norm_gradient(self, rng):
        x = leaf(rng, 2, 2, 3, 3)
        _check_grads(lambda x: ad.instance_norm(x, 1e-5), [x])

    def test_global_avg_pool(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        np.testing.assert_allclose(ad.global_avg_pool(Tensor(x)).data, x.mean(axis=(2, 3)))

    def test_fully_connected_vector_and_batch(self, rng):
        w, b = rng.standard_normal((4, 3)), rng.standard_normal(4)
        v = rng.standard_normal(3)
        np.testing.assert_allclose(ad.fully_connected(Tensor(v), Tensor(w), Tensor(b)).data, w @ v + b)
        x, wt, bt = leaf(rng, 2, 3), leaf(rng, 4, 3), leaf(rng, 4)
        _check_grads(ad.fully_connected, [x, wt, bt])

    def test_upsample_nearest(self):
        x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
        out = ad.upsample_nearest(x, 2).data[0, 0]
        np.testing.assert_array_equal(out, [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])

    def test_upsample_gradient_sums_blocks(self, rng):
        x = leaf(rng, 1, 2, 2, 3)
        ad.upsample_nearest(x, 2).sum().backward()
        np.testing.assert_array_equal(x.grad, np.full(x.shape, 4.0))

    def test_concat_channels_spatial_mismatch(self, rng):
        with pytest.raises(ValueError):
            ad.concat_channels(leaf(rng, 1, 2, 4, 4), leaf(rng, 1, 2, 4, 2))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 4)),
              elements=st.floats(-10, 10)))
def test_sum_and_mean_gradients_are_constant(values):
    x = Tensor(values.copy(), requires_grad=True)
    (x.sum() + x.mean()).backward()
    np.testing.assert_allclose(x.grad, np.full(values.shape, 1.0 + 1.0 / values.size))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-5, 5)),
       arrays(np.float64, (2, 3), elements=st.floats(-5, 5)))
def test_product_rule(a, b):
    ta, tb = Tensor(a.copy(), requires_grad=True), Tensor(b.copy(), requires_grad=True)
    (ta * tb).sum().backward()
    np.testing.assert_array_equal(ta.grad, b)
    np.testing.assert_array_equal(tb.grad, a)


class TestWorkedExamples:
    def test_conv_examples(self):
        ones = Tensor(np.ones((1, 1, 3, 3)))
        out = ad.conv2d(ones, Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.zeros(1)), 1, 0)
        np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))
        seq = Tensor(np.arange(1.0, 10.0).reshape(1, 1, 3, 3))
        assert ad.conv2d(seq, Tensor(np.ones((1, 1, 3, 3))), None, 1, 0).data.item() == 45.0
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 5, 5)))
        out = ad.conv2d(x, Tensor(np.zeros((4, 3, 3, 3))), Tensor(np.array([1.0, 2.0, 3.0, 4.0])), 1, 1)
        np.testing.assert_array_equal(out.data, np.broadcast_to(np.arange(1.0, 5.0)[None, :, None, None], out.shape))

    def test_instance_norm_examples(self):
        const = ad.instance_norm(Tensor(np.full((1, 1, 2, 2), 3.0)), 1e-5).data
        np.testing.assert_array_equal(const, np.zeros((1, 1, 2, 2)))
        two = ad.instance_norm(Tensor(np.array([[[[0.0, 1.0], [0.0, 1.0]]]])), 1e-12).data
        np.testing.assert_allclose(two, [[[[-1, 1], [-1, 1]]]], atol=1e-9)

    def test_pool_examples(self):
        assert ad.global_avg_pool(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))).data.item() == 2.5
        x = Tensor(np.zeros((1, 2, 3, 4)), requires_grad=True)
        ad.global_avg_pool(x).sum().backward()
        np.testing.assert_allclose(x.grad, np.full(x.shape, 1 / 12))

    def test_fully_connected_examples(self):
        out = ad.fully_connected(Tensor(np.array([2.0, 3.0])), Tensor(np.array([[1.0, 1.0]])), Tensor(np.array([1.0])))
        np.testing.assert_array_equal(out.data, [6.0])
        x = np.array([[0.5, -1.5, 2.0]])
        np.testing.assert_array_equal(ad.fully_connected(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x)
        b = np.array([0.1, 0.2])
        np.testing.assert_array_equal(ad.fully_connected(Tensor(x), Tensor(np.zeros((2, 3))), Tensor(b)).data, [b])
        with pytest.raises(ValueError):
            ad.fully_connected(Tensor(x), Tensor(np.zeros((2, 4))))

    def test_leaky_relu_examples(self):
        out = ad.leaky_relu(Tensor(np.array([1.0, -1.0, 0.0])), 0.2).data
        np.testing.assert_array_equal(out, [1.0, -0.2, 0.0])

    def test_upsample_examples(self):
        v = Tensor(np.full((1, 1, 1, 1), 0.3))
        np.testing.assert_array_equal(ad.upsample_nearest(v, 2).data, np.full((1, 1, 2, 2), 0.3))
        assert ad.upsample_nearest(v, 1) is v

    def test_concat_examples(self, rng):
        a, b = Tensor(rng.uniform(size=(1, 2, 4, 4))), Tensor(rng.uniform(size=(1, 3, 4, 4)))
        out = ad.concat_channels(a, b).data
        assert out.shape == (1, 5, 4, 4)
        np.testing.assert_array_equal(out[:, :2], a.data)
        np.testing.assert_array_equal(out[:, 2:], b.data)
        np.testing.assert_array_equal(ad.concat_channels(a, Tensor(np.zeros((1, 0, 4, 4)))).data, a.data)

    def test_backward_of_scaled_sum(self):
        x = Tensor(np.array([1.0, -4.0, 9.0]), requires_grad=True)
        (x * 2.0).sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 2.0, 2.0])


class TestGradCheckReport:
    @pytest.mark.parametrize("name", ["concat_channels", "global_avg_pool", "upsample_nearest"])
    def test_linear_ops_reach_machine_precision(self, name):
        from condenhance.gradcheck import grad_check
        # exact rule: only the finite-difference roundoff (~1e-16 / eps) remains
        assert grad_check(name, trial_count=3).max_rel_error < 1e-8

    @pytest.mark.parametrize("name", ["conv2d", "conv2d_stride2", "instance_norm", "fully_connected",
                                      "leaky_relu", "sigmoid", "chain_conv_norm_relu"])
    def test_operators_pass(self, name):
        from condenhance.gradcheck import grad_check
        result = grad_check(name, trial_count=3, tol=1e-5)
        assert result.passed and result.trials == 3

    def test_unknown_operator(self):
        from condenhance.gradcheck import grad_check
        with pytest.raises(KeyError):
            grad_check("softmax")
