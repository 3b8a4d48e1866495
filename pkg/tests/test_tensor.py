import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hwformer.errors import ConfigError, NumericError, UsageError
from hwformer.tensor import (
    Tensor,
    conv2d,
    finite_diff_check,
    layer_norm,
    matmul,
    no_grad,
    relu,
    softmax,
    take,
)


def naive_conv(x, w, b):
    """Direct nested-loop zero-padded convolution (independent oracle)."""
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    p = k // 2
    xp = np.zeros((n, cin, h + 2 * p, wd + 2 * p))
    xp[:, :, p:p + h, p:p + wd] = x
    out = np.zeros((n, cout, h, wd))
    for i in range(n):
        for o in range(cout):
            for y in range(h):
                for xx in range(wd):
                    out[i, o, y, xx] = (xp[i, :, y:y + k, xx:xx + k] * w[o]).sum() + b[o]
    return out


class TestConv2d:
    def test_identity_kernel(self):
        x = np.arange(9, dtype=float).reshape(1, 1, 3, 3)
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1
        out = conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)), padding=1)
        np.testing.assert_array_equal(out.data, x)

    def test_one_by_one_hand_value(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        out = conv2d(Tensor(x), Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.array([1.0])), padding=0)
        np.testing.assert_array_equal(out.data, [[[[3.0, 5.0], [7.0, 9.0]]]])

    def test_parameter_count(self):
        w, b = np.zeros((64, 64, 3, 3)), np.zeros(64)
        assert w.size + b.size == 36_928

    def test_matches_naive_loops(self, rng):
        x = rng.standard_normal((2, 3, 5, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, naive_conv(x, w, b), atol=1e-12)

    @pytest.mark.parametrize("wrt", ["input", "weight", "bias"])
    def test_gradients(self, rng, wrt):
        x = rng.standard_normal((2, 2, 4, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        probe = rng.standard_normal((2, 3, 4, 5))
        args = {"input": x, "weight": w, "bias": b}

        def f(t):
            vals = {k: Tensor(v) for k, v in args.items()}
            vals[wrt] = t
            return (conv2d(vals["input"], vals["weight"], vals["bias"]) * Tensor(probe)).sum()

        assert finite_diff_check(f, args[wrt]) <= 1e-6

    def test_errors(self):
        with pytest.raises(ConfigError):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
        with pytest.raises(ConfigError):
            conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), padding=0)
        bad = np.zeros((1, 1, 4, 4))
        bad[0, 0, 1, 1] = np.nan
        with pytest.raises(NumericError):
            conv2d(Tensor(bad), Tensor(np.zeros((1, 1, 3, 3))))

    @given(arrays(np.float64, (1, 2, 5, 4), elements=st.floats(-1e3, 1e3)))
    @settings(max_examples=30, deadline=None)
    def test_delta_kernel_is_identity(self, x):
        w = np.zeros((2, 2, 3, 3))
        w[0, 0, 1, 1] = w[1, 1, 1, 1] = 1
        np.testing.assert_array_equal(conv2d(Tensor(x), Tensor(w)).data, x)


class TestMatmul:
    def test_identity(self, rng):
        m = rng.standard_normal((3, 3))
        np.testing.assert_array_equal(matmul(Tensor(np.eye(3)), Tensor(m)).data, m)

    def test_hand_value(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_sum_gradient_is_ones_times_bt(self, rng):
        a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        b = rng.standard_normal((3, 4))
        matmul(a, Tensor(b)).sum().backward()
        np.testing.assert_allclose(a.grad, np.ones((2, 4)) @ b.T, atol=1e-14)
        assert finite_diff_check(lambda t: matmul(t, Tensor(b)).sum(), a.data) <= 1e-8

    def test_batched_gradient(self, rng):
        b = rng.standard_normal((4, 2))
        assert finite_diff_check(lambda t: (matmul(t, Tensor(b)) * matmul(t, Tensor(b))).sum(),
                                 rng.standard_normal((3, 5, 4))) <= 1e-6

    def test_inner_mismatch(self):
        with pytest.raises(ConfigError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestLayerNorm:
    def ones(self, d):
        return Tensor(np.ones(d)), Tensor(np.zeros(d))

    def test_constant_slice(self):
        out = layer_norm(Tensor([5.0, 5.0, 5.0, 5.0]), *self.ones(4))
        np.testing.assert_array_equal(out.data, [0, 0, 0, 0])

    def test_two_values(self):
        out = layer_norm(Tensor([1.0, 3.0]), *self.ones(2), eps=1e-15)
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-12)

    def test_affine_dominance(self, rng):
        out = layer_norm(Tensor(rng.standard_normal((3, 4))), Tensor(np.zeros(4)), Tensor(np.full(4, 7.0)))
        np.testing.assert_array_equal(out.data, 7.0)

    @given(arrays(np.float64, (3, 6), elements=st.floats(-100, 100)))
    @settings(max_examples=50, deadline=None)
    def test_moments(self, x):
        spread = x.std(axis=-1)
        out = layer_norm(Tensor(x), *self.ones(6), eps=1e-5).data
        for row, s in zip(out, spread):
            if s < 1e-1:
                continue
            assert abs(row.mean()) <= 1e-6
            assert abs(row.var() - 1) <= 1e-3

    def test_gradients(self, rng):
        g, b = rng.standard_normal(5), rng.standard_normal(5)
        probe = Tensor(rng.standard_normal((4, 5)))
        x = rng.standard_normal((4, 5))
        assert finite_diff_check(lambda t: (layer_norm(t, Tensor(g), Tensor(b)) * probe).sum(), x) <= 1e-6
        assert finite_diff_check(lambda t: (layer_norm(Tensor(x), t, Tensor(b)) * probe).sum(), g) <= 1e-6
        assert finite_diff_check(lambda t: (layer_norm(Tensor(x), Tensor(g), t) * probe).sum(), b) <= 1e-6


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(Tensor([2.0, 2.0, 2.0]), 0).data, [1 / 3] * 3)

    def test_closed_form(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, np.log(3.0)]), 0).data, [0.25, 0.75], atol=1e-15)

    def test_no_overflow(self):
        y = softmax(Tensor([1e4, 0.0]), 0).data
        assert np.isfinite(y).all() and abs(y.sum() - 1) <= 1e-6

    @given(arrays(np.float64, (4, 7), elements=st.floats(-1e300, 1e300)))
    @settings(max_examples=50, deadline=None)
    def test_slices_sum_to_one(self, x):
        y = softmax(Tensor(x), -1).data
        assert (y >= 0).all()
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)

    def test_chain_gradient(self, rng):
        w = Tensor(rng.standard_normal((3, 3)))
        probe = Tensor(rng.standard_normal((2, 3)))
        assert finite_diff_check(lambda t: (softmax(matmul(t, w), -1) * probe).sum(),
                                 rng.standard_normal((2, 3))) <= 1e-5


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))

    def test_quadratic(self, rng):
        x = Tensor(rng.standard_normal(6), requires_grad=True)
        ((x * x).sum() * 0.5).backward()
        np.testing.assert_allclose(x.grad, x.data, atol=1e-15)

    def test_shared_subexpression_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * x
        (y + y).sum().backward()
        np.testing.assert_allclose(x.grad, [8.0])

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(UsageError):
            (x * 2.0).backward()

    def test_detached_rejected(self):
        with pytest.raises(UsageError):
            Tensor(np.ones(3)).sum().backward()
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = (x * 2.0).sum()
        with pytest.raises(UsageError):
            y.backward()

    def test_second_backward_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(UsageError):
            loss.backward()

    def test_relu_subgradient_at_zero(self):
        x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
        relu(x).sum().backward()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_take_with_repeats_accumulates(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        take(x, [0, 0, 2, 0], axis=0).sum().backward()
        np.testing.assert_array_equal(x.grad, [3.0, 0.0, 1.0])

    def test_precision_preserved(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32))
        w = Tensor(rng.standard_normal((2, 2, 3, 3)).astype(np.float32))
        y = softmax(layer_norm(conv2d(x, w), Tensor(np.ones(4, np.float32)), Tensor(np.zeros(4, np.float32))) * 0.5, -1)
        assert y.dtype == np.float32


class TestFiniteDiffCheck:
    def test_sum_is_exact(self, rng):
        # integer x and a power-of-two step keep x +/- h representable
        x = rng.integers(-50, 50, size=(3, 4)).astype(np.float64)
        assert finite_diff_check(lambda t: t.sum(), x, h=2.0**-20) == 0.0
        assert finite_diff_check(lambda t: t.sum(), rng.standard_normal((3, 4))) <= 1e-9

    def test_relu_away_from_kink(self, rng):
        x = rng.standard_normal(20)
        x[np.abs(x) < 0.1] = 0.5
        assert finite_diff_check(lambda t: relu(t).sum(), x) <= 1e-6

    def test_catches_wrong_gradient(self):
        from hwformer import tensor as T

        def bad_square(t):
            return T._make(t.data**2, (t,), lambda g: (g * t.data,), "bad").sum()

        assert finite_diff_check(bad_square, np.array([1.0, 2.0, 3.0])) > 0.3

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            finite_diff_check(lambda t: t.sum() * np.inf, np.ones(2))


@given(arrays(np.float64, (2, 3, 4), elements=st.floats(-1e6, 1e6)),
       st.permutations([0, 1, 2]))
@settings(max_examples=30, deadline=None)
def test_permute_round_trip(x, perm):
    t = Tensor(x).transpose(perm)
    back = t.transpose(tuple(np.argsort(perm))).reshape(24).reshape(2, 3, 4)
    np.testing.assert_array_equal(back.data, x)
