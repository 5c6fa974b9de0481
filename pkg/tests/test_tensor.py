import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from handsoff.errors import ShapeError
from handsoff.tensor import (
    BatchNorm,
    ConvParams,
    Tensor,
    add,
    apply_batchnorm,
    concat_channels,
    conv2d,
    fold_batchnorm,
    leaky_relu,
    upsample_nearest,
)
from oracles import naive_conv2d


def make_conv(rng, out_c, in_c, k, stride=1, pad=0, bias=True, bn=False):
    bnp = None
    if bn:
        bnp = BatchNorm(
            gamma=rng.uniform(0.5, 1.5, out_c),
            beta=rng.normal(0, 0.5, out_c),
            running_mean=rng.normal(0, 0.5, out_c),
            running_variance=rng.uniform(0.1, 2.0, out_c),
        )
    return ConvParams(
        out_channels=out_c,
        in_channels=in_c,
        kernel_size=k,
        stride=stride,
        padding=pad,
        weights=rng.normal(0, 1, out_c * in_c * k * k),
        bias=rng.normal(0, 1, out_c) if bias else np.zeros(out_c),
        batchnorm=bnp,
    )


def rel_err(actual, expected):
    expected = np.asarray(expected, dtype=np.float64)
    return np.max(np.abs(np.asarray(actual, dtype=np.float64) - expected)) / max(np.max(np.abs(expected)), 1e-30)


def oracle(x: Tensor, p: ConvParams):
    w = p.weights.reshape(p.out_channels, p.in_channels, p.kernel_size, p.kernel_size).tolist()
    return naive_conv2d(x.array.tolist(), w, p.bias.tolist(), p.stride, p.padding)


class TestTensor:
    def test_flat_layout_is_channel_major(self):
        t = Tensor.from_flat(2, 2, 3, np.arange(12))
        assert t.array[1, 0, 2] == 8
        assert t.data.size == 12

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor.from_flat(2, 2, 2, np.arange(7))

    def test_constructor_does_not_alias_caller_array(self):
        a = np.ones((1, 2, 2), dtype=np.float32)
        t = Tensor(a)
        a[0, 0, 0] = 5
        assert t.array[0, 0, 0] == 1
        with pytest.raises(ValueError):
            t.array[0, 0, 0] = 3


class TestConv2d:
    def test_identity_kernel(self):
        p = ConvParams(1, 1, 1, 1, 0, [1.0], [0.0])
        out = conv2d(Tensor([[[5.0]]]), p)
        assert out.array.tolist() == [[[5.0]]]

    def test_all_ones_3x3_pad1(self):
        # every output window covers all four input cells
        p = ConvParams(1, 1, 3, 1, 1, np.ones(9), [0.0])
        out = conv2d(Tensor(np.ones((1, 2, 2))), p)
        assert out.shape == (1, 2, 2)
        assert out.array.tolist() == [[[4.0, 4.0], [4.0, 4.0]]]

    def test_random_4x16x16_against_naive(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(4, 16, 16)))
        p = make_conv(rng, 8, 4, 3, pad=1)
        assert rel_err(conv2d(x, p).array, oracle(x, p)) <= 1e-5

    @pytest.mark.parametrize("stride,pad,k", [(2, 1, 3), (1, 0, 3), (2, 0, 1), (3, 2, 5), (1, 0, 1)])
    def test_geometries(self, stride, pad, k):
        rng = np.random.default_rng(stride * 100 + pad * 10 + k)
        x = Tensor(rng.normal(size=(3, 11, 9)))
        p = make_conv(rng, 5, 3, k, stride, pad)
        out = conv2d(x, p)
        ref = oracle(x, p)
        assert out.shape == (5, len(ref[0]), len(ref[0][0]))
        assert rel_err(out.array, ref) <= 1e-5

    def test_channel_mismatch_names_layer(self):
        p = ConvParams(1, 3, 1, 1, 0, np.ones(3), [0.0])
        with pytest.raises(ShapeError, match="layer 12") as exc:
            conv2d(Tensor(np.ones((2, 4, 4))), p, layer_index=12)
        assert exc.value.expected == 3 and exc.value.actual == 2

    def test_kernel_larger_than_input(self):
        p = ConvParams(1, 1, 5, 1, 0, np.ones(25), [0.0])
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((1, 3, 3))), p)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), alpha=st.floats(-3, 3), beta=st.floats(-3, 3))
    def test_linear_without_bias(self, seed, alpha, beta):
        rng = np.random.default_rng(seed)
        p = make_conv(rng, 4, 3, 3, stride=1 + seed % 2, pad=1, bias=False)
        X, Y = rng.normal(size=(2, 3, 9, 9))
        lhs = conv2d(Tensor(alpha * X + beta * Y), p).array
        rhs = alpha * conv2d(Tensor(X), p).array.astype(np.float64) + beta * conv2d(Tensor(Y), p).array
        scale = max(np.max(np.abs(rhs)), np.max(np.abs(lhs)), 1e-6)
        assert np.max(np.abs(lhs - rhs)) / scale <= 1e-4

    def test_does_not_mutate_input(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 5, 5)))
        before = x.array.copy()
        conv2d(x, make_conv(rng, 2, 2, 3, pad=1))
        assert np.array_equal(x.array, before)


class TestBatchNorm:
    def test_identity(self):
        bn = BatchNorm([1.0], [0.0], [0.0], [1.0], epsilon=0.0)
        x = Tensor(np.array([[[1.5, -2.0]]]))
        assert np.array_equal(apply_batchnorm(x, bn).array, x.array)

    def test_scalar(self):
        bn = BatchNorm([2.0], [1.0], [3.0], [4.0], epsilon=0.0)
        assert apply_batchnorm(Tensor([[[5.0]]]), bn).array.item() == 3.0

    def test_folded_matches_direct(self):
        rng = np.random.default_rng(3)
        p = make_conv(rng, 6, 4, 3, pad=1, bn=True)
        x = Tensor(rng.normal(size=(4, 10, 10)))
        direct = apply_batchnorm(conv2d(x, p), p.batchnorm).array
        folded = conv2d(x, fold_batchnorm(p)).array
        assert rel_err(folded, direct) <= 1e-5

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            BatchNorm([1.0], [0.0], [0.0], [-0.5])

    def test_length_mismatch(self):
        bn = BatchNorm([1.0, 1.0], [0.0, 0.0], [0.0, 0.0], [1.0, 1.0])
        with pytest.raises(ShapeError):
            apply_batchnorm(Tensor(np.ones((3, 1, 1))), bn)


class TestLeakyRelu:
    @pytest.mark.parametrize("value,expected", [(2.0, 2.0), (0.0, 0.0), (-2.0, np.float32(-0.2))])
    def test_values(self, value, expected):
        assert leaky_relu(Tensor([[[value]]]), 0.1).array.item() == expected

    @given(arrays(np.float32, (1, 3, 4), elements=st.floats(-1e6, 1e6, width=32)), st.floats(0, 0.99))
    def test_double_application(self, a, slope):
        x = Tensor(a)
        once = leaky_relu(x, slope).array
        twice = leaky_relu(Tensor(once), slope).array.astype(np.float64)
        pos = a >= 0
        assert np.array_equal(twice[pos], a[pos])
        expected_neg = np.float32(slope) * (np.float32(slope) * a[~pos])
        assert np.allclose(twice[~pos], expected_neg, rtol=1e-6, atol=0)

    def test_bad_slope(self):
        with pytest.raises(ValueError):
            leaky_relu(Tensor([[[1.0]]]), 1.0)


class TestUpsample:
    def test_factor_one(self):
        x = Tensor(np.arange(6).reshape(1, 2, 3))
        assert np.array_equal(upsample_nearest(x, 1).array, x.array)

    def test_constant(self):
        assert upsample_nearest(Tensor([[[7.0]]]), 2).array.tolist() == [[[7.0, 7.0], [7.0, 7.0]]]

    def test_blocks(self):
        out = upsample_nearest(Tensor([[[1, 2], [3, 4]]]), 2).array[0]
        assert out.tolist() == [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]

    @given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5)),
                  elements=st.floats(-1e6, 1e6, width=32)), st.integers(1, 4))
    def test_average_pool_recovers_input(self, a, f):
        up = upsample_nearest(Tensor(a), f).array
        c, h, w = a.shape
        pooled = up.reshape(c, h, f, w, f).astype(np.float64).mean(axis=(2, 4))
        assert np.array_equal(pooled.astype(np.float32), a)


class TestAddConcat:
    def test_add_identities(self):
        a = Tensor(np.random.default_rng(1).normal(size=(2, 3, 3)))
        assert np.array_equal(add(a, Tensor.zeros(2, 3, 3)).array, a.array)
        assert not np.any(add(a, Tensor(-a.array)).array)

    @given(arrays(np.float32, (2, 3, 3), elements=st.floats(-1e6, 1e6, width=32)),
           arrays(np.float32, (2, 3, 3), elements=st.floats(-1e6, 1e6, width=32)))
    def test_add_commutes(self, a, b):
        assert np.array_equal(add(Tensor(a), Tensor(b)).array, add(Tensor(b), Tensor(a)).array)

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(Tensor.zeros(1, 2, 2), Tensor.zeros(2, 2, 2))

    def test_concat_single(self):
        a = Tensor(np.ones((2, 2, 2)))
        assert concat_channels([a]) is a

    def test_concat_order(self):
        rng = np.random.default_rng(2)
        a, b = Tensor(rng.normal(size=(2, 4, 4))), Tensor(rng.normal(size=(3, 4, 4)))
        out = concat_channels([a, b])
        assert out.shape == (5, 4, 4)
        assert np.array_equal(out.array[2], b.array[0])
        assert np.array_equal(out.array[:2], a.array) and np.array_equal(out.array[2:], b.array)

    def test_concat_spatial_mismatch(self):
        with pytest.raises(ShapeError):
            concat_channels([Tensor.zeros(1, 2, 2), Tensor.zeros(1, 3, 2)])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), magnitude=st.sampled_from([1.0, 1e3, 1e6]))
def test_no_primitive_produces_nonfinite(seed, magnitude):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-magnitude, magnitude, size=(3, 6, 6)))
    p = make_conv(rng, 3, 3, 3, pad=1, bn=True)
    outs = [
        conv2d(x, p),
        apply_batchnorm(x, p.batchnorm),
        conv2d(x, fold_batchnorm(p)),
        leaky_relu(x),
        upsample_nearest(x, 2),
        add(x, x),
        concat_channels([x, x]),
    ]
    for out in outs:
        assert np.all(np.isfinite(out.array))
