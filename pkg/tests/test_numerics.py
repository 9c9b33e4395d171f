import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from proxyformer.numerics import (AttentionConfig, MultiHeadAttention, OracleError, Parameter, Tensor,
                                  backward, finite_diff_check, layer_norm, multi_head_attention, no_grad,
                                  ops, softmax)


def rand_params(rng, c, zero_out=False):
    p = {k: Parameter(rng.normal(size=(c, c)) / math.sqrt(c), k) for k in ("wq", "wk", "wv", "wo")}
    p.update({k: Parameter(rng.normal(size=c) * 0.1, k) for k in ("bq", "bk", "bv", "bo")})
    if zero_out:
        p["wo"].data[:] = 0
        p["bo"].data[:] = 0
    return p


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(softmax(Tensor([0.0, 0.0]), 0).data, [0.5, 0.5])

    def test_analytic(self):
        np.testing.assert_allclose(softmax(Tensor([math.log(2), 0.0]), 0).data, [2 / 3, 1 / 3], atol=1e-15)

    def test_large_negative_mask(self):
        out = softmax(Tensor([3.0, 3.0 - 1e9]), 0).data
        assert abs(out[0] - 1) < 1e-12 and out[1] < 1e-12

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            softmax(Tensor(np.zeros((2, 3))), 2)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
                  elements=st.floats(-50, 50)), st.integers(0, 1))
    def test_slices_sum_to_one(self, x, axis):
        out = softmax(Tensor(x), axis).data
        np.testing.assert_allclose(out.sum(axis=axis), 1.0, atol=1e-12)
        assert np.all(out > 0) and np.all(out <= 1)


class TestLayerNorm:
    def test_constant_row_collapses_to_bias(self):
        out = layer_norm(Tensor([[3.0, 3.0, 3.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_unit_variance_row(self):
        out = layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], rtol=1e-5)

    def test_random_row_statistics(self):
        x = np.random.default_rng(0).normal(3.0, 5.0, size=(4, 32))
        out = layer_norm(Tensor(x), Tensor(np.ones(32)), Tensor(np.zeros(32)), eps=1e-12).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            layer_norm(Tensor(np.zeros((2, 3))), Tensor(np.ones(4)), Tensor(np.zeros(4)))


def reference_attention(query, key, value, p, heads):
    """Unbatched loops, one head at a time."""
    b, lq, c = query.shape
    d = c // heads
    out = np.zeros((b, lq, c))
    for bi in range(b):
        q = query[bi] @ p["wq"].data + p["bq"].data
        k = key[bi] @ p["wk"].data + p["bk"].data
        v = value[bi] @ p["wv"].data + p["bv"].data
        mixed = np.zeros((lq, c))
        for h in range(heads):
            sl = slice(h * d, (h + 1) * d)
            for i in range(lq):
                s = np.array([q[i, sl] @ k[j, sl] / math.sqrt(d) for j in range(k.shape[0])])
                wts = np.exp(s - s.max())
                wts /= wts.sum()
                mixed[i, sl] = sum(wts[j] * v[j, sl] for j in range(k.shape[0]))
        out[bi] = mixed @ p["wo"].data + p["bo"].data
    return out


class TestMultiHeadAttention:
    def test_single_key(self):
        rng = np.random.default_rng(1)
        cfg = AttentionConfig(8, 2)
        p = rand_params(rng, 8)
        value = rng.normal(size=(1, 1, 8))
        expected = (value @ p["wv"].data + p["bv"].data) @ p["wo"].data + p["bo"].data
        for _ in range(3):
            q = Tensor(rng.normal(size=(1, 4, 8)))
            out = multi_head_attention(q, Tensor(rng.normal(size=(1, 1, 8))), Tensor(value), cfg, p)
            np.testing.assert_allclose(out.data, np.broadcast_to(expected, (1, 4, 8)), atol=1e-12)

    def test_zero_output_projection(self):
        rng = np.random.default_rng(2)
        p = rand_params(rng, 8, zero_out=True)
        x = Tensor(rng.normal(size=(2, 3, 8)))
        assert np.all(multi_head_attention(x, x, x, AttentionConfig(8, 2), p).data == 0)

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(3)
        p = rand_params(rng, 8)
        q, k, v = rng.normal(size=(1, 2, 8)), rng.normal(size=(1, 3, 8)), rng.normal(size=(1, 3, 8))
        out = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), AttentionConfig(8, 2), p)
        np.testing.assert_allclose(out.data, reference_attention(q, k, v, p, 2), atol=1e-12)

    def test_joint_key_value_permutation_invariance(self):
        rng = np.random.default_rng(4)
        p = rand_params(rng, 8)
        q, k, v = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 5, 8)), rng.normal(size=(2, 5, 8))
        perm = rng.permutation(5)
        cfg = AttentionConfig(8, 4)
        a = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), cfg, p).data
        bb = multi_head_attention(Tensor(q), Tensor(k[:, perm]), Tensor(v[:, perm]), cfg, p).data
        np.testing.assert_allclose(a, bb, atol=1e-13)

    def test_masked_keys_are_ignored(self):
        rng = np.random.default_rng(5)
        p = rand_params(rng, 8)
        q, k, v = rng.normal(size=(1, 2, 8)), rng.normal(size=(1, 4, 8)), rng.normal(size=(1, 4, 8))
        mask = np.array([[True, True, False, False]])
        cfg = AttentionConfig(8, 2)
        a = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), cfg, p, key_mask=mask).data
        bb = multi_head_attention(Tensor(q), Tensor(k[:, :2]), Tensor(v[:, :2]), cfg, p).data
        np.testing.assert_allclose(a, bb, atol=1e-12)

    @pytest.mark.parametrize("shapes", [((1, 2, 8), (2, 3, 8)), ((1, 2, 8), (1, 3, 4))])
    def test_shape_errors(self, shapes):
        p = rand_params(np.random.default_rng(0), 8)
        with pytest.raises(ValueError):
            multi_head_attention(Tensor(np.zeros(shapes[0])), Tensor(np.zeros(shapes[1])),
                                 Tensor(np.zeros(shapes[1])), AttentionConfig(8, 2), p)

    def test_config_divisibility(self):
        with pytest.raises(ValueError):
            AttentionConfig(10, 8)
        assert AttentionConfig().num_heads == 8


class TestBackward:
    def test_quadratic(self):
        x = Parameter([1.0, 2.0, 3.0])
        backward(ops.sum(ops.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_softmax_pick(self):
        x = Parameter([0.0, 0.0])
        backward(ops.index(softmax(x, 0), 0))
        np.testing.assert_allclose(x.grad, [0.25, -0.25], atol=1e-15)

    def test_non_scalar(self):
        with pytest.raises(ValueError):
            backward(ops.mul(Parameter([1.0, 2.0]), 2.0))

    def test_unreachable_parameter_gets_zero(self):
        a, b = Parameter([1.0]), Parameter([5.0])
        b.grad = None
        backward(ops.sum(ops.mul(a, 3.0)), [a, b])
        np.testing.assert_array_equal(b.grad, [0.0])

    def test_accumulates_across_uses(self):
        a = Parameter([2.0])
        backward(ops.sum(ops.add(ops.mul(a, 3.0), ops.mul(a, a))))
        np.testing.assert_array_equal(a.grad, [7.0])

    def test_no_grad_records_nothing(self):
        a = Parameter([2.0])
        with no_grad():
            out = ops.mul(a, a)
        assert not out.requires_grad


class TestFiniteDiff:
    def test_linear_gradient_exact(self):
        p = Parameter(np.random.default_rng(0).normal(size=7), "p")
        rep = finite_diff_check(lambda: ops.mul(ops.sum(ops.mul(p, p)), 0.5), [p], step=1e-5)
        assert rep.worst < 1e-8 and rep.passed

    def test_detects_nondeterminism(self):
        p = Parameter([1.0])
        counter = iter(range(100))
        with pytest.raises(OracleError):
            finite_diff_check(lambda: ops.sum(ops.add(p, float(next(counter)))), [p])

    def test_step_range(self):
        p = Parameter([1.0])
        with pytest.raises(ValueError):
            finite_diff_check(lambda: ops.sum(p), [p], step=1e-2)

    def test_attention_layer(self):
        rng = np.random.default_rng(6)
        att = MultiHeadAttention(rng, AttentionConfig(8, 2))
        att.wo.data = rng.normal(size=(8, 8)) * 0.3
        att.bind_names()
        q = Parameter(rng.normal(size=(1, 2, 8)), "query")
        kv = Parameter(rng.normal(size=(1, 3, 8)), "kv")
        target = rng.normal(size=(1, 2, 8))
        rep = finite_diff_check(lambda: ops.sum(ops.mul(att(q, kv), target)),
                                att.parameters() + [q, kv], step=1e-5, tol=1e-4)
        assert rep.passed, rep.errors


PRIMITIVES = {
    "add_broadcast": (lambda x, y: ops.add(x, ops.index(y, 0)), (3, 4), (2, 4)),
    "mul": (lambda x, y: ops.mul(x, y), (3, 4), (3, 4)),
    "div": (lambda x, y: ops.div(x, ops.add(ops.mul(y, y), 1.0)), (3, 4), (3, 4)),
    "matmul": (lambda x, y: ops.matmul(x, ops.transpose(y, (1, 0))), (3, 4), (2, 4)),
    "linear": (lambda x, y: ops.linear(x, ops.transpose(y, (1, 0))), (3, 4), (2, 4)),
    "exp_log": (lambda x, y: ops.log(ops.add(ops.exp(x), ops.mul(y, y))), (3, 4), (3, 4)),
    "sigmoid": (lambda x, y: ops.mul(ops.sigmoid(x), y), (3, 4), (3, 4)),
    "log_sigmoid": (lambda x, y: ops.mul(ops.log_sigmoid(x), y), (3, 4), (3, 4)),
    "softmax": (lambda x, y: ops.mul(ops.softmax(x, 1), y), (3, 4), (3, 4)),
    "log_softmax": (lambda x, y: ops.mul(ops.log_softmax(x, 0), y), (3, 4), (3, 4)),
    "layer_norm": (lambda x, y: ops.mul(ops.layer_norm(x, ops.index(y, 0), ops.index(y, 1)), x), (3, 4), (2, 4)),
    "mean_reshape": (lambda x, y: ops.mul(ops.mean(ops.reshape(x, (4, 3)), axis=0), ops.index(y, (0, slice(0, 3)))), (3, 4), (2, 4)),
    "concat_stack": (lambda x, y: ops.stack([ops.concat([x, y], axis=0), ops.concat([y, x], axis=0)]), (3, 4), (2, 4)),
    "maxmin": (lambda x, y: ops.mul(ops.maximum(x, y), ops.minimum(x, ops.mul(y, 0.5))), (3, 4), (3, 4)),
    "sqrt_abs": (lambda x, y: ops.mul(ops.sqrt(ops.add(ops.mul(x, x), 1.0)), ops.abs(y)), (3, 4), (3, 4)),
    "resize": (lambda x, y: ops.mul(ops.resize_bilinear(x, 5, 7), 1.0), (3, 4), (1,)),
    "upsample": (lambda x, y: ops.upsample_nearest2x(ops.reshape(x, (1, 3, 4, 1))), (3, 4), (1,)),
    "conv_stride": (lambda x, y: ops.conv2d(ops.reshape(x, (1, 3, 4, 1)), ops.reshape(y, (2, 2, 1, 1)),
                                            stride=2, padding=1), (3, 4), (4,)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    f, sx, sy = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    x = Parameter(rng.normal(size=sx), "x")
    y = Parameter(rng.normal(size=sy), "y")
    weights = None

    def loss():
        nonlocal weights
        out = f(x, y)
        if weights is None:
            weights = np.random.default_rng(1).normal(size=out.shape)
        return ops.sum(ops.mul(out, weights))

    rep = finite_diff_check(loss, [x, y], step=1e-5, tol=1e-4)
    assert rep.passed, rep.errors


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 5, 6, 3))
    w = rng.normal(size=(3, 3, 3, 4))
    out = ops.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros_like(out)
    for n in range(2):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                patch = xp[n, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                ref[n, i, j] = np.einsum("hwc,hwco->o", patch, w)
    np.testing.assert_allclose(out, ref, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3, 8), elements=st.floats(-1e3, 1e3)))
def test_forward_stays_finite(x):
    rng = np.random.default_rng(0)
    att = MultiHeadAttention(rng, AttentionConfig(8, 2))
    att.wo.data = rng.normal(size=(8, 8))
    out = att(Tensor(x), Tensor(x[:, ::-1]))
    assert np.all(np.isfinite(out.data))
