"""Finite-difference checks for every autograd primitive."""

import numpy as np
import pytest

from wavrq import autograd as ag
from wavrq.autograd import Tensor, parameter

from gradcheck import max_rel_error, numeric_grad

TOL = 1e-5  # float64 central differences carry ~1e-6 relative noise at small coords


def check_unary(op, x, **kw):
    """Check the vjp against finite differences of <out, w> for a random cotangent w."""
    t = parameter(x)
    out = op(t, **kw)
    w = np.random.default_rng(99).standard_normal(out.shape)
    ag.tsum(ag.mul(out, Tensor(w))).backward()

    def f(xv):
        return float(np.sum(op(Tensor(xv), **kw).data * w))

    num = numeric_grad(f, x)
    assert max_rel_error(t.grad, num) < TOL


def check_binary(op, x, y):
    tx, ty = parameter(x), parameter(y)
    out = op(tx, ty)
    w = np.random.default_rng(99).standard_normal(out.shape)
    ag.tsum(ag.mul(out, Tensor(w))).backward()
    fx = lambda v: float(np.sum(op(Tensor(v), Tensor(y)).data * w))
    fy = lambda v: float(np.sum(op(Tensor(x), Tensor(v)).data * w))
    assert max_rel_error(tx.grad, numeric_grad(fx, x)) < TOL
    assert max_rel_error(ty.grad, numeric_grad(fy, y)) < TOL


def rnd(*shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


class TestElementwise:
    def test_add_broadcast(self):
        check_binary(ag.add, rnd(3, 4), rnd(4, seed=1))

    def test_sub_broadcast(self):
        check_binary(ag.sub, rnd(2, 3, 4), rnd(1, 3, 1, seed=1))

    def test_mul_broadcast(self):
        check_binary(ag.mul, rnd(3, 4), rnd(3, 1, seed=1))

    def test_gelu(self):
        check_unary(ag.gelu, rnd(5, 3))

    def test_sigmoid(self):
        check_unary(ag.sigmoid, rnd(4, 4))


class TestShapesAndReductions:
    def test_reshape(self):
        check_unary(lambda t: ag.reshape(t, (6, 2)), rnd(3, 4))

    def test_permute(self):
        check_unary(lambda t: ag.permute(t, (2, 0, 1)), rnd(2, 3, 4))

    def test_sum_axis(self):
        check_unary(lambda t: ag.tsum(t, axis=1), rnd(3, 4, 2))

    def test_mean_keepdims(self):
        check_unary(lambda t: ag.tmean(t, axis=-1, keepdims=True), rnd(3, 5))


class TestMatmul:
    def test_plain(self):
        check_binary(ag.matmul, rnd(3, 4), rnd(4, 5, seed=1))

    def test_batched(self):
        check_binary(ag.matmul, rnd(2, 3, 4, 5), rnd(2, 3, 5, 4, seed=1))

    def test_broadcast_batch(self):
        # (1, h, t, d) @ (B, h, d, t) style broadcasting
        check_binary(ag.matmul, rnd(1, 2, 3, 4), rnd(5, 2, 4, 3, seed=1))


class TestNormalizeSoftmax:
    def test_normalize(self):
        check_unary(lambda t: ag.normalize(t, axis=-1, eps=1e-5), rnd(4, 7))

    def test_softmax(self):
        check_unary(lambda t: ag.softmax(t, axis=-1), rnd(3, 6))

    def test_log_softmax(self):
        check_unary(lambda t: ag.log_softmax(t, axis=-1), rnd(3, 6))

    def test_softmax_rows_sum_to_one(self):
        y = ag.softmax(Tensor(rnd(5, 9)), axis=-1).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


class TestConv1d:
    @pytest.mark.parametrize("stride,kernel", [(1, 3), (2, 3), (5, 10), (2, 2)])
    def test_grad(self, stride, kernel):
        x = rnd(2, 3, 23)
        w = rnd(4, 3, kernel, seed=1)
        check_binary(lambda a, b: ag.conv1d(a, b, stride), x, w)

    def test_output_length(self):
        out = ag.conv1d(Tensor(rnd(1, 1, 100)), Tensor(rnd(2, 1, 10, seed=1)), 5)
        assert out.shape == (1, 2, (100 - 10) // 5 + 1)

    def test_matches_direct_correlation(self):
        x, w = rnd(1, 2, 12), rnd(3, 2, 4, seed=1)
        out = ag.conv1d(Tensor(x), Tensor(w), 2).data
        # brute-force sliding dot product
        for o in range(out.shape[2]):
            for c in range(3):
                ref = np.sum(x[0, :, 2 * o:2 * o + 4] * w[c])
                assert abs(out[0, c, o] - ref) < 1e-12

    def test_too_short_raises(self):
        with pytest.raises(ValueError, match="receptive field"):
            ag.conv1d(Tensor(rnd(1, 1, 3)), Tensor(rnd(1, 1, 5, seed=1)), 1)


class TestGathers:
    def test_embedding(self):
        idx = np.array([[0, 2], [2, 1]])
        table = parameter(rnd(3, 4))
        out = ag.embedding(table, idx)
        loss = ag.tsum(ag.mul(out, out))
        loss.backward()
        f = lambda v: float(np.sum(Tensor(v).data[idx] ** 2))
        assert max_rel_error(table.grad, numeric_grad(f, table.data)) < TOL

    def test_select_positions(self):
        x = parameter(rnd(2, 5, 3))
        bi, ti = np.array([0, 1, 1]), np.array([4, 0, 2])
        out = ag.select_positions(x, bi, ti)
        assert out.shape == (3, 3)
        ag.tsum(ag.mul(out, out)).backward()
        f = lambda v: float(np.sum(np.asarray(v)[bi, ti] ** 2))
        assert max_rel_error(x.grad, numeric_grad(f, x.data)) < TOL

    def test_take_labels(self):
        x = parameter(rnd(4, 6))
        labels = np.array([1, 0, 5, 3])
        out = ag.take_labels(x, labels)
        ag.tsum(ag.mul(out, out)).backward()
        f = lambda v: float(np.sum(np.asarray(v)[np.arange(4), labels] ** 2))
        assert max_rel_error(x.grad, numeric_grad(f, x.data)) < TOL


class TestGraphMechanics:
    def test_grad_accumulates_over_reuse(self):
        x = parameter(np.array([2.0, 3.0]))
        y = ag.add(ag.mul(x, x), x)  # x^2 + x
        ag.tsum(y).backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_constants_get_no_grad(self):
        x = parameter(np.ones(3))
        c = Tensor(np.ones(3))
        ag.tsum(ag.mul(x, c)).backward()
        assert c.grad is None
        assert x.grad is not None

    def test_dtype_preserved(self):
        x = parameter(np.ones((2, 2), dtype=np.float32))
        out = ag.gelu(ag.matmul(x, x))
        assert out.dtype == np.float32
        ag.tsum(out).backward()
        assert x.grad.dtype == np.float32

    def test_dropout_identity_and_scale(self):
        x = parameter(np.ones((100, 100)))
        assert ag.dropout(x, 0.0, np.random.default_rng(0)) is x
        assert ag.dropout(x, 0.5, None) is x
        y = ag.dropout(x, 0.5, np.random.default_rng(0))
        kept = y.data[y.data != 0]
        np.testing.assert_allclose(kept, 2.0)  # inverted scaling
        assert abs(y.data.mean() - 1.0) < 0.05
