import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from abstract_goal import numerics as nx
from abstract_goal.errors import ContractError, DomainError, EvaluationError, ShapeError


def central_diff(fn, x, step=1e-6):
    """Independent numeric gradient of a scalar numpy function."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[i] += step
        down[i] -= step
        g[i] = (fn(up) - fn(down)) / (2 * step)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))


class TestAffine:
    def test_identity(self):
        t = nx.Tape()
        out = nx.affine(t.leaf(np.eye(2)), t.leaf([2.0, 3.0]), t.leaf([0.0, 0.0]))
        np.testing.assert_array_equal(out.value, [[2.0], [3.0]])

    def test_row_vector(self):
        t = nx.Tape()
        out = nx.affine(t.leaf([[1.0, 2.0]]), t.leaf([3.0, 4.0]), t.leaf([1.0]))
        assert out.item() == 12.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        W, x, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 1)), rng.normal(size=(4, 1))
        t = nx.Tape()
        Wn, xn, bn = t.leaf(W), t.leaf(x), t.leaf(b)
        nx.backward(nx.total(nx.affine(Wn, xn, bn)))
        assert rel_err(Wn.grad, central_diff(lambda w: (w @ x + b).sum(), W)) < 1e-6
        assert rel_err(xn.grad, central_diff(lambda v: (W @ v + b).sum(), x)) < 1e-6
        assert rel_err(bn.grad, central_diff(lambda c: (W @ x + c).sum(), b)) < 1e-6

    def test_bias_broadcasts_over_batch(self):
        t = nx.Tape()
        b = t.leaf([1.0, -1.0])
        out = nx.affine(t.const(np.eye(2)), t.const(np.zeros((2, 5))), b)
        nx.backward(nx.total(out))
        np.testing.assert_array_equal(b.grad, [[5.0], [5.0]])

    def test_shape_error_names_both_shapes(self):
        t = nx.Tape()
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 1\)"):
            nx.affine(t.leaf(np.zeros((2, 3))), t.leaf(np.zeros((2, 1))), t.leaf(np.zeros((2, 1))))


class TestElementwise:
    def test_softplus_zero(self):
        t = nx.Tape()
        assert nx.softplus(t.leaf(0.0)).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_softplus_large_input_no_overflow(self):
        mpmath.mp.dps = 50
        expected = float(mpmath.log(1 + mpmath.e**50))
        t = nx.Tape()
        got = nx.softplus(t.leaf(50.0)).item()
        assert got == pytest.approx(expected, rel=1e-15)
        assert np.isfinite(nx.softplus(t.leaf(1e4)).item())

    def test_relu(self):
        t = nx.Tape()
        np.testing.assert_array_equal(nx.relu(t.leaf([-3.0, 3.0])).value, [[0.0], [3.0]])

    def test_log_domain_error(self):
        t = nx.Tape()
        with pytest.raises(DomainError):
            nx.log(t.leaf([1.0, 0.0]))

    def test_binary_shape_mismatch(self):
        t = nx.Tape()
        with pytest.raises(ShapeError):
            nx.add(t.leaf([1.0, 2.0]), t.leaf([1.0]))

    def test_unknown_kind(self):
        t = nx.Tape()
        with pytest.raises(ContractError):
            nx.elementwise("cosh", t.leaf(1.0))

    @pytest.mark.parametrize("kind,fn,tol", [
        ("relu", lambda v: np.maximum(v, 0), 1e-6),
        ("tanh", np.tanh, 1e-6),
        ("sigmoid", lambda v: 1 / (1 + np.exp(-v)), 1e-6),
        ("softplus", lambda v: np.log1p(np.exp(v)), 1e-4),
        ("exp", np.exp, 1e-4),
        ("square", np.square, 1e-6),
    ])
    def test_unary_gradients(self, kind, fn, tol):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 2))
        x[np.abs(x) < 1e-3] = 0.5  # keep away from the relu kink
        t = nx.Tape()
        xn = t.leaf(x)
        nx.backward(nx.total(nx.elementwise(kind, xn)))
        assert rel_err(xn.grad, central_diff(lambda v: fn(v).sum(), x)) < tol

    def test_log_gradient(self):
        x = np.random.default_rng(1).uniform(0.5, 2.0, size=(4, 1))
        t = nx.Tape()
        xn = t.leaf(x)
        nx.backward(nx.total(nx.log(xn)))
        assert rel_err(xn.grad, central_diff(lambda v: np.log(v).sum(), x)) < 1e-6

    @pytest.mark.parametrize("kind,fn", [
        ("add", np.add), ("sub", np.subtract), ("mul", np.multiply), ("div", np.divide),
    ])
    def test_binary_gradients(self, kind, fn):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(3, 2)), rng.uniform(0.5, 2.0, size=(3, 2))
        t = nx.Tape()
        an, bn = t.leaf(a), t.leaf(b)
        nx.backward(nx.total(nx.elementwise(kind, an, bn)))
        assert rel_err(an.grad, central_diff(lambda v: fn(v, b).sum(), a)) < 1e-6
        assert rel_err(bn.grad, central_diff(lambda v: fn(a, v).sum(), b)) < 1e-6

    def test_shared_operand_accumulates(self):
        t = nx.Tape()
        x = t.leaf([3.0])
        nx.backward(nx.total(nx.add(x, x)))
        assert x.grad[0, 0] == 2.0


class TestConcat:
    def test_values(self):
        t = nx.Tape()
        np.testing.assert_array_equal(nx.concat(t.leaf([1.0, 2.0]), t.leaf([3.0])).value.ravel(), [1, 2, 3])

    def test_empty_operand(self):
        t = nx.Tape()
        out = nx.concat(t.leaf(np.zeros((0, 1))), t.leaf([5.0]))
        np.testing.assert_array_equal(out.value.ravel(), [5.0])

    def test_gradient_all_ones(self):
        t = nx.Tape()
        a, b = t.leaf([1.0, 2.0]), t.leaf([3.0])
        nx.backward(nx.total(nx.concat(a, b)))
        np.testing.assert_array_equal(a.grad, np.ones((2, 1)))
        np.testing.assert_array_equal(b.grad, np.ones((1, 1)))

    def test_column_count_mismatch(self):
        t = nx.Tape()
        with pytest.raises(ShapeError):
            nx.concat(t.leaf(np.zeros((2, 2))), t.leaf(np.zeros((2, 3))))


class TestLogSoftmax:
    def test_symmetric(self):
        t = nx.Tape()
        out = nx.log_softmax(t.leaf([0.0, 0.0])).value.ravel()
        np.testing.assert_allclose(out, [-math.log(2)] * 2, rtol=0, atol=1e-15)

    def test_large_gap_no_overflow(self):
        mpmath.mp.dps = 60
        lse = mpmath.log(mpmath.e**1000 + 1)
        expected = [float(1000 - lse), float(0 - lse)]
        t = nx.Tape()
        out = nx.log_softmax(t.leaf([1000.0, 0.0])).value.ravel()
        np.testing.assert_allclose(out, expected, rtol=1e-15, atol=1e-300)

    def test_empty(self):
        t = nx.Tape()
        with pytest.raises(ShapeError):
            nx.log_softmax(t.leaf(np.zeros((0, 1))))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e3, 1e3)), st.floats(-100, 100))
    def test_shift_invariance_and_normalization(self, x, c):
        t = nx.Tape()
        base = nx.log_softmax(t.leaf(x)).value
        shifted = nx.log_softmax(t.leaf(x + c)).value
        assert abs(np.exp(base).sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(base, shifted, atol=1e-9)

    def test_gradient(self):
        x = np.random.default_rng(4).normal(size=(5, 3))
        w = np.random.default_rng(5).normal(size=(5, 3))

        def ref(v):
            s = v - v.max(axis=0)
            return (w * (s - np.log(np.exp(s).sum(axis=0)))).sum()

        t = nx.Tape()
        xn = t.leaf(x)
        nx.backward(nx.total(nx.mul(nx.log_softmax(xn), t.const(w))))
        assert rel_err(xn.grad, central_diff(ref, x)) < 1e-6


class TestGatherOps:
    def test_take_cols_repeated_indices_accumulate(self):
        t = nx.Tape()
        x = t.leaf(np.arange(6.0).reshape(2, 3))
        out = nx.take_cols(x, [2, 2, 0])
        np.testing.assert_array_equal(out.value, [[2, 2, 0], [5, 5, 3]])
        nx.backward(nx.total(out))
        np.testing.assert_array_equal(x.grad, [[1, 0, 2], [1, 0, 2]])

    def test_tile_cols(self):
        t = nx.Tape()
        x = t.leaf([[1.0, 2.0]])
        out = nx.tile_cols(x, 3)
        np.testing.assert_array_equal(out.value, [[1, 2, 1, 2, 1, 2]])
        nx.backward(nx.total(out))
        np.testing.assert_array_equal(x.grad, [[3, 3]])

    def test_pick_and_slice(self):
        t = nx.Tape()
        x = t.leaf(np.arange(6.0).reshape(3, 2))
        np.testing.assert_array_equal(nx.pick(x, [2, 0]).value, [[4, 1]])
        np.testing.assert_array_equal(nx.slice_rows(x, 1, 3).value, [[2, 3], [4, 5]])


class TestBackward:
    def test_root_is_leaf(self):
        t = nx.Tape()
        x = t.leaf(2.5)
        nx.backward(x)
        assert x.grad[0, 0] == 1.0

    def test_non_scalar_root(self):
        t = nx.Tape()
        with pytest.raises(ContractError):
            nx.backward(t.leaf([1.0, 2.0]))

    def test_unreachable_nodes_get_zero(self):
        t = nx.Tape()
        x, y = t.leaf([1.0, 2.0]), t.leaf([3.0, 4.0])
        nx.backward(nx.total(nx.square(x)))
        np.testing.assert_array_equal(y.grad, np.zeros((2, 1)))

    def test_sum_of_affine_matches_fd(self):
        rng = np.random.default_rng(8)
        W, x = rng.normal(size=(3, 4)), rng.normal(size=(4, 1))
        t = nx.Tape()
        Wn = t.leaf(W)
        nx.backward(nx.total(nx.affine(Wn, t.const(x), t.const(np.zeros((3, 1))))))
        assert rel_err(Wn.grad, central_diff(lambda w: (w @ x).sum(), W)) < 1e-6

    def test_fresh_tapes_identical(self):
        def grads():
            t = nx.Tape(7)
            x = t.leaf(np.linspace(-1, 1, 5))
            noise = t.const(t.rng.standard_normal((5, 1)))
            nx.backward(nx.total(nx.mul(nx.tanh(x), noise)))
            return x.grad

        assert np.array_equal(grads(), grads())

    def test_replay_bit_identical(self):
        def run():
            t = nx.Tape(11)
            x = t.leaf(t.rng.standard_normal((4, 3)))
            return nx.log_softmax(nx.softplus(x)).value

        assert run().tobytes() == run().tobytes()


class TestFiniteDiffCheck:
    def test_half_norm_squared(self):
        p = {"p": np.random.default_rng(0).normal(size=(4, 2))}
        err = nx.finite_diff_check(lambda t, l: nx.scale(nx.total(nx.square(l["p"])), 0.5), p)
        assert err < 1e-8

    def test_constant(self):
        p = {"p": np.ones((3, 1))}
        err = nx.finite_diff_check(lambda t, l: nx.mul(t.const(4.0), t.const(1.0)), p)
        assert err < 1e-10

    def test_nonfinite_raises(self):
        p = {"p": np.array([[1e-6]])}
        with pytest.raises((EvaluationError, DomainError)):
            nx.finite_diff_check(lambda t, l: nx.total(nx.log(l["p"])), p, step=1e-5)

    def test_detects_wrong_gradient(self):
        # relu chain evaluated at the kink has a one-sided mismatch
        p = {"p": np.array([[0.0]])}
        err = nx.finite_diff_check(lambda t, l: nx.total(nx.relu(l["p"])), p)
        assert err > 0.4
