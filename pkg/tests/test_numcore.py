import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import sparse

from rgatcoref import numcore as nc
from rgatcoref.errors import DimensionError, NumericalError


def _rng(seed=0):
    return np.random.default_rng(seed)


def _check(f, params, tol=1e-6):
    report = nc.grad_check(f, params, tol=tol)
    assert report.passed, str(report)


class TestNodeBasics:
    def test_vectors_become_columns(self):
        x = nc.constant(np.arange(3.0))
        assert x.shape == (3, 1)

    def test_param_copies(self):
        a = np.ones((2, 2))
        p = nc.param(a)
        a[0, 0] = 5.0
        assert p.value[0, 0] == 1.0
        assert p.requires_grad and p.grad.shape == (2, 2)

    def test_constant_has_no_grad(self):
        assert nc.constant(np.ones((2, 2))).grad is None

    def test_non_finite_result_raises(self):
        x = nc.constant(np.array([[np.inf]]))
        with np.errstate(invalid="ignore"), pytest.raises(NumericalError):
            nc.scale(x, 0.0)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(DimensionError):
            nc.matmul(nc.constant(np.ones((2, 3))), nc.constant(np.ones((2, 3))))


class TestForwardValues:
    def test_softmax_columns_sum_to_one(self):
        x = nc.constant(_rng().standard_normal((4, 6)))
        np.testing.assert_allclose(nc.softmax(x, axis=0).value.sum(axis=0), 1.0, atol=1e-12)

    def test_log_softmax_matches_log_of_softmax(self):
        x = nc.constant(_rng(1).standard_normal((3, 5)) * 30)
        np.testing.assert_allclose(nc.log_softmax(x, axis=0).value, np.log(nc.softmax(x, axis=0).value), atol=1e-10)

    def test_softmax_is_shift_invariant_at_large_inputs(self):
        x = np.array([[1000.0], [1001.0], [1002.0]])
        np.testing.assert_allclose(nc.softmax(nc.constant(x)).value, nc.softmax(nc.constant(x - 1000)).value)

    def test_matmul_const_dense_and_sparse_agree(self):
        x = nc.constant(_rng(2).standard_normal((3, 4)))
        c = _rng(3).standard_normal((4, 2))
        np.testing.assert_allclose(nc.matmul_const(x, c).value, nc.matmul_const(x, sparse.csr_matrix(c)).value)

    def test_matmul_const_keeps_dtype(self):
        x = nc.constant(np.ones((2, 3), dtype=np.float32))
        assert nc.matmul_const(x, sparse.identity(3, format="csr")).value.dtype == np.float32

    def test_split_inverts_concat(self):
        parts = [_rng(k).standard_normal((k + 1, 2)) for k in range(3)]
        joined = nc.concat([nc.constant(p) for p in parts], axis=0)
        for got, want in zip(nc.split(joined, [1, 2, 3], axis=0), parts):
            np.testing.assert_array_equal(got.value, want)

    def test_broadcast_add(self):
        a = nc.constant(np.zeros((3, 4)))
        b = nc.constant(np.arange(3.0))
        np.testing.assert_array_equal(nc.add(a, b).value, np.repeat(np.arange(3.0)[:, None], 4, axis=1))


class TestGradients:
    def test_matmul_and_tanh(self):
        params = {"w": _rng(0).standard_normal((3, 4)), "x": _rng(1).standard_normal((4, 2))}
        _check(lambda p: nc.sum_reduce(nc.tanh(nc.matmul(p["w"], p["x"]))), params)

    def test_broadcast_mul_add(self):
        params = {"a": _rng(2).standard_normal((3, 4)), "b": _rng(3).standard_normal((3, 1)), "c": _rng(4).standard_normal((1, 4))}
        _check(lambda p: nc.sum_squares(nc.add(nc.mul(p["a"], p["b"]), p["c"])), params)

    def test_softmax_both_axes(self):
        params = {"x": _rng(5).standard_normal((3, 4))}
        weights = nc.constant(_rng(6).standard_normal((3, 4)))
        for axis in (0, 1):
            _check(lambda p: nc.sum_reduce(nc.mul(nc.softmax(p["x"], axis=axis), weights)), params)
            _check(lambda p: nc.sum_reduce(nc.mul(nc.log_softmax(p["x"], axis=axis), weights)), params)

    def test_relu_and_maximum_away_from_kinks(self):
        x = _rng(7).standard_normal((4, 3))
        x[np.abs(x) < 0.1] = 0.5
        y = x + np.where(_rng(8).random((4, 3)) < 0.5, 1.0, -1.0)
        _check(lambda p: nc.sum_squares(nc.add(nc.relu(p["x"]), nc.maximum(p["x"], p["y"]))), {"x": x, "y": y})

    def test_concat_slice_transpose_mean(self):
        params = {"a": _rng(9).standard_normal((2, 3)), "b": _rng(10).standard_normal((4, 3))}

        def f(p):
            c = nc.concat([p["a"], p["b"]], axis=0)
            s = nc.slice_axis(c, 1, 5, axis=0)
            return nc.mean(nc.mul(nc.transpose(s), nc.transpose(s)))

        _check(f, params)

    def test_sparse_matmul_const(self):
        c = sparse.random(5, 3, density=0.5, random_state=0, format="csr")
        _check(lambda p: nc.sum_squares(nc.matmul_const(p["x"], c)), {"x": _rng(11).standard_normal((2, 5))})

    def test_stack_sum_and_sum_axis(self):
        params = {"a": _rng(12).standard_normal((2, 2)), "b": _rng(13).standard_normal((2, 2))}
        _check(lambda p: nc.sum_squares(nc.sum_reduce(nc.stack_sum([p["a"], p["b"], p["a"]]), axis=1)), params)

    def test_shared_subexpression_accumulates(self):
        x = nc.param(np.array([[2.0]]))
        y = nc.mul(x, x)
        z = nc.add(y, y)
        nc.backward(z)
        np.testing.assert_allclose(x.grad, [[8.0]])

    def test_non_scalar_root_is_seeded_with_ones(self):
        x = nc.param(np.ones((2, 2)))
        nc.backward(nc.scale(x, 3.0))
        np.testing.assert_array_equal(x.grad, np.full((2, 2), 3.0))

    def test_seed_shape_must_match(self):
        with pytest.raises(DimensionError):
            nc.backward(nc.param(np.ones((2, 2))), np.ones((3, 1)))


class TestRelativeError:
    def test_floor_applies(self):
        assert nc.relative_error(np.array(0.0), np.array(1e-9), floor=1e-6) == pytest.approx(1e-3)

    def test_report_lists_failures(self):
        report = nc.GradCheckReport({"ok": 1e-8, "bad": 1e-2}, tol=1e-4)
        assert report.failures == ["bad"] and not report.passed
        assert "FAIL" in str(report)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.floats(-50, 50)))
def test_softmax_stays_on_simplex(x):
    p = nc.softmax(nc.constant(x), axis=0).value
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-12)
