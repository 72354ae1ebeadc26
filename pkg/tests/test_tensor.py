"""Tensor core: op semantics, reverse-mode gradients, verification oracle."""

import math

import numpy as np
import pytest

import linattn.tensor as T
from linattn.errors import ContractError, GraphError, ShapeError
from linattn.tensor import Tensor, backward, finite_difference_check, no_grad

LN2 = 0.6931471805599453


def t64(data, grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        a = t64([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(t64(np.eye(2)), a)
        np.testing.assert_array_equal(out.data, a.data)

    def test_hand_product(self):
        out = T.matmul(t64([[1.0, 2.0]]), t64([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(t64(np.zeros((2, 3))), t64(np.zeros((2, 3))))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a = t64(rng.standard_normal((5, 4)), grad=True)
        b = t64(rng.standard_normal((4, 3)), grad=True)
        c = t64(rng.standard_normal((5, 3)))

        def f(p):
            return T.sum(T.mul(T.matmul(p["a"], p["b"]), c))

        report = finite_difference_check(f, {"a": a, "b": b}, step=1e-5)
        assert report["a"].max_rel_err <= 1e-6
        assert report["b"].max_rel_err <= 1e-6

    def test_batched_gradient(self):
        rng = np.random.default_rng(1)
        a = t64(rng.standard_normal((2, 3, 4)), grad=True)
        b = t64(rng.standard_normal((4, 5)), grad=True)

        def f(p):
            return T.sum(T.square(T.matmul(p["a"], p["b"])))

        report = finite_difference_check(f, {"a": a, "b": b}, step=1e-5)
        assert max(r.max_rel_err for r in report.values()) <= 1e-6


class TestSoftplus:
    def test_zero(self):
        assert T.softplus(t64(0.0)).item() == pytest.approx(LN2, abs=1e-12)

    def test_large_negative_stays_positive(self):
        assert T.softplus(t64(-40.0)).item() > 0.0
        assert T.softplus(t64(-800.0)).item() > 0.0

    def test_value_at_ten(self):
        # ln(1 + e^10) evaluated in extended precision
        assert T.softplus(t64(10.0)).item() == pytest.approx(10.000045398899216865, abs=1e-12)

    def test_derivative_is_sigmoid(self):
        x = t64(np.linspace(-6, 6, 25), grad=True)
        grads = backward(T.sum(T.softplus(x)))
        expected = 1.0 / (1.0 + np.exp(-x.data))
        np.testing.assert_allclose(grads[x].data, expected, atol=1e-12)


class TestSigmoid:
    def test_symmetry_point(self):
        assert T.sigmoid(t64(0.0)).item() == pytest.approx(0.5, abs=1e-15)

    def test_complement_identity(self):
        x = np.random.default_rng(2).uniform(-30, 30, size=100)
        s = T.sigmoid(t64(x)).data + T.sigmoid(t64(-x)).data
        np.testing.assert_allclose(s, 1.0, atol=1e-12)

    def test_value_at_two(self):
        assert T.sigmoid(t64(2.0)).item() == pytest.approx(0.88079707797788244406, abs=1e-12)

    def test_overflow_safe(self):
        out = T.sigmoid(t64([700.0, -700.0, 1000.0, -1000.0]))
        assert np.all(np.isfinite(out.data))
        assert out.data[1] > 0 and out.data[3] > 0


class TestElementwise:
    def test_add(self):
        np.testing.assert_array_equal(T.add(t64([1.0, 2.0]), t64([3.0, 4.0])).data, [4.0, 6.0])

    def test_mean_of_square(self):
        assert T.mean(T.square(t64([3.0, 4.0]))).item() == pytest.approx(12.5)

    def test_gelu_gradient(self):
        rng = np.random.default_rng(3)
        x = t64(rng.standard_normal(12), grad=True)
        report = finite_difference_check(lambda p: T.sum(T.gelu(p["x"])), {"x": x}, step=1e-5)
        assert report["x"].max_rel_err <= 1e-5

    def test_div_by_zero_propagates_nonfinite(self):
        out = T.div(t64([1.0, -1.0, 0.0]), t64([0.0, 0.0, 0.0]))
        assert not np.any(np.isfinite(out.data))

    def test_broadcast_gradients_sum_over_expanded_axes(self):
        rng = np.random.default_rng(4)
        vec = t64(rng.standard_normal(4), grad=True)
        mat = t64(rng.standard_normal((3, 4)), grad=True)

        def f(p):
            return T.sum(T.square(T.add(p["mat"], p["vec"])))

        report = finite_difference_check(f, {"vec": vec, "mat": mat}, step=1e-5)
        assert max(r.max_rel_err for r in report.values()) <= 1e-6

    def test_scale_and_reductions(self):
        x = t64(np.arange(6, dtype=np.float64).reshape(2, 3), grad=True)
        out = T.scale(T.sum(x, axis=0), 2.0)
        np.testing.assert_array_equal(out.data, [6.0, 10.0, 14.0])
        grads = backward(T.sum(out))
        np.testing.assert_array_equal(grads[x].data, np.full((2, 3), 2.0))


class TestSoftmaxRows:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax_rows(t64([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_shift_invariance_no_overflow(self):
        np.testing.assert_allclose(T.softmax_rows(t64([[1000.0, 1000.0]])).data, [[0.5, 0.5]])
        x = np.random.default_rng(5).standard_normal((4, 6))
        a = T.softmax_rows(t64(x)).data
        b = T.softmax_rows(t64(x + 123.0)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_known_row(self):
        out = T.softmax_rows(t64([[1.0, 2.0, 3.0]])).data[0]
        expected = [0.090030573170380458, 0.24472847105479765, 0.66524095577482189]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_rows_sum_to_one(self):
        x = np.random.default_rng(6).standard_normal((50, 9)) * 10
        out = T.softmax_rows(t64(x)).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


class TestBackward:
    def test_sum_gives_ones(self):
        w = t64(np.random.default_rng(7).standard_normal((2, 2)), grad=True)
        grads = backward(T.sum(w))
        np.testing.assert_array_equal(grads[w].data, np.ones((2, 2)))

    def test_sum_square_gives_2w(self):
        w = t64(np.random.default_rng(8).standard_normal((3, 3)), grad=True)
        grads = backward(T.sum(T.square(w)))
        np.testing.assert_allclose(grads[w].data, 2 * w.data, atol=1e-14)

    def test_non_scalar_loss_rejected(self):
        w = t64(np.ones(3), grad=True)
        with pytest.raises(ContractError, match="scalar"):
            backward(T.square(w))

    def test_second_backward_rejected(self):
        w = t64(np.ones(3), grad=True)
        loss = T.sum(T.square(w))
        backward(loss)
        with pytest.raises(GraphError):
            backward(loss)

    def test_reusing_consumed_subgraph_rejected(self):
        w = t64(np.ones(3), grad=True)
        mid = T.square(w)
        backward(T.sum(mid))
        with pytest.raises(GraphError):
            backward(T.sum(T.mul(mid, mid)))

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        w_data = rng.standard_normal((4, 4))

        def run():
            w = t64(w_data, grad=True)
            return backward(T.sum(T.softplus(T.matmul(w, w))))[w].data

        np.testing.assert_array_equal(run(), run())

    def test_params_argument_fills_zeros(self):
        w = t64(np.ones(2), grad=True)
        unused = t64(np.ones(3), grad=True)
        grads = backward(T.sum(w), params={"w": w, "unused": unused})
        np.testing.assert_array_equal(grads[unused].data, np.zeros(3))

    def test_constant_inputs_are_not_leaves(self):
        w = t64(np.ones(2), grad=True)
        c = t64([5.0, 7.0])
        grads = backward(T.sum(T.mul(w, c)))
        assert w in grads and c not in grads


class TestNoGrad:
    def test_no_graph_built(self):
        w = t64(np.ones(2), grad=True)
        with no_grad():
            out = T.sum(T.square(w))
        assert not out.requires_grad
        with pytest.raises(ContractError):
            backward(out)


class TestFiniteDifferenceCheck:
    def test_linear_reports_zero(self):
        w = t64(np.random.default_rng(10).standard_normal((3, 2)), grad=True)
        report = finite_difference_check(lambda p: T.sum(p["w"]), {"w": w}, step=1e-5)
        assert report["w"].max_rel_err <= 1e-9

    def test_orthogonality_deviation_gradient(self):
        # f = ||W^T W - I||_F^2 has analytic gradient 4 W (W^T W - I)
        rng = np.random.default_rng(11)
        w = t64(rng.standard_normal((4, 4)), grad=True)

        def f(p):
            dev = T.sub(T.matmul(T.swapaxes(p["w"], -1, -2), p["w"]), t64(np.eye(4)))
            return T.sum(T.square(dev))

        grads = backward(f({"w": w}), params={"w": w})
        analytic = 4.0 * w.data @ (w.data.T @ w.data - np.eye(4))
        np.testing.assert_allclose(grads[w].data, analytic, rtol=1e-10)
        report = finite_difference_check(f, {"w": w}, step=1e-5)
        assert report["w"].max_rel_err <= 1e-6

    def test_zero_step_rejected(self):
        w = t64(np.ones(2), grad=True)
        with pytest.raises(ContractError):
            finite_difference_check(lambda p: T.sum(p["w"]), {"w": w}, step=0.0)

    def test_nonfinite_marks_failed(self):
        w = t64(np.zeros(1), grad=True)

        def f(p):
            return T.sum(T.log(p["w"]))  # log(+-h) explodes around zero

        report = finite_difference_check(f, {"w": w}, step=1e-5)
        assert report["w"].failed


class TestRandomGraphProperty:
    """Composed graphs of the public ops agree with finite differences."""

    def test_random_compositions(self):
        rng = np.random.default_rng(12)
        unary = [T.softplus, T.sigmoid, T.gelu, T.square, T.exp,
                 lambda t: T.scale(t, 0.7), T.abs]
        for trial in range(20):
            rows, inner, cols = rng.integers(2, 5, size=3)
            a = t64(rng.standard_normal((rows, inner)), grad=True)
            b = t64(rng.standard_normal((inner, cols)), grad=True)
            op1 = unary[rng.integers(len(unary))]
            op2 = unary[rng.integers(len(unary))]

            def f(p):
                h = T.matmul(op1(p["a"]), p["b"])
                return T.mean(T.square(op2(h)))

            report = finite_difference_check(f, {"a": a, "b": b}, step=1e-5)
            worst = max(r.max_rel_err for r in report.values())
            assert worst <= 1e-4, f"trial {trial}: rel err {worst}"


class TestStructuralOps:
    def test_concat_and_getitem_gradients(self):
        rng = np.random.default_rng(13)
        a = t64(rng.standard_normal((3, 2)), grad=True)
        b = t64(rng.standard_normal((3, 4)), grad=True)

        def f(p):
            joined = T.concat([p["a"], p["b"]], axis=-1)
            return T.sum(T.square(joined[:, 1:5]))

        report = finite_difference_check(f, {"a": a, "b": b}, step=1e-5)
        assert max(r.max_rel_err for r in report.values()) <= 1e-6

    def test_embedding_gradient_scatters(self):
        table = t64(np.random.default_rng(14).standard_normal((6, 3)), grad=True)
        ids = np.array([[1, 1, 4]])
        grads = backward(T.sum(T.embedding(table, ids)))
        expected = np.zeros((6, 3))
        expected[1] = 2.0
        expected[4] = 1.0
        np.testing.assert_array_equal(grads[table].data, expected)

    def test_embedding_rejects_out_of_range(self):
        table = t64(np.zeros((4, 2)), grad=True)
        with pytest.raises(ContractError):
            T.embedding(table, np.array([0, 5]))

    def test_cross_entropy_matches_manual(self):
        logits = t64([[2.0, 0.5, -1.0], [0.0, 0.0, 0.0]], grad=True)
        labels = np.array([0, 2])
        loss = T.cross_entropy(logits, labels)
        row0 = math.log(sum(math.exp(v) for v in [2.0, 0.5, -1.0])) - 2.0
        row1 = math.log(3.0)
        assert loss.item() == pytest.approx((row0 + row1) / 2, abs=1e-12)
        report = finite_difference_check(
            lambda p: T.cross_entropy(p["logits"], labels), {"logits": logits}, step=1e-6)
        assert report["logits"].max_rel_err <= 1e-6


class TestDtypeDiscipline:
    def test_mixed_dtypes_rejected(self):
        a = Tensor(np.zeros(2, dtype=np.float32))
        b = Tensor(np.zeros(2, dtype=np.float64))
        with pytest.raises(ShapeError, match="float32"):
            T.add(a, b)

    def test_ops_preserve_dtype(self):
        x = Tensor(np.ones(3, dtype=np.float32))
        assert T.softplus(x).dtype == np.float32
        assert T.gelu(x).dtype == np.float32
        assert T.softmax_rows(Tensor(np.ones((1, 3), dtype=np.float32))).dtype == np.float32

    def test_determinism_bit_identical(self):
        x = np.random.default_rng(15).standard_normal((8, 8)).astype(np.float32)
        a = T.softmax_rows(Tensor(x)).data
        b = T.softmax_rows(Tensor(x)).data
        assert np.array_equal(a, b)
