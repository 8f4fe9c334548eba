"""Tensor core: forward semantics, tape mechanics, gradient correctness."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhrkit import tensor as T
from conftest import check_gradients, finite_difference, assert_grads_close

finite_rows = st.lists(
    st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=5),
    min_size=1,
    max_size=4,
).filter(lambda rows: len({len(r) for r in rows}) == 1)


def t(values, grad=False):
    return T.Tensor(np.asarray(values, dtype=np.float64), requires_grad=grad)


class TestMatmul:
    def test_identity(self, rng):
        m = rng.normal(size=(2, 2))
        out = T.matmul(t(np.eye(2)), t(m))
        np.testing.assert_array_equal(out.array, m)

    def test_hand_arithmetic(self):
        out = T.matmul(t([[1, 2], [3, 4]]), t([[0], [1]]))
        np.testing.assert_array_equal(out.array, [[2], [4]])

    def test_inner_dim_mismatch_names_both_shapes(self):
        with pytest.raises(T.ShapeError, match=r"\[2, 3\].*\[2, 2\]"):
            T.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 2))))

    def test_grad_of_sum_is_column_sums(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        check_gradients(lambda lv: T.sum_all(T.matmul(lv["a"], lv["b"])), {"a": a, "b": b})

    def test_batched_shared_weight(self, rng):
        x = rng.normal(size=(5, 3, 4))
        w = rng.normal(size=(4, 2))
        out = T.matmul(t(x), t(w))
        assert out.shape == (5, 3, 2)
        np.testing.assert_allclose(out.array, x @ w)
        check_gradients(
            lambda lv: T.mean_all(T.tanh(T.matmul(lv["x"], lv["w"]))), {"x": x, "w": w}
        )

    def test_batched_both_sides(self, rng):
        a = rng.normal(size=(4, 3, 2))
        b = rng.normal(size=(4, 2, 3))
        check_gradients(lambda lv: T.sum_all(T.matmul(lv["a"], lv["b"])), {"a": a, "b": b})

    def test_batch_dim_mismatch(self):
        with pytest.raises(T.ShapeError, match="batch"):
            T.matmul(t(np.zeros((2, 3, 4))), t(np.zeros((3, 4, 5))))


class TestSoftmax:
    def test_constant_row_is_uniform(self):
        out = T.softmax_rows(t([[7.0, 7.0, 7.0]]))
        np.testing.assert_allclose(out.array, [[1 / 3] * 3], atol=1e-15)

    def test_closed_form(self):
        out = T.softmax_rows(t([[0.0, np.log(3.0)]]))
        np.testing.assert_allclose(out.array, [[0.25, 0.75]], atol=1e-15)

    def test_large_inputs_stay_finite(self):
        # High-precision reference: exp(0.1)/(1+exp(0.1)) after shifting by the
        # row max, evaluated with mpmath.
        import mpmath

        mpmath.mp.dps = 50
        e = mpmath.exp(mpmath.mpf("0.1"))
        expected = [float(1 / (1 + e)), float(e / (1 + e))]
        out = T.softmax_rows(t([[1000.0, 1000.1]]))
        assert np.isfinite(out.array).all()
        assert abs(out.array.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(out.array[0], expected, rtol=1e-12)

    @given(finite_rows)
    @settings(max_examples=100, deadline=None)
    def test_rows_sum_to_one(self, rows):
        out = T.softmax_rows(t(rows))
        np.testing.assert_allclose(out.array.sum(axis=-1), 1.0, atol=1e-12)

    def test_gradient(self, rng):
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 4))
        check_gradients(
            lambda lv: T.sum_all(T.mul(T.softmax_rows(lv["x"]), t(w))), {"x": x}
        )


class TestElementwise:
    def test_fixed_points(self):
        assert T.tanh(t([0.0])).item() == 0.0
        assert T.sigmoid(t([0.0])).item() == 0.5

    def test_add_identity(self, rng):
        x = rng.normal(size=(3, 3))
        np.testing.assert_array_equal(T.add(t(x), t(np.zeros((3, 3)))).array, x)

    def test_scalar_broadcast(self, rng):
        x = rng.normal(size=(2, 3))
        out = T.add(t(x), t([2.0]))
        np.testing.assert_allclose(out.array, x + 2.0)
        check_gradients(lambda lv: T.sum_all(T.mul(lv["s"], lv["x"])), {"s": np.array([1.5]), "x": x})

    def test_incompatible_shapes_rejected(self):
        with pytest.raises(T.ShapeError, match=r"\[2, 3\] vs \[3, 2\]"):
            T.add(t(np.zeros((2, 3))), t(np.zeros((3, 2))))
        with pytest.raises(T.ShapeError):
            # Row broadcasting is deliberately unsupported.
            T.add(t(np.zeros((2, 3))), t(np.zeros((1, 3))))

    def test_sigmoid_grad_matches_finite_differences(self, rng):
        x = rng.normal(size=(4, 3))
        check_gradients(lambda lv: T.sum_all(T.sigmoid(lv["x"])), {"x": x}, rel=1e-4)

    @pytest.mark.parametrize("op", [T.tanh, T.relu, T.sigmoid])
    def test_unary_grads(self, op, rng):
        x = rng.normal(size=(3, 5)) + 0.1  # keep away from relu kink
        check_gradients(lambda lv: T.mean_all(op(lv["x"])), {"x": x})


class TestShapeOps:
    def test_slice_concat_roundtrip(self, rng):
        x = rng.normal(size=(2, 3, 8))
        parts = [T.slice_last(t(x), i * 2, (i + 1) * 2) for i in range(4)]
        back = T.concat_last(parts)
        np.testing.assert_array_equal(back.array, x)

    def test_slice_grad(self, rng):
        x = rng.normal(size=(3, 6))
        check_gradients(lambda lv: T.sum_all(T.slice_last(lv["x"], 1, 4)), {"x": x})

    def test_concat_grad(self, rng):
        a = rng.normal(size=(2, 3))
        b = rng.normal(size=(2, 2))
        check_gradients(
            lambda lv: T.mean_all(T.mul(T.concat_last([lv["a"], lv["b"]]),
                                        T.concat_last([lv["a"], lv["b"]]))),
            {"a": a, "b": b},
        )

    def test_token_stack_roundtrip(self, rng):
        x = rng.normal(size=(4, 3, 5))
        tokens = [T.token_at(t(x), i) for i in range(3)]
        np.testing.assert_array_equal(T.stack_tokens(tokens).array, x)
        check_gradients(lambda lv: T.sum_all(T.tanh(T.token_at(lv["x"], 1))), {"x": x})

    def test_tile_batch_grad(self, rng):
        x = rng.normal(size=(1, 4))
        check_gradients(lambda lv: T.sum_all(T.mul(T.tile_batch(lv["x"], 3), lv["x2"])),
                        {"x": x, "x2": rng.normal(size=(3, 1, 4))})

    def test_row_scale(self, rng):
        w = rng.normal(size=(3, 4))
        coeff = rng.normal(size=(5, 3))
        out = T.row_scale(t(w), coeff)
        np.testing.assert_allclose(out.array, coeff[:, :, None] * w[None])
        check_gradients(lambda lv: T.mean_all(T.row_scale(lv["w"], coeff)), {"w": w})

    def test_standardize_rows_grad(self, rng):
        x = rng.normal(size=(3, 6)) * 2.0
        check_gradients(lambda lv: T.sum_all(T.mul(T.standardize_rows(lv["x"]), lv["m"])),
                        {"x": x, "m": rng.normal(size=(3, 6))})


class TestBackward:
    def test_sum_gives_ones(self):
        w = t([1.0, -2.0, 3.0], grad=True)
        with T.Graph() as g:
            g.backward(T.sum_all(w))
        np.testing.assert_array_equal(w.grad, np.ones(3))

    def test_half_sum_of_squares_gives_w(self, rng):
        values = rng.normal(size=(4,))
        w = t(values, grad=True)
        with T.Graph() as g:
            g.backward(T.scale(T.sum_all(T.mul(w, w)), 0.5))
        np.testing.assert_allclose(w.grad, values, rtol=1e-12)

    def test_three_layer_composition(self, rng):
        # spec allows 5% of coordinates to fall back to the absolute floor
        arrays = {
            "w1": rng.normal(size=(4, 6)) * 0.5,
            "w2": rng.normal(size=(6, 5)) * 0.5,
            "w3": rng.normal(size=(5, 2)) * 0.5,
        }
        x = rng.normal(size=(3, 4))

        def make_loss(lv):
            h1 = T.tanh(T.matmul(t(x), lv["w1"]))
            h2 = T.sigmoid(T.matmul(h1, lv["w2"]))
            return T.mean_all(T.mul(T.matmul(h2, lv["w3"]), T.matmul(h2, lv["w3"])))

        check_gradients(make_loss, arrays, rel=1e-4, abs_floor=1e-6, min_fraction=0.95)

    def test_non_scalar_loss_rejected(self):
        w = t([[1.0, 2.0]], grad=True)
        with T.Graph() as g:
            out = T.mul(w, w)
            with pytest.raises(T.GraphError, match="scalar"):
                g.backward(out)

    def test_repeated_backward_accumulates(self):
        w = t([2.0, 3.0], grad=True)
        with T.Graph() as g:
            loss = T.sum_all(T.mul(w, w))
            g.backward(loss)
            g.backward(loss)
        np.testing.assert_allclose(w.grad, 2 * 2 * np.array([2.0, 3.0]))

    def test_shared_tensor_used_twice(self, rng):
        w = rng.normal(size=(3, 3))
        check_gradients(
            lambda lv: T.sum_all(T.add(T.matmul(lv["w"], lv["w"]), lv["w"])), {"w": w}
        )

    def test_no_graph_means_no_recording(self):
        w = t([1.0], grad=True)
        out = T.mul(w, w)
        assert out.graph is None and out.node_id is None


class TestProperties:
    def test_gradient_check_all_ops_seeded_trials(self):
        # one hundred seeded random configurations across the op set
        ops = ["matmul", "add", "sub", "mul", "scale", "tanh", "sigmoid", "relu",
               "softmax", "standardize", "slice", "concat"]
        for trial in range(100):
            rng = np.random.default_rng(1000 + trial)
            op = ops[trial % len(ops)]
            m, n = rng.integers(2, 5, size=2)
            x = rng.normal(size=(m, n))
            if op == "matmul":
                y = rng.normal(size=(n, int(rng.integers(2, 5))))
                check_gradients(lambda lv: T.sum_all(T.matmul(lv["x"], lv["y"])),
                                {"x": x, "y": y})
            elif op in ("add", "sub", "mul"):
                y = rng.normal(size=(m, n))
                fn = getattr(T, op)
                check_gradients(lambda lv, fn=fn: T.sum_all(T.mul(fn(lv["x"], lv["y"]), lv["x"])),
                                {"x": x, "y": y})
            elif op == "scale":
                c = float(rng.normal())
                check_gradients(lambda lv, c=c: T.sum_all(T.scale(lv["x"], c)), {"x": x})
            elif op in ("tanh", "sigmoid", "relu"):
                fn = getattr(T, op)
                shift = 0.05 if op == "relu" else 0.0
                check_gradients(lambda lv, fn=fn: T.mean_all(fn(lv["x"])), {"x": x + shift})
            elif op == "softmax":
                w = rng.normal(size=(m, n))
                check_gradients(lambda lv, w=w: T.sum_all(T.mul(T.softmax_rows(lv["x"]), t(w))),
                                {"x": x})
            elif op == "standardize":
                w = rng.normal(size=(m, n))
                check_gradients(lambda lv, w=w: T.sum_all(T.mul(T.standardize_rows(lv["x"]), t(w))),
                                {"x": 2.0 * x})
            elif op == "slice":
                stop = max(1, n // 2)
                check_gradients(lambda lv, stop=stop: T.sum_all(T.slice_last(lv["x"], 0, stop)),
                                {"x": x})
            elif op == "concat":
                y = rng.normal(size=(m, 2))
                check_gradients(lambda lv: T.mean_all(T.concat_last([lv["x"], lv["y"]])),
                                {"x": x, "y": y})

    def test_determinism_bit_identical(self):
        def run():
            rng = np.random.default_rng(7)
            w = t(rng.normal(size=(4, 4)), grad=True)
            x = t(rng.normal(size=(2, 4)))
            with T.Graph() as g:
                loss = T.mean_all(T.sigmoid(T.matmul(x, w)))
                g.backward(loss)
            return loss.item(), w.grad.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert l1 == l2
        np.testing.assert_array_equal(g1, g2)

    def test_finite_check_fires_in_debug(self):
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
            T.scale(t([1e308]), 1e308)

    def test_flat_data_view_row_major(self):
        x = t([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(x.data, [1.0, 2.0, 3.0, 4.0])
        assert x.size == 4 and x.ndim == 2
