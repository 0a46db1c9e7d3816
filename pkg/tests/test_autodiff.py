import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nimiwae import autodiff as ad
from _graphs import analytic_gradients, evaluate, random_graph
from _oracles import fd_gradient, rel_err, scalar_adam

FD_FLOOR = 1e-6


def finite(lo=-50.0, hi=50.0):
    return st.floats(lo, hi, allow_nan=False, allow_infinity=False)


class TestForwardBackward:
    def test_square_at_three(self):
        tape = ad.Tape()
        x = tape.param(3.0, "x")
        y = ad.sum_all(ad.square(x))
        np.testing.assert_allclose(tape.gradients(y)["x"], [[6.0]])

    def test_tanh_at_zero_weights(self):
        x = np.array([[0.5], [-1.0], [2.0]])
        tape = ad.Tape()
        W = tape.param(np.zeros((2, 3)), "W")
        y = ad.sum_all(ad.tanh(ad.matmul(W, tape.const(x))))
        g = tape.gradients(y)["W"]
        np.testing.assert_allclose(g, np.tile(x.T, (2, 1)))

    def test_three_layer_mlp_matches_fd(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-2, 2, (5, 4))
        arrays = {
            "W0": rng.uniform(-1, 1, (4, 6)), "b0": rng.uniform(-1, 1, (1, 6)),
            "W1": rng.uniform(-1, 1, (6, 5)), "b1": rng.uniform(-1, 1, (1, 5)),
            "W2": rng.uniform(-1, 1, (5, 1)), "b2": rng.uniform(-1, 1, (1, 1)),
        }

        def build(tape, P):
            h = ad.tanh(ad.add(ad.matmul(tape.const(x), P["W0"]), P["b0"]))
            h = ad.tanh(ad.add(ad.matmul(h, P["W1"]), P["b1"]))
            return ad.mean_all(ad.square(ad.add(ad.matmul(h, P["W2"]), P["b2"])))

        g = analytic_gradients(build, arrays)
        fd = fd_gradient(lambda a: evaluate(build, a), arrays)
        for k in arrays:
            assert rel_err(g[k], fd[k], FD_FLOOR).max() < 1e-4, k

    @pytest.mark.parametrize("seed", range(100))
    def test_random_graph_matches_fd(self, seed):
        arrays, build = random_graph(seed)
        g = analytic_gradients(build, arrays)
        fd = fd_gradient(lambda a: evaluate(build, a), arrays, h=1e-5)
        for k in arrays:
            err = rel_err(g[k], fd[k], FD_FLOOR).max()
            assert err < 1e-4, (k, build.ops, err)

    def test_adjoint_shapes_equal_value_shapes(self):
        arrays, build = random_graph(7)
        tape = ad.Tape()
        P = {k: tape.param(v, k) for k, v in arrays.items()}
        adj = tape.backward(build(tape, P))
        for node, a in zip(tape.nodes, adj):
            if a is not None:
                assert a.shape == node.value.shape

    def test_topological_order(self):
        arrays, build = random_graph(3)
        tape = ad.Tape()
        P = {k: tape.param(v, k) for k, v in arrays.items()}
        build(tape, P)
        for i, node in enumerate(tape.nodes):
            assert all(j < i for j in node.inputs)

    def test_nonscalar_seed_rejected(self):
        tape = ad.Tape()
        x = tape.param(np.ones((2, 2)), "x")
        with pytest.raises(ad.ShapeError):
            tape.backward(ad.tanh(x))

    def test_shape_mismatch_reports_node(self):
        tape = ad.Tape()
        a = tape.param(np.ones((2, 3)), "a")
        b = tape.param(np.ones((2, 2)), "b")
        with pytest.raises(ad.ShapeError) as info:
            ad.matmul(a, b)
        assert info.value.node_index == len(tape.nodes)
        with pytest.raises(ad.ShapeError):
            ad.add(a, b)

    def test_unused_parameter_gets_zero_gradient(self):
        tape = ad.Tape()
        x = tape.param(2.0, "x")
        tape.param(np.ones((3, 1)), "unused")
        g = tape.gradients(ad.sum_all(ad.exp(x)))
        np.testing.assert_array_equal(g["unused"], np.zeros((3, 1)))

    def test_reused_node_accumulates(self):
        tape = ad.Tape()
        x = tape.param(1.5, "x")
        y = ad.sum_all(ad.mul(x, x) + x)
        np.testing.assert_allclose(tape.gradients(y)["x"], [[4.0]])


class TestLogSumExp:
    def test_zeros(self):
        assert ad.logsumexp_row([0.0, 0.0]) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_single(self):
        assert ad.logsumexp_row([-3.25]) == -3.25

    def test_large_values(self):
        assert ad.logsumexp_row([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2.0), abs=1e-12)

    def test_empty_and_all_neg_inf_rejected(self):
        with pytest.raises(ValueError):
            ad.logsumexp_row([])
        with pytest.raises(ValueError):
            ad.logsumexp_row([-np.inf, -np.inf])

    def test_neg_inf_entries_ignored(self):
        assert ad.logsumexp_row([-np.inf, 0.0]) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 20), elements=finite()), finite(-100, 100))
    def test_shift_invariance(self, v, c):
        assert ad.logsumexp_row(v + c) == pytest.approx(ad.logsumexp_row(v) + c, abs=1e-12, rel=0)

    def test_rows_primitive_matches_scalar(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(4, 6)) * 30
        tape = ad.Tape()
        out = ad.logsumexp_rows(tape.const(a)).value[:, 0]
        np.testing.assert_allclose(out, [ad.logsumexp_row(row) for row in a], rtol=0, atol=1e-12)

    def test_gradient_is_softmax(self):
        v = np.array([[0.3, -1.2, 2.0]])
        tape = ad.Tape()
        x = tape.param(v, "v")
        g = tape.gradients(ad.sum_all(ad.logsumexp_rows(x)))["v"]
        soft = np.exp(v - v.max())
        np.testing.assert_allclose(g, soft / soft.sum(), atol=1e-15)


class TestAdam:
    def test_zero_gradient_fresh_state_is_identity(self):
        params = {"w": np.array([[1.0, -2.0]])}
        new, _ = ad.adam_step(params, {"w": np.zeros((1, 2))}, ad.AdamState(lr=0.1))
        np.testing.assert_array_equal(new["w"], params["w"])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 50), arrays(np.float64, (2, 3), elements=finite()))
    def test_zero_gradient_many_steps(self, steps, w):
        state = ad.AdamState(lr=0.5)
        params = {"w": w.copy()}
        for _ in range(steps):
            params, state = ad.adam_step(params, {"w": np.zeros((2, 3))}, state)
        np.testing.assert_array_equal(params["w"], w)

    def test_first_step_magnitude(self):
        new, state = ad.adam_step({"t": np.array([[0.0]])}, {"t": np.array([[1.0]])}, ad.AdamState(lr=0.01))
        np.testing.assert_allclose(new["t"], [[-0.01 / (1.0 + 1e-8)]], rtol=1e-14)
        assert state.t == 1

    def test_quadratic_matches_reference(self):
        state = ad.AdamState(lr=0.1)
        params = {"t": np.array([[1.0]])}
        path = [1.0]
        for _ in range(100):
            params, state = ad.adam_step(params, {"t": 2.0 * params["t"]}, state)
            path.append(params["t"].item())
        ref = scalar_adam(lambda t: 2.0 * t, 1.0, 0.1, 100)
        np.testing.assert_allclose(path, ref, rtol=1e-12, atol=1e-15)
        assert abs(path[-1]) < 0.5
        assert abs(path[-1]) < abs(path[0])

    def test_maximize_ascends(self):
        new, _ = ad.adam_step({"t": np.array([[0.0]])}, {"t": np.array([[1.0]])}, ad.AdamState(lr=0.01), maximize=True)
        assert new["t"].item() > 0

    def test_state_initialization(self):
        s = ad.AdamState()
        assert (s.t, s.m, s.v) == (0, {}, {})
        assert (s.beta1, s.beta2, s.eps) == (0.9, 0.999, 1e-8)

    def test_nonfinite_gradient_skips_step(self):
        params = {"w": np.ones((1, 2))}
        state = ad.AdamState()
        new, state = ad.adam_step(params, {"w": np.array([[np.nan, 1.0]])}, state)
        np.testing.assert_array_equal(new["w"], params["w"])
        assert state.skipped == 1 and state.t == 0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.adam_step({"w": np.ones((2, 2))}, {"w": np.ones((1, 2))}, ad.AdamState())
        with pytest.raises(KeyError):
            ad.adam_step({"w": np.ones((2, 2))}, {}, ad.AdamState())
