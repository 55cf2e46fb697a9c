import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gil.errors import CapabilityError, ContractError, DimensionError, NumericError
from gil.nn import AdamState, Graph, Layer, MLPParams, adam_step, backward, forward, gradients, input_gradient_node, predict
from gil.nn import autodiff as ad

from helpers import OP_CASES, central_difference, check_op, max_relative_error, scalar_forward

GOLDEN = Path(__file__).parent / "golden" / "mlp_forward_seed0.json"


@pytest.mark.parametrize("name,shapes,builder", OP_CASES, ids=[c[0] for c in OP_CASES])
def test_op_gradient_matches_finite_differences(name, shapes, builder):
    for seed in range(3):
        assert check_op(builder, shapes, seed) < 1e-4


class TestForward:
    def test_identity_layer(self):
        p = MLPParams([Layer(np.eye(3), np.zeros(3), "linear")])
        out = forward(p, np.array([[1.0, 2.0, 3.0]]), Graph())
        np.testing.assert_array_equal(out.value, [[1.0, 2.0, 3.0]])

    def test_relu_clamps(self):
        p = MLPParams([Layer(np.array([[2.0]]), np.array([1.0]), "relu")])
        assert forward(p, np.array([[-3.0]]), Graph()).value[0, 0] == 0.0

    def test_golden_vector(self):
        golden = json.loads(GOLDEN.read_text())["output"]
        rng = np.random.default_rng(0)
        p = MLPParams.build([4, 5, 3], ["relu", "tanh"], rng)
        x = rng.standard_normal((3, 4))
        out = forward(p, x, Graph()).value
        np.testing.assert_allclose(out, golden, rtol=0, atol=1e-12)
        np.testing.assert_allclose([scalar_forward(p, r) for r in x], golden, rtol=0, atol=1e-15)

    def test_predict_is_bit_identical_to_forward(self):
        rng = np.random.default_rng(3)
        p = MLPParams.build([6, 8, 8, 2], "leaky_relu", rng)
        x = rng.standard_normal((5, 6))
        assert np.array_equal(predict(p, x), forward(p, x, Graph()).value)

    def test_shape_mismatch_names_layer(self):
        p = MLPParams.build([4, 3], "linear", np.random.default_rng(0))
        with pytest.raises(DimensionError) as err:
            forward(p, np.ones((2, 5)), Graph())
        assert err.value.layer == 0

    def test_layers_must_chain(self):
        with pytest.raises(DimensionError) as err:
            MLPParams([Layer(np.ones((2, 3)), np.zeros(3)), Layer(np.ones((4, 1)), np.zeros(1))])
        assert err.value.layer == 1

    def test_replay_is_bit_identical(self):
        def run():
            rng = np.random.default_rng(11)
            p = MLPParams.build([5, 7, 3], "tanh", rng)
            g = Graph()
            out = forward(p, rng.standard_normal((4, 5)), g)
            loss = ad.mean(ad.square(out))
            grads = backward(g, loss)
            return g.values, gradients(p, g, grads)

        (v1, g1), (v2, g2) = run(), run()
        assert all(np.array_equal(a, b) for a, b in zip(v1, v2))
        assert all(np.array_equal(a, b) for a, b in zip(g1, g2))

    def test_non_finite_value_is_rejected(self):
        g = Graph()
        with pytest.raises(NumericError):
            ad.exp(g.variable([1000.0]))


class TestBackward:
    def test_chain_rule_scalar(self):
        g = Graph()
        w, x = g.variable(2.0), g.constant(3.0)
        y = w * x
        grads = backward(g, y * y)
        assert grads[w.id] == pytest.approx(36.0)

    def test_untouched_leaf_gets_zero(self):
        g = Graph()
        w = g.variable([1.0, 2.0])
        u = g.variable(5.0)
        grads = backward(g, ad.total(ad.square(u)))
        np.testing.assert_array_equal(grads[w.id], [0.0, 0.0])

    def test_non_scalar_loss(self):
        g = Graph()
        w = g.variable([1.0, 2.0])
        with pytest.raises(ContractError):
            backward(g, w * 2.0)

    @pytest.mark.parametrize("seed", range(3))
    def test_mlp_squared_error_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        p = MLPParams.build([4, 6, 3], ["tanh", "linear"], rng)
        x, y = rng.standard_normal((5, 4)), rng.standard_normal((5, 3))

        def loss_value():
            return float(np.mean((predict(p, x) - y) ** 2))

        g = Graph()
        loss = ad.mean(ad.square(forward(p, x, g) - y))
        grads = gradients(p, g, backward(g, loss))
        for a, ga in zip(p.arrays(), grads):
            assert max_relative_error(ga, central_difference(loss_value, a)) < 1e-4


def _penalty_value(p, x):
    g = Graph()
    grad = input_gradient_node(p, g.constant(x), g)
    return float(np.mean((np.linalg.norm(grad.value, axis=1) - 1.0) ** 2))


def _penalty_grads(p, x):
    g = Graph()
    grad = input_gradient_node(p, g.constant(x), g)
    loss = ad.mean(ad.square(ad.norm(grad, axis=1) - 1.0))
    return gradients(p, g, backward(g, loss))


class TestInputGradient:
    def test_linear_critic(self):
        w = np.array([[1.0], [-2.0], [0.5]])
        p = MLPParams([Layer(w, np.array([0.3]), "linear")])
        for x in (np.zeros((1, 3)), np.array([[5.0, -1.0, 2.0]])):
            g = Graph()
            np.testing.assert_array_equal(input_gradient_node(p, g.constant(x), g).value, w.T)

    def test_all_positive_relu(self):
        rng = np.random.default_rng(0)
        w1 = np.abs(rng.standard_normal((3, 4)))
        w2 = rng.standard_normal((4, 1))
        p = MLPParams([Layer(w1, np.ones(4), "relu"), Layer(w2, np.zeros(1), "linear")])
        g = Graph()
        node = input_gradient_node(p, g.constant(np.ones((2, 3))), g)
        np.testing.assert_allclose(node.value, np.tile((w1 @ w2).T, (2, 1)), atol=1e-14)

    def test_matches_finite_differences_of_output(self):
        rng = np.random.default_rng(5)
        p = MLPParams.build([3, 6, 1], "leaky_relu", rng)
        x = rng.standard_normal((1, 3))
        g = Graph()
        node = input_gradient_node(p, g.constant(x), g)
        fd = central_difference(lambda: float(predict(p, x)[0, 0]), x)
        assert max_relative_error(node.value, fd) < 1e-6

    def test_tanh_is_unsupported(self):
        p = MLPParams.build([3, 4, 1], ["tanh", "linear"], np.random.default_rng(0))
        g = Graph()
        with pytest.raises(CapabilityError, match="tanh"):
            input_gradient_node(p, g.constant(np.ones((1, 3))), g)

    @pytest.mark.parametrize("seed", range(3))
    def test_penalty_second_derivative(self, seed):
        rng = np.random.default_rng(100 + seed)
        p = MLPParams.build([4, 8, 1], "leaky_relu", rng)
        x = rng.standard_normal((6, 4))
        for a, ga in zip(p.arrays(), _penalty_grads(p, x)):
            fd = central_difference(lambda: _penalty_value(p, x), a)
            assert max_relative_error(ga, fd, floor=1e-8) < 1e-3


class TestAdam:
    def _single(self, theta, grad, **hp):
        p = MLPParams([Layer(np.array([[theta]]), np.array([0.0]))])
        state = AdamState.for_params(p, **hp)
        adam_step(p, [np.array([[grad]]), np.zeros(1)], state)
        return p, state

    def test_first_step_is_minus_lr_sign(self):
        p, state = self._single(0.0, 1.0, lr=1e-3)
        assert state.t == 1
        assert p.layers[0].weight[0, 0] == pytest.approx(-1e-3, rel=1e-6)

    def test_zero_gradient_leaves_params(self):
        p, _ = self._single(0.7, 0.0)
        assert p.layers[0].weight[0, 0] == 0.7

    def test_two_steps_against_unrolled_recurrence(self):
        lr, b1, b2, eps, g = 0.01, 0.9, 0.999, 1e-8, 0.5
        p = MLPParams([Layer(np.array([[1.0]]), np.array([0.0]))])
        state = AdamState.for_params(p, lr=lr, beta1=b1, beta2=b2, eps=eps)
        for _ in range(2):
            adam_step(p, [np.array([[g]]), np.zeros(1)], state)
        # hand-unrolled: m1=(1-b1)g, m2=b1 m1+(1-b1)g; same for v with g^2
        theta = 1.0
        m = v = 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
        assert p.layers[0].weight[0, 0] == pytest.approx(theta, abs=1e-15)

    def test_non_finite_gradient_names_parameter(self):
        p = MLPParams([Layer(np.zeros((1, 1)), np.zeros(1))])
        with pytest.raises(NumericError, match="0.bias"):
            adam_step(p, [np.zeros((1, 1)), np.array([np.nan])], AdamState.for_params(p))

    @settings(max_examples=50, deadline=None)
    @given(g=st.lists(st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-6), min_size=1, max_size=4),
           steps=st.integers(1, 30))
    def test_step_bounded_by_lr_for_stationary_gradients(self, g, steps):
        grad = np.array([g])
        p = MLPParams([Layer(np.zeros((1, len(g))), np.zeros(len(g)))])
        state = AdamState.for_params(p, lr=1e-2)
        for _ in range(steps):
            before = p.layers[0].weight.copy()
            adam_step(p, [grad, np.zeros(len(g))], state)
            assert np.all(np.abs(p.layers[0].weight - before) <= 1e-2 * (1 + 1e-9))
