"""
Tests for the numerical core: primitives, LSTM cell, loss, gradients and Adam.
"""

import math

import numpy as np
import pytest

from app.core.errors import InputError, ModelFormatError, NonFiniteGradientError, ShapeError
from app.schemas.config import AdamConfig, ModelVariant
from app.services.models import run_gradient_check
from app.services.nn_engine import (
    GRADIENT_FLOOR,
    AdamState,
    Batch,
    FeedForwardNet,
    LstmNet,
    ParamStore,
    adam_step,
    backward,
    bce_loss,
    bce_with_logits,
    dense_forward,
    finite_diff_check,
    lstm_forward,
    relu,
    sigmoid,
    train_network,
)


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


class TestPrimitives:
    """Test suite for dense, ReLU and sigmoid."""

    def test_identity_dense(self):
        """Test identity weights with zero bias."""
        x = np.array([1.5, -2.0, 3.0])
        np.testing.assert_array_equal(dense_forward(x, np.eye(3), np.zeros(3)), x)

    def test_dense_by_hand(self):
        """Test a hand-computed 2x2 affine map."""
        out = dense_forward(np.array([1.0, 2.0]), np.array([[1.0, 1.0], [0.0, 1.0]]), np.array([0.0, 1.0]))
        assert out.tolist() == [3.0, 3.0]

    def test_dense_shape_mismatch(self):
        """Test that mismatched shapes are rejected."""
        with pytest.raises(ShapeError):
            dense_forward(np.ones(3), np.ones((2, 2)), np.zeros(2))

    def test_relu(self):
        """Test relu on negative, zero and positive values."""
        assert relu(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]

    def test_sigmoid_center(self):
        """Test sigmoid(0) = 0.5."""
        assert float(sigmoid(0.0)) == 0.5

    def test_sigmoid_no_underflow(self):
        """Test that a very negative input stays strictly positive."""
        value = float(sigmoid(-745.0))
        assert 0.0 < value <= 1e-300

    def test_sigmoid_no_overflow(self):
        """Test that large inputs do not warn or produce NaN."""
        with np.errstate(over="raise"):
            values = sigmoid(np.array([-1000.0, 1000.0]))
        assert values.tolist() == [0.0, 1.0]


class TestLoss:
    """Test suite for binary cross-entropy."""

    def test_half(self):
        """Test p = 0.5 gives ln 2 for either label."""
        assert bce_loss(0.5, 1) == pytest.approx(math.log(2.0))
        assert bce_loss(0.5, 0) == pytest.approx(math.log(2.0))

    def test_confident_wrong(self):
        """Test p = 0.9 with y = 0."""
        assert bce_loss(0.9, 0) == pytest.approx(2.302585, abs=1e-6)

    def test_exact_prediction_clamped(self):
        """Test that p = y gives a finite loss near 1e-12."""
        assert 0.0 <= bce_loss(1.0, 1) <= 1.1e-12
        assert 0.0 <= bce_loss(0.0, 0) <= 1.1e-12

    def test_monotone_towards_label(self):
        """Test the loss decreases as p approaches y from either side."""
        p = np.linspace(0.01, 0.99, 50)
        assert np.all(np.diff(bce_loss(p, np.ones_like(p))) < 0)
        assert np.all(np.diff(bce_loss(p, np.zeros_like(p))) > 0)

    def test_logits_match_probabilities(self):
        """Test bce_with_logits against bce_loss of the sigmoid."""
        z = np.linspace(-5, 5, 11)
        y = (z > 0).astype(float)
        np.testing.assert_allclose(bce_with_logits(z, y), bce_loss(sigmoid(z), y), rtol=1e-10)


def _scalar_lstm(weights: float, bias: float = 0.0) -> ParamStore:
    return ParamStore({
        "lstm.input_weight": np.full((4, 1), weights),
        "lstm.recurrent_weight": np.full((4, 1), weights),
        "lstm.bias": np.full(4, bias),
    })


class TestLstmForward:
    """Test suite for the LSTM cell."""

    def test_zero_params(self):
        """Test that all-zero parameters leave h at zero."""
        params = ParamStore({
            "lstm.input_weight": np.zeros((12, 2)),
            "lstm.recurrent_weight": np.zeros((12, 3)),
            "lstm.bias": np.zeros(12),
        })
        np.testing.assert_array_equal(lstm_forward(np.ones((4, 2)), params), np.zeros(3))

    def test_single_step_by_hand(self):
        """Test one step of a scalar cell against the gate equations."""
        h = lstm_forward([0.5], _scalar_lstm(1.0))

        gate = _sigmoid(0.5)
        c = gate * math.tanh(0.5)
        assert h[0] == pytest.approx(gate * math.tanh(c), rel=1e-12)

    def test_second_step_by_hand(self):
        """Test two steps where the second input is zero."""
        params = _scalar_lstm(1.0)
        h1 = lstm_forward([0.5], params)[0]
        h2 = lstm_forward([0.5, 0.0], params)[0]

        gate = _sigmoid(0.5)
        c1 = gate * math.tanh(0.5)
        a = h1
        c2 = _sigmoid(a) * c1 + _sigmoid(a) * math.tanh(a)
        assert h2 == pytest.approx(_sigmoid(a) * math.tanh(c2), rel=1e-12)

    def test_hidden_state_bounded(self, rng):
        """Test that h stays inside (-1, 1) over a long sequence."""
        net = LstmNet(M=5, hidden=8, feature_dense=4, head=[4])
        params = net.init_params(rng)
        h = lstm_forward(rng.normal(scale=3.0, size=(30, 1)), params)

        assert np.all(np.abs(h) < 1.0)

    def test_empty_sequence(self):
        """Test that an empty sequence is rejected."""
        with pytest.raises(InputError):
            lstm_forward(np.zeros((0, 1)), _scalar_lstm(1.0))

    def test_width_mismatch(self):
        """Test that a step width differing from the weights is rejected."""
        with pytest.raises(ShapeError):
            lstm_forward(np.zeros((2, 3)), _scalar_lstm(1.0))


class TestBackward:
    """Test suite for analytic gradients."""

    def test_single_neuron(self):
        """Test dL/dw = (sigmoid(0) - 1) * x for x = 1, y = 1."""
        net = FeedForwardNet(width=1, hidden=[])
        params = ParamStore({"output.weight": np.zeros((1, 1)), "output.bias": np.zeros(1)})
        grads = backward(net, params, Batch(np.array([[1.0]]), np.array([1.0])))

        assert grads["output.weight"][0, 0] == pytest.approx(-0.5)
        assert grads["output.bias"][0] == pytest.approx(-0.5)

    def test_zero_input_gives_zero_first_layer_weight_gradient(self, rng):
        """Test that first-layer weight gradients vanish for a zero batch."""
        net = FeedForwardNet(width=6, hidden=[5, 3])
        params = net.init_params(rng)
        params["dense_0.bias"] = rng.normal(size=5)
        grads = backward(net, params, Batch(np.zeros((4, 6)), np.array([0.0, 1.0, 1.0, 0.0])))

        np.testing.assert_array_equal(grads["dense_0.weight"], np.zeros((5, 6)))

    def test_gradient_names_follow_params(self, rng):
        """Test that gradients come back in the parameter order and shapes."""
        net = LstmNet(M=3, hidden=4, feature_dense=5, head=[6])
        params = net.init_params(rng)
        grads = backward(net, params, Batch(rng.normal(size=(3, 10)), np.array([0.0, 1.0, 1.0])))

        assert grads.names == params.names
        assert grads.shapes == params.shapes

    def test_linear_model_exact(self):
        """Test that the central difference matches a logistic unit to rounding level."""
        net = FeedForwardNet(width=1, hidden=[])
        params = ParamStore({"output.weight": np.array([[0.3]]), "output.bias": np.array([-0.2])})
        batch = Batch(np.array([[1.0], [-2.0], [0.5]]), np.array([1.0, 0.0, 0.0]))

        assert finite_diff_check(net, params, batch, h=1e-5) < 1e-8

    def test_tiny_gradient_error_detected(self):
        """Test that a 1e-11 error on a zero gradient is reported as a relative error of 1e-3."""

        class SkewedNet(FeedForwardNet):
            def loss_and_grad(self, params, batch):
                loss, grads = super().loss_and_grad(params, batch)
                grads["output.weight"] = grads["output.weight"] + np.array([[0.0, 1e-11]])
                return loss, grads

        net = SkewedNet(width=2, hidden=[])
        params = ParamStore({"output.weight": np.array([[0.3, -0.4]]), "output.bias": np.array([0.1])})
        batch = Batch(np.array([[1.0, 0.0], [-2.0, 0.0], [0.5, 0.0]]), np.array([1.0, 0.0, 0.0]))

        assert GRADIENT_FLOOR == 1e-8
        assert finite_diff_check(net, params, batch) == pytest.approx(1e-3, rel=1e-3)

    @pytest.mark.parametrize("variant", [ModelVariant.DNN_NET, ModelVariant.LSTM_NET])
    @pytest.mark.parametrize("seed", range(10))
    def test_network_gradients(self, variant, seed):
        """Test analytic against numeric gradients for the network variants."""
        assert run_gradient_check(variant, seed) < 1e-4

    def test_logistic_regression_with_penalty(self, rng):
        """Test that the L2 term is part of the checked gradient."""
        net = FeedForwardNet(width=4, hidden=[], l2=0.1)
        params = net.init_params(rng)
        batch = Batch(rng.normal(size=(5, 4)), np.array([1.0, 0.0, 1.0, 0.0, 0.0]))

        assert finite_diff_check(net, params, batch) < 1e-6

    def test_invalid_step(self, rng):
        """Test that a non-positive step is rejected."""
        net = FeedForwardNet(width=1, hidden=[])
        with pytest.raises(InputError):
            finite_diff_check(net, net.init_params(rng), Batch(np.ones((1, 1)), np.ones(1)), h=0.0)


class TestAdam:
    """Test suite for the Adam update."""

    @staticmethod
    def _single(value: float = 0.0):
        params = ParamStore({"w": np.array([value])})
        return params, AdamState.create(params, AdamConfig())

    def test_first_step(self):
        """Test theta after one step with g = 1."""
        params, state = self._single()
        adam_step(params, ParamStore({"w": np.array([1.0])}), state)

        assert params["w"][0] == pytest.approx(-0.000999999990, abs=1e-15)
        assert state.t == 1

    def test_zero_gradient(self):
        """Test that g = 0 with zero moments leaves theta unchanged."""
        params, state = self._single(0.25)
        adam_step(params, ParamStore({"w": np.array([0.0])}), state)

        assert params["w"][0] == 0.25

    def test_two_steps(self):
        """Test theta after two steps with constant g = 1."""
        params, state = self._single()
        for _ in range(2):
            adam_step(params, ParamStore({"w": np.array([1.0])}), state)

        assert params["w"][0] == pytest.approx(-0.002, abs=1e-6)

    def test_non_finite_gradient_named(self):
        """Test that a NaN gradient is reported with its array name."""
        params, state = self._single()
        with pytest.raises(NonFiniteGradientError) as excinfo:
            adam_step(params, ParamStore({"w": np.array([np.nan])}), state)

        assert excinfo.value.array_name == "w"
        assert params["w"][0] == 0.0

    def test_missing_gradient(self):
        """Test that a gradient store without the array is rejected."""
        params, state = self._single()
        with pytest.raises(ShapeError):
            adam_step(params, ParamStore(), state)


class TestTraining:
    """Test suite for train_network."""

    def test_overfits_single_item(self):
        """Test that 64 copies of one positive item are learned."""
        net = FeedForwardNet(width=3, hidden=[8])
        x = np.tile([0.5, -1.0, 2.0], (64, 1))
        params = train_network(
            net, x, np.ones(64), epochs=30, batch_size=32,
            adam=AdamConfig(learning_rate=0.01), rng=np.random.default_rng(1),
        )

        assert net.predict(params, x[:1])[0] > 0.9

    def test_all_negative_labels(self, rng):
        """Test that an all-zero training set is scored below 0.5."""
        net = FeedForwardNet(width=4, hidden=[8, 4])
        x = rng.normal(size=(40, 4))
        params = train_network(
            net, x, np.zeros(40), epochs=20, batch_size=8,
            adam=AdamConfig(learning_rate=0.01), rng=np.random.default_rng(2),
        )

        assert net.predict(params, x).mean() < 0.5

    def test_deterministic(self, rng):
        """Test that equal seeds give identical parameter bytes."""
        net = LstmNet(M=3, hidden=4, feature_dense=4, head=[4])
        x = rng.normal(size=(20, 10))
        y = (rng.random(20) > 0.5).astype(float)

        runs = [
            train_network(net, x, y, epochs=2, batch_size=8, adam=AdamConfig(), rng=np.random.default_rng(9))
            for _ in range(2)
        ]
        assert runs[0].tobytes() == runs[1].tobytes()

    def test_empty_slice(self):
        """Test that training needs data."""
        with pytest.raises(InputError):
            train_network(
                FeedForwardNet(width=2, hidden=[]), np.zeros((0, 2)), np.zeros(0),
                epochs=1, batch_size=4, adam=AdamConfig(), rng=np.random.default_rng(0),
            )


class TestParamStore:
    """Test suite for parameter serialization."""

    def test_dict_round_trip(self, rng):
        """Test that to_dict/from_dict keep bytes and order."""
        params = LstmNet(M=2, hidden=3, feature_dense=2, head=[2]).init_params(rng)
        restored = ParamStore.from_dict(params.to_dict())

        assert restored.names == params.names
        assert restored.tobytes() == params.tobytes()

    def test_wrong_size_rejected(self):
        """Test that a shape that does not fit the data is rejected."""
        with pytest.raises(ModelFormatError):
            ParamStore.from_dict({"w": {"shape": [2, 2], "data": [1.0, 2.0]}})
