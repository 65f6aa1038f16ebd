import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from ..adamw import *
from ..model import ModelConfig, init


def small_state():
    return init(ModelConfig(vocab_size=9, d_model=8, n_heads=2, enc_layers=1, dec_layers=1, ffn_dim=16,
                            max_len=8, dtype="float64"))


class TestStep:
    def test_first_step(self):
        state = small_state()
        config = AdamWConfig(lr=0.1, weight_decay=0.5)
        weight = state.params["encoder.layers.0.fc1.weight"].copy()
        bias = state.params["encoder.layers.0.fc1.bias"].copy()
        grads = {"encoder.layers.0.fc1.weight": np.full(weight.shape, 2.0),
                 "encoder.layers.0.fc1.bias": np.full(bias.shape, -3.0)}
        step(state, grads, config)
        assert state.step == 1
        # bias-corrected first step moves by lr * g / (|g| + eps)
        assert_allclose(state.params["encoder.layers.0.fc1.weight"],
                        weight * (1 - 0.1 * 0.5) - 0.1 * 2.0 / (2.0 + 1e-8))
        assert_allclose(state.params["encoder.layers.0.fc1.bias"], bias + 0.1 * 3.0 / (3.0 + 1e-8))
        assert_allclose(state.exp_avg["encoder.layers.0.fc1.bias"], -0.3)
        assert_allclose(state.exp_avg_sq["encoder.layers.0.fc1.weight"], 0.004)

    def test_untouched_without_gradient(self):
        state = small_state()
        before = state.params["decoder.output_projection.weight"].copy()
        step(state, {"encoder.layers.0.fc1.bias": np.ones(16)}, AdamWConfig())
        assert_array_equal(state.params["decoder.output_projection.weight"], before)
        assert "decoder.output_projection.weight" not in state.exp_avg

    def test_no_decay_for_layer_norm(self):
        state = small_state()
        config = AdamWConfig(lr=0.1, weight_decay=0.5)
        name = "encoder.layer_norm.weight"
        step(state, {name: np.zeros(8)}, config)
        assert_array_equal(state.params[name], np.ones(8))

    def test_lr_override(self):
        a, b = small_state(), small_state()
        name = "encoder.layers.0.fc2.bias"
        step(a, {name: np.ones(8)}, AdamWConfig(lr=0.5))
        step(b, {name: np.ones(8)}, AdamWConfig(lr=0.1), lr=0.5)
        assert_array_equal(a.params[name], b.params[name])

    def test_non_finite(self):
        state = small_state()
        before = {n: v.copy() for n, v in state.params.items()}
        grad = np.zeros(8)
        grad[3] = np.nan
        with pytest.raises(NonFiniteGradientError) as e:
            step(state, {"encoder.layers.0.fc2.bias": grad}, AdamWConfig())
        assert "Gradient of parameter encoder.layers.0.fc2.bias is not finite at step 1." in e.exconly()
        assert state.step == 0
        assert all(np.array_equal(state.params[n], before[n]) for n in before)

    def test_reset(self):
        state = small_state()
        step(state, {"encoder.layers.0.fc2.bias": np.ones(8)}, AdamWConfig())
        reset(state)
        assert state.step == 0
        assert state.exp_avg == {} and state.exp_avg_sq == {}

    def test_float32_stays_float32(self):
        state = init(ModelConfig(vocab_size=9, d_model=8, n_heads=2, enc_layers=1, dec_layers=1, ffn_dim=16))
        step(state, {"encoder.layers.0.fc2.bias": np.ones(8)}, AdamWConfig())
        assert state.params["encoder.layers.0.fc2.bias"].dtype == np.float32

    def test_invalid_config(self):
        with pytest.raises(Exception):
            AdamWConfig(b1=1.0).validate()


class TestSchedule:
    def test_warmup_and_decay(self):
        total, peak = 1000, 3e-4
        values = [learning_rate(round(f * total), total, peak, 0.1) for f in (0.05, 0.10, 0.55, 1.0)]
        assert_allclose(values, [0.5 * peak, peak, 0.5 * peak, 0.0], rtol=0, atol=1e-9)

    def test_warmup_steps(self):
        assert warmup_steps(30, 0.1) == 3
        assert warmup_steps(1000, 0.1) == 100
        assert warmup_steps(7, 0.1) == 1
        assert warmup_steps(10, 0.0) == 0

    def test_no_warmup(self):
        assert learning_rate(0, 10, 1.0, 0.0) == 1.0
        assert learning_rate(5, 10, 1.0, 0.0) == 0.5

    def test_schedule_shape(self):
        values = [learning_rate(s, 200, 1.0, 0.1) for s in range(201)]
        peak = int(np.argmax(values))
        assert peak == 20
        assert all(a <= b for a, b in zip(values[:peak], values[1:peak + 1]))
        assert all(a >= b for a, b in zip(values[peak:], values[peak + 1:]))
        assert values[-1] == 0.0
