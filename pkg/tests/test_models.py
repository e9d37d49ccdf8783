import numpy as np
import pytest

from pidssl.autodiff import Tensor
from pidssl.models import (
    CheckpointError,
    NetworkSpec,
    OptimizerError,
    OptimizerState,
    adam_step,
    as_tensors,
    ema_update,
    forward,
    forward_embed,
    gradients,
    init_params,
    load_checkpoint,
    parameter_checksum,
    save_checkpoint,
)
from pidssl.numerics import grad_check

SMALL = NetworkSpec(encoder_widths=(4, 6, 5), projector_widths=(6, 6, 3), predictor_widths=(5, 3), classifier_classes=4)


def small_params(seed=0):
    return init_params(SMALL, np.random.default_rng(seed))


class TestForward:
    def test_zero_network(self):
        params = {k: np.zeros_like(v) for k, v in small_params().items()}
        x = np.random.default_rng(1).standard_normal((5, 4))
        for stage in ("encoder", "projector", "classifier", "predictor"):
            assert not np.any(forward_embed(params, x, SMALL, stage))

    def test_identity_encoder(self):
        spec = NetworkSpec(encoder_widths=(3, 3))
        params = init_params(spec, np.random.default_rng(0))
        params["encoder.0.weight"] = np.eye(3)
        x = np.random.default_rng(2).standard_normal((4, 3))
        np.testing.assert_array_equal(forward_embed(params, x, spec, "encoder"), x)

    @pytest.mark.parametrize("stage, width", [("encoder", 5), ("projector", 3), ("classifier", 4), ("predictor", 3)])
    def test_shapes(self, stage, width):
        x = np.random.default_rng(3).standard_normal((8, 4))
        assert forward_embed(small_params(), x, SMALL, stage).shape == (8, width)

    def test_deterministic(self):
        x = np.random.default_rng(4).standard_normal((8, 4))
        a = forward_embed(small_params(), x, SMALL)
        b = forward_embed(small_params(), x, SMALL)
        assert a.tobytes() == b.tobytes()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            forward_embed(small_params(), np.ones((2, 5)), SMALL)

    def test_unknown_stage(self):
        with pytest.raises(ValueError):
            forward(small_params(), np.ones((2, 4)), SMALL, "head")

    def test_missing_predictor(self):
        spec = NetworkSpec(encoder_widths=(4, 5))
        with pytest.raises(ValueError):
            forward(init_params(spec, np.random.default_rng(0)), np.ones((2, 4)), spec, "predictor")

    @pytest.mark.parametrize("stage", ["encoder", "projector", "classifier", "predictor"])
    def test_input_gradient(self, stage):
        params = small_params(5)
        weights = np.random.default_rng(6).standard_normal((8, forward_embed(params, np.ones((1, 4)), SMALL, stage).shape[1]))
        x = np.random.default_rng(7).standard_normal((8, 4))
        assert grad_check(lambda t: (forward(params, t, SMALL, stage) * weights).sum(), x) < 1e-5

    def test_parameter_gradients(self):
        params = small_params(8)
        x = np.random.default_rng(9).standard_normal((8, 4))
        tensors = as_tensors(params)
        forward(tensors, x, SMALL, "classifier").sum().backward()
        grads = gradients(tensors)
        name = "encoder.1.weight"

        def f(t):
            local = dict(params)
            local[name] = t
            return forward(local, x, SMALL, "classifier").sum()

        w = params[name].copy()
        h = 1e-6
        for idx in [(0, 0), (2, 3), (5, 4)]:
            up, down = w.copy(), w.copy()
            up[idx] += h
            down[idx] -= h
            numeric = (f(up).item() - f(down).item()) / (2 * h)
            assert grads[name][idx] == pytest.approx(numeric, rel=1e-5, abs=1e-8)


class TestSpec:
    def test_projector_has_three_layers(self):
        with pytest.raises(ValueError):
            NetworkSpec(projector_widths=(8, 8))

    def test_roundtrip(self):
        assert NetworkSpec.from_dict(SMALL.to_dict()) == SMALL

    def test_positive_widths(self):
        with pytest.raises(ValueError):
            NetworkSpec(encoder_widths=(4, 0))


class TestEMA:
    online = {"w": np.array(4.0)}
    target = {"w": np.array(2.0)}

    def test_momentum_one(self):
        assert ema_update(self.online, self.target, 1.0)["w"] == 2.0

    def test_momentum_zero(self):
        assert ema_update(self.online, self.target, 0.0)["w"] == 4.0

    def test_half(self):
        assert ema_update(self.online, self.target, 0.5)["w"] == 3.0

    def test_range(self):
        with pytest.raises(ValueError):
            ema_update(self.online, self.target, 1.5)


class TestAdam:
    params = {"w": np.array([1.0, -2.0, 3.0])}

    def test_zero_gradient_no_decay(self):
        out, state = adam_step(self.params, {"w": np.zeros(3)}, OptimizerState(lr=1e-3))
        np.testing.assert_array_equal(out["w"], self.params["w"])
        assert state.step == 1

    def test_zero_gradient_decay(self):
        out, _ = adam_step(self.params, {"w": np.zeros(3)}, OptimizerState(lr=1e-3, weight_decay=1e-6))
        np.testing.assert_allclose(out["w"], self.params["w"] * (1 - 1e-9), rtol=0, atol=1e-15)

    def test_first_step_is_signed_lr(self):
        g = np.array([0.3, -5.0, 1e-2])
        out, _ = adam_step(self.params, {"w": g}, OptimizerState(lr=1e-3))
        np.testing.assert_allclose(out["w"] - self.params["w"], -1e-3 * np.sign(g), rtol=1e-5)

    def test_non_finite(self):
        with pytest.raises(OptimizerError):
            adam_step(self.params, {"w": np.array([np.nan, 0, 0])}, OptimizerState(lr=1e-3))

    def test_untouched_parameters(self):
        params = dict(self.params, b=np.ones(2))
        out, _ = adam_step(params, {"w": np.ones(3)}, OptimizerState(lr=1e-3))
        assert out["b"] is params["b"]


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        params = small_params(3)
        path = tmp_path / "m.pssl"
        save_checkpoint(path, SMALL, params, {"seed": 3})
        spec, loaded, meta = load_checkpoint(path)
        assert spec == SMALL and meta == {"seed": 3}
        assert parameter_checksum(loaded) == parameter_checksum(params)
        for k in params:
            assert loaded[k].tobytes() == params[k].tobytes()

    def test_same_bytes_twice(self, tmp_path):
        save_checkpoint(tmp_path / "a", SMALL, small_params(), {"x": 1})
        save_checkpoint(tmp_path / "b", SMALL, small_params(), {"x": 1})
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.pssl"
        save_checkpoint(path, SMALL, small_params())
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


def test_tensor_inputs_accepted():
    x = Tensor(np.ones((2, 4)))
    assert forward(small_params(), x, SMALL, "encoder").shape == (2, 5)
