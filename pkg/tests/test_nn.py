import math

import numpy as np
import pytest
import torch

from skyforge.nn import (
    AdamState,
    Conv2d,
    Elu,
    Flatten,
    FullyConnected,
    GlobalAveragePool,
    NearestUpsample,
    Network,
    Relu,
    Reshape,
    ResidualBlock,
    adam_step,
    fit_normalizer,
    grad_check,
    load_checkpoint,
    plateau_schedule,
    save_checkpoint,
)
from skyforge.nn.layers import ShapeError, spec_from_dict, spec_to_dict
from skyforge.nn.normalize import Normalizer


def sum_loss(out):
    return (out * out).sum() * 0.5


class TestForward:
    def test_identity_conv(self):
        net = Network([Conv2d(1, 1, 1)], (1, 4, 8), seed=0)
        net.load_parameters({
            "layer0.weight": np.ones((1, 1, 1, 1), np.float32),
            "layer0.bias": np.zeros(1, np.float32),
        })
        x = torch.randn(2, 1, 4, 8)
        assert torch.equal(net.forward(x), x)

    def test_relu_on_negative(self):
        net = Network([Relu()], (3,), seed=0)
        out = net.forward(torch.tensor([[-1.0, -2.0, -0.5]]))
        assert torch.equal(out, torch.zeros(1, 3))

    def test_residual_zero_weights_is_identity(self):
        net = Network([ResidualBlock(4)], (4, 6, 8), seed=0)
        zeros = {name: np.zeros_like(arr) for name, arr in net.export_parameters().items()}
        net.load_parameters(zeros)
        x = torch.randn(2, 4, 6, 8)
        assert torch.equal(net.forward(x), x)

    def test_shape_error_names_layer(self):
        with pytest.raises(ShapeError, match="layer 1"):
            Network([Conv2d(3, 8, 3, pad=1), FullyConnected(10, 2)], (3, 8, 8), seed=0)

    def test_forward_input_shape_check(self):
        net = Network([Relu()], (3, 4, 4), seed=0)
        with pytest.raises(ShapeError, match="layer 0"):
            net.forward(torch.zeros(1, 3, 8, 8))

    def test_batch_consistency(self):
        net = Network(
            [Conv2d(2, 4, 3, stride=2, pad=1), Elu(), Flatten(), FullyConnected(32, 5)],
            (2, 4, 8), seed=3,
        )
        x = torch.randn(6, 2, 4, 8)
        full = net.forward(x)
        for i in range(6):
            single = net.forward(x[i : i + 1])
            assert torch.allclose(full[i], single[0], atol=1e-6)

    def test_init_deterministic(self):
        specs = [Conv2d(3, 8, 3, pad=1), Elu(), Flatten(), FullyConnected(8 * 16, 4)]
        a = Network(specs, (3, 4, 4), seed=9).export_parameters()
        b = Network(specs, (3, 4, 4), seed=9).export_parameters()
        c = Network(specs, (3, 4, 4), seed=10).export_parameters()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert any(not np.array_equal(a[k], c[k]) for k in a)

    def test_cylinder_padding_wraps_azimuth(self):
        net = Network([Conv2d(1, 1, 3, pad=1, pad_mode="cylinder")], (1, 4, 8), seed=0)
        w = np.zeros((1, 1, 3, 3), np.float32)
        w[0, 0, 1, 0] = 1.0  # picks up the left neighbor
        net.load_parameters({"layer0.weight": w, "layer0.bias": np.zeros(1, np.float32)})
        x = torch.zeros(1, 1, 4, 8)
        x[0, 0, 2, 7] = 5.0
        out = net.forward(x)
        assert out[0, 0, 2, 0] == 5.0  # wrapped around the seam


class TestBackward:
    def test_fc_weight_gradient_outer_product(self):
        net = Network([FullyConnected(3, 2)], (3,), seed=1)
        x = torch.tensor([[1.0, -2.0, 0.5]])
        out = net.forward(x, remember=True)
        g = torch.tensor([[1.0, 2.0]])
        param_grads, input_grad = net.backward(g)
        expected = g.T @ x
        assert torch.allclose(param_grads["layer0.weight"], expected)
        assert torch.allclose(param_grads["layer0.bias"], g[0])
        w = net.parameters()["layer0.weight"]
        assert torch.allclose(input_grad, g @ w)

    def test_elu_gradient_above_zero(self):
        net = Network([Elu()], (1,), seed=0)
        out = net.forward(torch.tensor([[1.0]]), remember=True)
        _, input_grad = net.backward(torch.ones(1, 1))
        assert input_grad[0, 0] == pytest.approx(1.0)

    def test_backward_without_forward(self):
        net = Network([Relu()], (3,), seed=0)
        with pytest.raises(RuntimeError, match="without a remembered forward"):
            net.backward(torch.ones(1, 3))

    def test_random_network_matches_finite_differences(self):
        net = Network(
            [Conv2d(2, 3, 3, stride=1, pad=1), Elu(), Flatten(), FullyConnected(3 * 4 * 8, 4)],
            (2, 4, 8), seed=5,
        )
        x = torch.from_numpy(np.random.default_rng(0).normal(size=(2, 2, 4, 8)).astype(np.float32))
        assert grad_check(net, sum_loss, x, eps=1e-3) < 1e-3


LAYER_CASES = {
    "conv2d": lambda: ([Conv2d(2, 3, 3, stride=2, pad=1)], (2, 4, 8)),
    "conv2d_zeros": lambda: ([Conv2d(2, 3, 3, stride=1, pad=1, pad_mode="zeros")], (2, 4, 8)),
    "fully_connected": lambda: ([FullyConnected(6, 4)], (6,)),
    "elu": lambda: ([Conv2d(1, 2, 3, pad=1), Elu()], (1, 4, 4)),
    "relu": lambda: ([Conv2d(1, 2, 3, pad=1), Relu()], (1, 4, 4)),
    "residual_block": lambda: ([ResidualBlock(3)], (3, 4, 8)),
    "nearest_upsample": lambda: ([Conv2d(1, 2, 3, pad=1), NearestUpsample(2)], (1, 4, 4)),
    "flatten_reshape": lambda: ([Flatten(), FullyConnected(24, 24), Reshape(2, 3, 4)], (2, 3, 4)),
    "global_avg_pool": lambda: ([Conv2d(2, 3, 3, pad=1), GlobalAveragePool()], (2, 4, 4)),
}


class TestGradCheckEveryLayerKind:
    @pytest.mark.parametrize("kind", sorted(LAYER_CASES))
    def test_layer_kind_below_tolerance(self, kind):
        specs_fn = LAYER_CASES[kind]
        worst = 0.0
        for seed in range(20):
            specs, in_shape = specs_fn()
            net = Network(specs, in_shape, seed=seed)
            rng = np.random.default_rng(1000 + seed)
            x = torch.from_numpy(rng.normal(size=(2, *in_shape)).astype(np.float32))
            worst = max(worst, grad_check(net, sum_loss, x, eps=1e-4))
        assert worst < 1e-3, f"{kind}: worst relative error {worst}"


class TestGradCheckOracle:
    def test_linear_regression_tight(self):
        net = Network([FullyConnected(4, 1)], (4,), seed=2)
        rng = np.random.default_rng(3)
        x = torch.from_numpy(rng.normal(size=(8, 4)).astype(np.float32))
        y = torch.from_numpy(rng.normal(size=(8, 1)).astype(np.float32))
        loss = lambda out: ((out - y.to(out.dtype)) ** 2).mean()
        assert grad_check(net, loss, x, eps=1e-4) < 1e-5

    def test_zero_loss_zero_gradients(self):
        net = Network([FullyConnected(3, 2)], (3,), seed=0)
        x = torch.randn(2, 3)
        loss = lambda out: (out * 0.0).sum()
        assert grad_check(net, loss, x, eps=1e-3) == 0.0

    def test_rejects_oversized_network(self):
        net = Network([FullyConnected(200, 200)], (200,), seed=0)
        with pytest.raises(ValueError, match="tractability"):
            grad_check(net, sum_loss, torch.randn(1, 200))


class TestAdam:
    def test_zero_gradient_is_identity(self):
        p = torch.tensor([1.0, -2.0], requires_grad=True)
        state = AdamState(learning_rate=0.1)
        adam_step(state, {"p": p}, {"p": torch.zeros(2)})
        assert torch.equal(p.detach(), torch.tensor([1.0, -2.0]))

    def test_first_step_closed_form(self):
        for betas in [(0.9, 0.999), (0.5, 0.999)]:
            p = torch.tensor([0.0], requires_grad=True)
            state = AdamState(learning_rate=1e-3, betas=betas)
            adam_step(state, {"p": p}, {"p": torch.tensor([1.0])})
            assert p.detach().item() == pytest.approx(-1e-3, rel=1e-4)

    def test_decoupled_weight_decay_before_delta(self):
        p = torch.tensor([2.0], requires_grad=True)
        state = AdamState(learning_rate=0.5, weight_decay=0.1)
        adam_step(state, {"p": p}, {"p": torch.tensor([0.0])})
        # zero gradient: only the decay factor applies
        assert p.detach().item() == pytest.approx(2.0 * (1 - 0.5 * 0.1))

    def test_shape_mismatch(self):
        p = torch.zeros(3, requires_grad=True)
        with pytest.raises(ValueError, match="gradient shape"):
            adam_step(AdamState(learning_rate=0.1), {"p": p}, {"p": torch.zeros(2)})


class TestPlateauSchedule:
    def test_decreasing_losses_keep_rate(self):
        state = AdamState(learning_rate=1e-3)
        for loss in np.linspace(1.0, 0.1, 20):
            plateau_schedule(state, float(loss))
        assert state.learning_rate == 1e-3

    def test_ten_flat_epochs_divide_by_ten(self):
        state = AdamState(learning_rate=1e-3, plateau_patience=10, plateau_factor=10.0)
        plateau_schedule(state, 1.0)
        for i in range(9):
            plateau_schedule(state, 1.0 + i)
            assert state.learning_rate == 1e-3
        lr = plateau_schedule(state, 5.0)
        assert lr == pytest.approx(1e-4)

    def test_two_plateaus_compose(self):
        state = AdamState(learning_rate=1e-3, plateau_patience=10, plateau_factor=10.0)
        plateau_schedule(state, 1.0)
        for _ in range(20):
            plateau_schedule(state, 2.0)
        assert state.learning_rate == pytest.approx(1e-5)

    def test_patience_resets_on_improvement(self):
        state = AdamState(learning_rate=1e-3, plateau_patience=10)
        plateau_schedule(state, 1.0)
        for _ in range(9):
            plateau_schedule(state, 1.5)
        plateau_schedule(state, 0.5)  # improvement resets
        for _ in range(9):
            plateau_schedule(state, 0.6)
        assert state.learning_rate == 1e-3


class TestNormalizer:
    def test_constant_dataset_clamps_std(self):
        pano = np.full((4, 16, 3), 2.0, np.float32)
        norm = fit_normalizer([pano], space="log", log_eps=1e-4)
        assert norm.std == (1.0, 1.0, 1.0)
        assert norm.std_clamped
        assert np.allclose(norm.apply(pano), 0.0, atol=1e-6)
        assert norm.mean[0] == pytest.approx(math.log(2.0 + 1e-4))

    def test_round_trip(self, rng):
        data = (rng.random((10, 8, 32, 3)) * 100).astype(np.float32)
        norm = fit_normalizer([data], space="log")
        back = norm.invert(norm.apply(data))
        rel = np.abs(back - data) / np.maximum(data, 1e-3)
        assert rel.max() < 1e-5

    def test_deterministic_statistics(self, rng):
        data = (rng.random((5, 8, 32, 3)) * 10).astype(np.float32)
        a = fit_normalizer([data])
        b = fit_normalizer([data])
        assert a == b

    def test_linear_space_mode(self, rng):
        data = (rng.random((4, 4, 4, 3)) * 3).astype(np.float32)
        norm = fit_normalizer([data], space="linear")
        back = norm.invert(norm.apply(data))
        assert np.allclose(back, data, rtol=1e-5, atol=1e-6)

    def test_torch_paths_match_numpy(self, rng):
        data = (rng.random((2, 8, 32, 3)) * 5).astype(np.float32)
        norm = fit_normalizer([data])
        t = torch.from_numpy(np.ascontiguousarray(data.transpose(0, 3, 1, 2)))
        normalized = norm.apply_torch(t).numpy().transpose(0, 2, 3, 1)
        assert np.allclose(normalized, norm.apply(data), atol=1e-5)
        inverted = norm.invert_torch(norm.apply_torch(t)).numpy().transpose(0, 2, 3, 1)
        assert np.allclose(inverted, data, rtol=1e-4, atol=1e-5)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            fit_normalizer([])


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        tensors = {
            "a.weight": rng.normal(size=(3, 4)).astype(np.float32),
            "b.bias": rng.normal(size=(7,)).astype(np.float32),
        }
        header = {"kind": "test", "config": {"x": 1}}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, header, tensors)
        header2, tensors2 = load_checkpoint(path)
        assert header2["kind"] == "test"
        for k in tensors:
            assert np.array_equal(tensors[k], tensors2[k])
        save_checkpoint(tmp_path / "again.ckpt", header, tensors2)
        assert (tmp_path / "model.ckpt").read_bytes() == (tmp_path / "again.ckpt").read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_truncated_tensor(self, tmp_path, rng):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, {"kind": "t"}, {"w": rng.normal(size=(8, 8)).astype(np.float32)})
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(ValueError, match="expected"):
            load_checkpoint(path)

    def test_spec_serialization_round_trip(self):
        specs = [
            Conv2d(3, 8, 5, stride=2, pad=2, pad_mode="zeros"),
            Elu(alpha=0.5), Relu(), ResidualBlock(8), NearestUpsample(2),
            Flatten(), Reshape(2, 4, 4), GlobalAveragePool(), FullyConnected(2, 2),
        ]
        for spec in specs:
            assert spec_from_dict(spec_to_dict(spec)) == spec
