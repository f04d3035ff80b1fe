"""Layer specifications and the Network container.

Layer kinds are exactly what the sky networks need: strided convolutions
(with cylindrical padding for the azimuth-periodic panorama domain or plain
zero padding for camera crops), fully connected layers, ELU/ReLU, identity
residual blocks, nearest-neighbor upsampling, flatten/reshape, and global
average pooling for the crop backbone head.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0
    pad_mode: str = "cylinder"  # "cylinder" wraps azimuth, zero-pads vertically


@dataclass(frozen=True)
class FullyConnected:
    in_features: int
    out_features: int
    init_scale: float = 1.0  # <1 shrinks the He bound (near-zero heads)


@dataclass(frozen=True)
class Elu:
    alpha: float = 1.0


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class ResidualBlock:
    """x + conv(relu(conv(x))) with two 3x3 same-channel convolutions."""

    channels: int
    pad_mode: str = "cylinder"


@dataclass(frozen=True)
class NearestUpsample:
    factor: int


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Reshape:
    channels: int
    height: int
    width: int


@dataclass(frozen=True)
class GlobalAveragePool:
    pass


LayerSpec = Union[
    Conv2d, FullyConnected, Elu, Relu, ResidualBlock,
    NearestUpsample, Flatten, Reshape, GlobalAveragePool,
]

_KINDS = {
    "conv2d": Conv2d,
    "fully_connected": FullyConnected,
    "elu": Elu,
    "relu": Relu,
    "residual_block": ResidualBlock,
    "nearest_upsample": NearestUpsample,
    "flatten": Flatten,
    "reshape": Reshape,
    "global_avg_pool": GlobalAveragePool,
}
_NAMES = {cls: name for name, cls in _KINDS.items()}


def spec_to_dict(spec: LayerSpec) -> dict:
    out = {"kind": _NAMES[type(spec)]}
    out.update(spec.__dict__)
    return out


def spec_from_dict(obj: dict) -> LayerSpec:
    obj = dict(obj)
    kind = obj.pop("kind")
    return _KINDS[kind](**obj)


class ShapeError(ValueError):
    pass


def _conv_out(spec: Conv2d, shape: tuple[int, ...]) -> tuple[int, ...]:
    c, h, w = shape
    if c != spec.in_channels:
        raise ShapeError(f"expects {spec.in_channels} channels, got {c}")
    ho = (h + 2 * spec.pad - spec.kernel) // spec.stride + 1
    wo = (w + 2 * spec.pad - spec.kernel) // spec.stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {spec.kernel} too large for input {h}x{w}")
    return (spec.out_channels, ho, wo)


def output_shape(spec: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape (without batch dim) a layer produces from ``shape``."""
    if isinstance(spec, Conv2d):
        return _conv_out(spec, shape)
    if isinstance(spec, ResidualBlock):
        if len(shape) != 3 or shape[0] != spec.channels:
            raise ShapeError(f"expects {spec.channels} channels, got shape {shape}")
        return shape
    if isinstance(spec, FullyConnected):
        if shape != (spec.in_features,):
            raise ShapeError(f"expects ({spec.in_features},), got {shape}")
        return (spec.out_features,)
    if isinstance(spec, NearestUpsample):
        c, h, w = shape
        return (c, h * spec.factor, w * spec.factor)
    if isinstance(spec, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(spec, Reshape):
        target = (spec.channels, spec.height, spec.width)
        if int(np.prod(shape)) != int(np.prod(target)):
            raise ShapeError(f"cannot reshape {shape} into {target}")
        return target
    if isinstance(spec, GlobalAveragePool):
        c, _, _ = shape
        return (c,)
    if isinstance(spec, (Elu, Relu)):
        return shape
    raise ShapeError(f"unknown layer spec {spec!r}")


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _init_layer(spec: LayerSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    if isinstance(spec, Conv2d):
        k = spec.kernel
        fan_in = spec.in_channels * k * k
        return {
            "weight": _he_uniform(rng, (spec.out_channels, spec.in_channels, k, k), fan_in),
            "bias": np.zeros(spec.out_channels, dtype=np.float32),
        }
    if isinstance(spec, FullyConnected):
        weight = _he_uniform(rng, (spec.out_features, spec.in_features), spec.in_features)
        return {
            "weight": weight * np.float32(spec.init_scale),
            "bias": np.zeros(spec.out_features, dtype=np.float32),
        }
    if isinstance(spec, ResidualBlock):
        c = spec.channels
        fan_in = c * 9
        return {
            "conv1.weight": _he_uniform(rng, (c, c, 3, 3), fan_in),
            "conv1.bias": np.zeros(c, dtype=np.float32),
            "conv2.weight": _he_uniform(rng, (c, c, 3, 3), fan_in),
            "conv2.bias": np.zeros(c, dtype=np.float32),
        }
    return {}


def _pad_input(x: torch.Tensor, pad: int, pad_mode: str) -> torch.Tensor:
    if pad == 0:
        return x
    if pad_mode == "zeros":
        return F.pad(x, (pad, pad, pad, pad))
    if pad_mode == "cylinder":
        x = F.pad(x, (pad, pad, 0, 0), mode="circular")
        return F.pad(x, (0, 0, pad, pad))
    raise ValueError(f"unknown pad mode {pad_mode!r}")


def _conv_forward(x: torch.Tensor, spec: Conv2d, p: dict[str, torch.Tensor]) -> torch.Tensor:
    return F.conv2d(_pad_input(x, spec.pad, spec.pad_mode), p["weight"], p["bias"],
                    stride=spec.stride)


def _layer_forward(spec: LayerSpec, x: torch.Tensor, p: dict[str, torch.Tensor]) -> torch.Tensor:
    if isinstance(spec, Conv2d):
        return _conv_forward(x, spec, p)
    if isinstance(spec, ResidualBlock):
        h = F.conv2d(_pad_input(x, 1, spec.pad_mode), p["conv1.weight"], p["conv1.bias"])
        h = F.relu(h)
        h = F.conv2d(_pad_input(h, 1, spec.pad_mode), p["conv2.weight"], p["conv2.bias"])
        return x + h
    if isinstance(spec, FullyConnected):
        return F.linear(x, p["weight"], p["bias"])
    if isinstance(spec, Elu):
        return F.elu(x, alpha=spec.alpha)
    if isinstance(spec, Relu):
        return F.relu(x)
    if isinstance(spec, NearestUpsample):
        return F.interpolate(x, scale_factor=spec.factor, mode="nearest")
    if isinstance(spec, Flatten):
        return x.reshape(x.shape[0], -1)
    if isinstance(spec, Reshape):
        return x.reshape(x.shape[0], spec.channels, spec.height, spec.width)
    if isinstance(spec, GlobalAveragePool):
        return x.mean(dim=(2, 3))
    raise ValueError(f"unknown layer spec {spec!r}")


class Network:
    """An ordered layer stack with seed-deterministic parameters.

    ``forward(x, remember=True)`` keeps the autograd graph so a subsequent
    ``backward(output_gradient)`` can return exact reverse-mode gradients for
    every parameter and for the input.
    """

    def __init__(
        self,
        specs: list[LayerSpec],
        input_shape: tuple[int, ...],
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        self.specs = tuple(specs)
        self.input_shape = tuple(input_shape)
        self.seed = int(seed)
        self.dtype = dtype
        shape = self.input_shape
        for i, spec in enumerate(self.specs):
            try:
                shape = output_shape(spec, shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({_NAMES[type(spec)]}): {exc}") from exc
        self.output_shape = shape
        self._params: list[dict[str, torch.Tensor]] = []
        for i, spec in enumerate(self.specs):
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, i]))
            layer = {
                name: torch.tensor(arr, dtype=dtype).requires_grad_(True)
                for name, arr in _init_layer(spec, rng).items()
            }
            self._params.append(layer)
        self._cached: tuple[torch.Tensor, torch.Tensor] | None = None

    def parameters(self) -> dict[str, torch.Tensor]:
        """Named parameters in layer-declaration order."""
        out: dict[str, torch.Tensor] = {}
        for i, layer in enumerate(self._params):
            for name, tensor in layer.items():
                out[f"layer{i}.{name}"] = tensor
        return out

    def parameter_count(self) -> int:
        return sum(t.numel() for t in self.parameters().values())

    def load_parameters(self, tensors: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(tensors) != set(params):
            raise ValueError("parameter name set does not match the architecture")
        with torch.no_grad():
            for name, arr in tensors.items():
                if tuple(arr.shape) != tuple(params[name].shape):
                    raise ValueError(f"{name}: shape {arr.shape} != {tuple(params[name].shape)}")
                params[name].copy_(torch.tensor(arr, dtype=self.dtype))

    def export_parameters(self) -> dict[str, np.ndarray]:
        return {name: t.detach().numpy().copy() for name, t in self.parameters().items()}

    def astype(self, dtype: torch.dtype) -> "Network":
        clone = Network(list(self.specs), self.input_shape, seed=self.seed, dtype=dtype)
        with torch.no_grad():
            for dst, src in zip(clone._params, self._params):
                for name in dst:
                    dst[name].copy_(src[name].to(dtype))
        return clone

    def _check_input(self, x: torch.Tensor) -> None:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"layer 0 ({_NAMES[type(self.specs[0])]}): input shape {tuple(x.shape[1:])} "
                f"does not match expected {self.input_shape}"
            )

    def forward(self, x: torch.Tensor, remember: bool = False) -> torch.Tensor:
        """Run the stack; with ``remember`` the activations stay available for
        :meth:`backward`."""
        if x.dim() == len(self.input_shape):
            x = x.unsqueeze(0)
        self._check_input(x)
        x = x.to(self.dtype)
        if remember:
            x = x.detach().requires_grad_(True)
            leaf = x
        out = x
        for spec, p in zip(self.specs, self._params):
            out = _layer_forward(spec, out, p)
        if remember:
            self._cached = (leaf, out)
        return out

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward(x)

    def backward(self, output_gradient: torch.Tensor) -> tuple[dict[str, torch.Tensor], torch.Tensor]:
        """Exact reverse-mode gradients of the last remembered forward pass.

        Returns (parameter gradients keyed like :meth:`parameters`, gradient
        with respect to the input).
        """
        if self._cached is None:
            raise RuntimeError("backward called without a remembered forward pass")
        leaf, out = self._cached
        self._cached = None
        names = list(self.parameters())
        tensors = list(self.parameters().values())
        grads = torch.autograd.grad(
            outputs=out,
            inputs=[leaf] + tensors,
            grad_outputs=output_gradient.to(out.dtype).reshape(out.shape),
            allow_unused=True,
        )
        input_grad = grads[0]
        param_grads = {
            name: (g if g is not None else torch.zeros_like(t))
            for name, t, g in zip(names, tensors, grads[1:])
        }
        return param_grads, input_grad
