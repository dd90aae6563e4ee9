"""Learnable stimulus transformation: a small stack of dense/conv layers."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigurationError, DimensionError

LAYER_KINDS = ("dense", "relu", "conv2d", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int = 0
    out_dim: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v or k == "kind"}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def __str__(self):
        if self.kind == "dense":
            return f"dense:{self.in_dim}:{self.out_dim}"
        if self.kind == "conv2d":
            return f"conv2d:{self.in_channels}:{self.out_channels}:{self.kernel}:{self.stride}"
        return self.kind


def dense(in_dim: int, out_dim: int) -> LayerSpec:
    return LayerSpec("dense", in_dim=in_dim, out_dim=out_dim)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def conv2d(in_channels: int, out_channels: int, kernel: int, stride: int = 1) -> LayerSpec:
    return LayerSpec("conv2d", in_channels=in_channels, out_channels=out_channels, kernel=kernel, stride=stride)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def parse_layers(text: str) -> list[LayerSpec]:
    """Parse ``"dense:2:64, relu, conv2d:1:8:3:1, flatten"``."""
    layers = []
    for token in filter(None, (t.strip() for t in text.split(","))):
        kind, *args = token.split(":")
        try:
            nums = [int(a) for a in args]
            if kind == "dense" and len(nums) == 2:
                layers.append(dense(*nums))
            elif kind == "conv2d" and len(nums) in (3, 4):
                layers.append(conv2d(*nums))
            elif kind in ("relu", "flatten") and not nums:
                layers.append(LayerSpec(kind))
            else:
                raise ValueError
        except ValueError:
            raise ConfigurationError(f"bad layer token {token!r}") from None
    return layers


def _trace_shapes(layers, input_shape):
    """Walk the stack and return the output shape, validating the chain.

    ``input_shape`` excludes the batch axis and may be None for pure
    dense stacks.
    """
    shape = None if input_shape is None else tuple(int(s) for s in input_shape)
    for i, layer in enumerate(layers):
        if layer.kind not in LAYER_KINDS:
            raise ConfigurationError(f"layer {i}: unknown kind {layer.kind!r}")
        if layer.kind == "dense":
            if layer.in_dim < 1 or layer.out_dim < 1:
                raise ConfigurationError(f"layer {i}: dense dimensions must be positive")
            if shape is not None and shape != (layer.in_dim,):
                raise ConfigurationError(f"layer {i}: dense expects input width {layer.in_dim}, receives {shape}")
            shape = (layer.out_dim,)
        elif layer.kind == "conv2d":
            if min(layer.in_channels, layer.out_channels, layer.kernel, layer.stride) < 1:
                raise ConfigurationError(f"layer {i}: conv2d sizes must be positive")
            if shape is None:
                raise ConfigurationError(f"layer {i}: conv2d needs a known (c, h, w) input shape")
            if len(shape) != 3 or shape[0] != layer.in_channels:
                raise ConfigurationError(f"layer {i}: conv2d expects {layer.in_channels} channels, receives {shape}")
            c, h, w = shape
            if layer.kernel > h or layer.kernel > w:
                raise ConfigurationError(f"layer {i}: kernel {layer.kernel} larger than input {h}x{w}")
            shape = (layer.out_channels, (h - layer.kernel) // layer.stride + 1, (w - layer.kernel) // layer.stride + 1)
        elif layer.kind == "flatten":
            if shape is None:
                raise ConfigurationError(f"layer {i}: flatten needs a known input shape")
            shape = (int(np.prod(shape)),)
    return shape


class FeatureNet:
    """phi: maps a batch of stimuli to ``B x feature_dim`` features.

    Parameters are held in :attr:`params` (an insertion-ordered dict of
    name -> :class:`Parameter`).  A net built with no layers is the identity
    map (inputs are only flattened).
    """

    def __init__(self, layers, params, feature_dim, input_shape=None):
        self.layers = list(layers)
        self.params: dict[str, Parameter] = dict(params)
        self.feature_dim = int(feature_dim)
        self.input_shape = None if input_shape is None else tuple(input_shape)

    @classmethod
    def identity(cls, input_shape) -> FeatureNet:
        if isinstance(input_shape, int):
            input_shape = (input_shape,)
        return cls([], {}, int(np.prod(input_shape)), input_shape)

    @property
    def is_identity(self) -> bool:
        return not self.layers

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def __call__(self, batch):
        return self.forward(batch)

    def forward(self, batch, trace: list | None = None) -> Tensor:
        """Features for ``batch``; if ``trace`` is a list, each layer's input is appended."""
        x = ad.as_tensor(batch)
        if self.input_shape is not None and x.shape[1:] != self.input_shape:
            raise DimensionError(f"feature net expects inputs of shape (B, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        if not self.layers:
            return x if x.ndim == 2 else x.reshape(x.shape[0], -1)
        for i, layer in enumerate(self.layers):
            if trace is not None:
                trace.append(x)
            if layer.kind == "dense":
                if x.ndim != 2 or x.shape[1] != layer.in_dim:
                    raise DimensionError(f"layer {i}: dense expects (B, {layer.in_dim}), got {x.shape}")
                x = x @ self.params[f"phi.{i}.weight"] + self.params[f"phi.{i}.bias"]
            elif layer.kind == "relu":
                x = ad.relu(x)
            elif layer.kind == "conv2d":
                x = ad.conv2d(x, self.params[f"phi.{i}.kernel"], layer.stride)
                x = x + self.params[f"phi.{i}.bias"].reshape(1, -1, 1, 1)
            else:
                x = x.reshape(x.shape[0], -1)
        return x

    def layer_dicts(self):
        return [layer.to_dict() for layer in self.layers]


def build(layers, seed: int, input_shape=None) -> FeatureNet:
    """Construct a :class:`FeatureNet` and initialize it from ``seed``.

    Weights are drawn from Normal(0, sqrt(2 / fan_in)); biases start at 0.
    """
    layers = list(layers)
    if not layers:
        raise ConfigurationError("feature net needs at least one layer")
    out_shape = _trace_shapes(layers, input_shape)
    if out_shape is None or len(out_shape) != 1:
        raise ConfigurationError(f"feature net must end in a flat feature vector, ends in {out_shape}")

    rng = np.random.default_rng(seed)
    params = {}
    for i, layer in enumerate(layers):
        if layer.kind == "dense":
            std = np.sqrt(2.0 / layer.in_dim)
            params[f"phi.{i}.weight"] = Parameter(rng.normal(0.0, std, (layer.in_dim, layer.out_dim)), f"phi.{i}.weight")
            params[f"phi.{i}.bias"] = Parameter(np.zeros(layer.out_dim), f"phi.{i}.bias")
        elif layer.kind == "conv2d":
            fan_in = layer.in_channels * layer.kernel**2
            shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
            params[f"phi.{i}.kernel"] = Parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), shape), f"phi.{i}.kernel")
            params[f"phi.{i}.bias"] = Parameter(np.zeros(layer.out_channels), f"phi.{i}.bias")
    return FeatureNet(layers, params, out_shape[0], input_shape)


def default_vector_layers(input_dim: int, feature_dim: int = 8) -> list[LayerSpec]:
    return [dense(input_dim, 64), relu(), dense(64, 32), relu(), dense(32, feature_dim)]


def default_image_layers(input_shape, feature_dim: int = 32) -> list[LayerSpec]:
    c, h, w = input_shape
    return [conv2d(c, 8, 3, 1), relu(), flatten(), dense(8 * (h - 2) * (w - 2), feature_dim)]
