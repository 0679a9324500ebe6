"""Branch architectures and whole-network forward/backward.

Two branch families are built in:

- the structure branch: 3 layers with kernel sizes 9, 1, 5 and channel
  depths 64, 32, 1 (hidden layers ReLU, final layer linear);
- the detail branch: 20 layers of 3x3 kernels, 64 channels on the hidden
  layers and a 1-channel linear head.

The final layer of each branch is linear because the detail target is a
signed residual; a terminal ReLU would clamp it to the positive orthant.

``build_scaled`` produces reduced versions of either family for
desk-scale experiments and gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ConvKernel,
    ShapeError,
    Tensor,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
)

NET_S = "net_s"
NET_D = "net_d"


@dataclass(frozen=True)
class LayerSpec:
    out_channels: int
    kernel_size: int
    relu: bool

    def __post_init__(self):
        if self.out_channels < 1:
            raise ValueError("out_channels must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")


@dataclass(frozen=True)
class NetworkSpec:
    kind: str
    input_channels: int
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("layer list must be non-empty")
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def max_kernel(self) -> int:
        return max(layer.kernel_size for layer in self.layers)

    def parameter_count(self) -> int:
        count = 0
        in_c = self.input_channels
        for layer in self.layers:
            count += layer.out_channels * in_c * layer.kernel_size ** 2 + layer.out_channels
            in_c = layer.out_channels
        return count


def build_net_s() -> NetworkSpec:
    """Structure branch: kernels 9/1/5, depths 64/32/1, linear head."""
    return NetworkSpec(
        kind=NET_S,
        input_channels=1,
        layers=(
            LayerSpec(64, 9, relu=True),
            LayerSpec(32, 1, relu=True),
            LayerSpec(1, 5, relu=False),
        ),
    )


def build_net_d() -> NetworkSpec:
    """Detail branch: 20 layers of 3x3, 64 hidden channels, linear 1-channel head."""
    layers = [LayerSpec(64, 3, relu=True) for _ in range(19)]
    layers.append(LayerSpec(1, 3, relu=False))
    return NetworkSpec(kind=NET_D, input_channels=1, layers=tuple(layers))


def build_scaled(kind: str, channel_scale: int = 8, depth: int | None = None) -> NetworkSpec:
    """Reduced version of either branch family for desk-scale runs.

    The structure family keeps its 9/1/5 kernel pattern (a single 9 head
    for depth 1) with channels halving down to the 1-channel head; the
    detail family is ``depth`` layers of 3x3 with ``channel_scale`` hidden
    channels.
    """
    if channel_scale < 1:
        raise ValueError("channel_scale must be >= 1")
    if kind == NET_S:
        depth = 3 if depth is None else depth
        if depth < 1:
            raise ValueError("depth must be >= 1")
        if depth == 1:
            kernels = [9]
        else:
            kernels = [9] + [1] * (depth - 2) + [5]
        channels = [max(1, channel_scale >> i) for i in range(depth - 1)] + [1]
    elif kind == NET_D:
        depth = 20 if depth is None else depth
        if depth < 1:
            raise ValueError("depth must be >= 1")
        kernels = [3] * depth
        channels = [channel_scale] * (depth - 1) + [1]
    else:
        raise ValueError(f"unknown network kind {kind!r}")
    layers = tuple(
        LayerSpec(c, k, relu=(i < depth - 1)) for i, (c, k) in enumerate(zip(channels, kernels))
    )
    return NetworkSpec(kind=kind, input_channels=1, layers=layers)


@dataclass(frozen=True)
class Parameters:
    """Learned weights of one branch, one ConvKernel per layer."""

    spec: NetworkSpec
    kernels: tuple[ConvKernel, ...]

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if len(self.kernels) != self.spec.depth:
            raise ShapeError(
                f"{len(self.kernels)} kernels for a {self.spec.depth}-layer spec"
            )
        in_c = self.spec.input_channels
        for i, (layer, k) in enumerate(zip(self.spec.layers, self.kernels)):
            if k.in_channels != in_c or k.out_channels != layer.out_channels:
                raise ShapeError(f"layer {i} kernel is {k.out_channels}x{k.in_channels}, "
                                 f"spec wants {layer.out_channels}x{in_c}")
            if k.kernel_h != layer.kernel_size or k.kernel_w != layer.kernel_size:
                raise ShapeError(f"layer {i} kernel size mismatch")
            in_c = layer.out_channels

    def size(self) -> int:
        return sum(k.size for k in self.kernels)


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations saved by forward for backward."""

    inputs: list[Tensor]
    pre_acts: list[Tensor]
    output: Tensor


def init_parameters(spec: NetworkSpec, seed: int) -> Parameters:
    """He-style Gaussian init: std sqrt(2 / (in_channels * k^2)), zero bias."""
    rng = np.random.default_rng(seed)
    kernels = []
    in_c = spec.input_channels
    for layer in spec.layers:
        k = layer.kernel_size
        std = np.sqrt(2.0 / (in_c * k * k))
        weights = rng.normal(0.0, std, size=(layer.out_channels, in_c, k, k))
        kernels.append(ConvKernel(weights=weights, bias=np.zeros(layer.out_channels)))
        in_c = layer.out_channels
    return Parameters(spec=spec, kernels=tuple(kernels))


def zero_parameters(spec: NetworkSpec) -> Parameters:
    kernels = []
    in_c = spec.input_channels
    for layer in spec.layers:
        kernels.append(ConvKernel.zeros(layer.out_channels, in_c, layer.kernel_size, layer.kernel_size))
        in_c = layer.out_channels
    return Parameters(spec=spec, kernels=tuple(kernels))


def forward(params: Parameters, input: Tensor) -> tuple[Tensor, ForwardCache]:
    """Run the branch; returns the output and the cache backward consumes."""
    if input.shape[0] != params.spec.input_channels:
        raise ShapeError(
            f"input has {input.shape[0]} channels, spec expects {params.spec.input_channels}"
        )
    x = input
    inputs, pre_acts = [], []
    for layer, kernel in zip(params.spec.layers, params.kernels):
        inputs.append(x)
        z = conv2d_forward(x, kernel)
        pre_acts.append(z)
        x = relu_forward(z) if layer.relu else z
    return x, ForwardCache(inputs=inputs, pre_acts=pre_acts, output=x)


def backward(
    params: Parameters, cache: ForwardCache, grad_output: Tensor
) -> tuple[Parameters, Tensor]:
    """Exact gradients of sum(grad_output * output) w.r.t. weights and input.

    Returns (gradients shaped like params, grad wrt the branch input); the
    input gradient feeds the upstream stage in cascade mode.
    """
    if grad_output.shape != cache.output.shape:
        raise ShapeError(
            f"grad_output shape {grad_output.shape} != output shape {cache.output.shape}"
        )
    grad = grad_output
    grads: list[ConvKernel] = [None] * params.spec.depth  # type: ignore[list-item]
    for i in reversed(range(params.spec.depth)):
        if params.spec.layers[i].relu:
            grad = relu_backward(cache.pre_acts[i], grad)
        grad, gw, gb = conv2d_backward(cache.inputs[i], params.kernels[i], grad)
        grads[i] = ConvKernel(weights=gw, bias=gb)
    return Parameters(spec=params.spec, kernels=tuple(grads)), grad
