"""Dense tensor primitives: same-padding 2D convolution, ReLU, elementwise ops.

Conventions used throughout the package:

- A "tensor" is a C-contiguous ``numpy.float64`` array of shape
  ``(channels, height, width)``.  Row-major layout, one canonical axis
  order, no batch axis (batching is a loop at trainer level).
- Convolutions are stride-1 with zero "same" padding of ``(k - 1) // 2``
  on each side, so spatial size is always preserved.  Kernel sides must
  be odd.
- Every operation is a pure function of its inputs; nothing is mutated.

The forward convolution is an im2col + matmul; its backward pass returns
the exact partial derivatives of ``sum(grad_out * forward(input, kernel))``
with respect to input, weights and bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Tensor = np.ndarray  # (channels, height, width) float64


class ShapeError(ValueError):
    """Operand shapes violate an operation's precondition."""


def tensor(data) -> Tensor:
    """Coerce nested sequences / arrays to a float64 (C, H, W) tensor."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[np.newaxis, :, :]
    if arr.ndim != 3:
        raise ShapeError(f"tensor must be rank 3 (C, H, W), got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def zeros(channels: int, height: int, width: int) -> Tensor:
    return np.zeros((channels, height, width), dtype=np.float64)


def require_same_shape(a: Tensor, b: Tensor, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} must share one shape, got {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class ConvKernel:
    """Weights of one convolution layer.

    ``weights`` has shape (out_channels, in_channels, kernel_h, kernel_w),
    ``bias`` has shape (out_channels,).  Kernel sides must be odd so that
    same padding is symmetric.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        b = np.ascontiguousarray(np.asarray(self.bias, dtype=np.float64))
        if w.ndim != 4:
            raise ShapeError(f"kernel weights must be rank 4, got shape {w.shape}")
        if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
            raise ValueError(f"kernel sides must be odd, got {w.shape[2]}x{w.shape[3]}")
        if b.shape != (w.shape[0],):
            raise ShapeError(
                f"bias must have shape ({w.shape[0]},), got {b.shape}"
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_h(self) -> int:
        return self.weights.shape[2]

    @property
    def kernel_w(self) -> int:
        return self.weights.shape[3]

    @property
    def size(self) -> int:
        return self.weights.size + self.bias.size

    @classmethod
    def zeros(cls, out_channels: int, in_channels: int, kh: int, kw: int) -> "ConvKernel":
        return cls(
            weights=np.zeros((out_channels, in_channels, kh, kw)),
            bias=np.zeros(out_channels),
        )


def _im2col(padded: np.ndarray, kh: int, kw: int, h: int, w: int) -> np.ndarray:
    """(C, H+kh-1, W+kw-1) zero-padded input -> (H*W, C*kh*kw) patch matrix."""
    win = sliding_window_view(padded, (kh, kw), axis=(1, 2))  # (C, H, W, kh, kw)
    return win.transpose(1, 2, 0, 3, 4).reshape(h * w, -1)


def conv2d_forward(input: Tensor, kernel: ConvKernel) -> Tensor:
    """Same-padding stride-1 convolution.

    output[o, y, x] = bias[o]
        + sum_{c,dy,dx} input[c, y+dy-ph, x+dx-pw] * weights[o, c, dy, dx]
    with out-of-range input reads as zero.
    """
    if input.ndim != 3 or input.shape[0] != kernel.in_channels:
        raise ShapeError(
            f"input has {input.shape[0] if input.ndim == 3 else '?'} channels, "
            f"kernel expects {kernel.in_channels}"
        )
    c, h, w = input.shape
    kh, kw = kernel.kernel_h, kernel.kernel_w
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    padded = np.pad(input, ((0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(padded, kh, kw, h, w)
    wmat = kernel.weights.reshape(kernel.out_channels, -1)
    out = cols @ wmat.T + kernel.bias
    return np.ascontiguousarray(out.reshape(h, w, kernel.out_channels).transpose(2, 0, 1))


def conv2d_backward(
    input: Tensor, kernel: ConvKernel, grad_out: Tensor
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Gradients of sum(grad_out * conv2d_forward(input, kernel)).

    Returns (grad_input, grad_weights, grad_bias) with the same shapes as
    (input, kernel.weights, kernel.bias).
    """
    if input.shape[0] != kernel.in_channels:
        raise ShapeError(
            f"input has {input.shape[0]} channels, kernel expects {kernel.in_channels}"
        )
    c, h, w = input.shape
    if grad_out.shape != (kernel.out_channels, h, w):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} != forward output shape "
            f"{(kernel.out_channels, h, w)}"
        )
    kh, kw = kernel.kernel_h, kernel.kernel_w
    ph, pw = (kh - 1) // 2, (kw - 1) // 2

    padded = np.pad(input, ((0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(padded, kh, kw, h, w)                      # (H*W, C*kh*kw)
    go = grad_out.transpose(1, 2, 0).reshape(h * w, -1)       # (H*W, O)

    grad_bias = grad_out.sum(axis=(1, 2))
    grad_weights = (go.T @ cols).reshape(kernel.weights.shape)

    wmat = kernel.weights.reshape(kernel.out_channels, -1)
    grad_cols = (go @ wmat).reshape(h, w, c, kh, kw)
    grad_padded = np.zeros_like(padded)
    for dy in range(kh):
        for dx in range(kw):
            grad_padded[:, dy : dy + h, dx : dx + w] += grad_cols[:, :, :, dy, dx].transpose(2, 0, 1)
    grad_input = np.ascontiguousarray(grad_padded[:, ph : ph + h, pw : pw + w])
    return grad_input, grad_weights, grad_bias


def relu_forward(input: Tensor) -> Tensor:
    """Elementwise max(0, x)."""
    return np.maximum(input, 0.0)


def relu_backward(input: Tensor, grad_out: Tensor) -> Tensor:
    """grad_out where input > 0, else 0 (subgradient 0 at exactly 0)."""
    require_same_shape(input, grad_out, "relu input and grad_out")
    return np.where(input > 0.0, grad_out, 0.0)


def add(a: Tensor, b: Tensor) -> Tensor:
    require_same_shape(a, b)
    return a + b


def sub(a: Tensor, b: Tensor) -> Tensor:
    require_same_shape(a, b)
    return a - b


def mul(a: Tensor, b: Tensor) -> Tensor:
    require_same_shape(a, b)
    return a * b


def scale(a: Tensor, s: float) -> Tensor:
    return a * float(s)
