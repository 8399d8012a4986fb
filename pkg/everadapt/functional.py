"""Network layers as differentiable functions of `Tensor` operands."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import DimensionError, ParameterError
from .tensor import Array, Tensor, emit


def dense(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """
    Affine map `input @ weight.T + bias`.

    Args:
        input: Batch of feature rows, shape `[B, Fin]`.
        weight: Shape `[Fout, Fin]`.
        bias: Shape `[Fout]`.

    Raises:
        DimensionError: If the shapes do not conform.
    """
    if (
        input.ndim != 2
        or weight.ndim != 2
        or bias.shape != (weight.shape[0],)
        or input.shape[1] != weight.shape[1]
    ):
        raise DimensionError(
            f"dense shapes do not conform: input {input.shape}, weight {weight.shape}, "
            f"bias {bias.shape}."
        )

    def vjp(grad: Array) -> tuple[Array, Array, Array]:
        return grad @ weight.data, grad.T @ input.data, grad.sum(axis=0)

    return emit("dense", (input, weight, bias), input.data @ weight.data.T + bias.data, vjp)


def conv1d(
    input: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """
    Cross-correlation of `[B, Cin, L]` signals with a `[Cout, Cin, K]` kernel bank.

    The output length is `floor((L + 2 * padding - K) / stride) + 1`. Padding is zero padding on
    both ends.
    """
    if stride < 1 or padding < 0:
        raise ParameterError(f"conv1d needs stride >= 1 and padding >= 0, got {stride}, {padding}.")
    if input.ndim != 3 or kernel.ndim != 3 or input.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"conv1d shapes do not conform: input {input.shape}, kernel {kernel.shape}."
        )
    if bias.shape != (kernel.shape[0],):
        raise DimensionError(f"conv1d bias must have shape ({kernel.shape[0]},), got {bias.shape}.")
    length, width = input.shape[2], kernel.shape[2]
    if length + 2 * padding < width:
        raise DimensionError(
            f"conv1d kernel of width {width} exceeds padded length {length + 2 * padding}."
        )
    padded = np.pad(input.data, ((0, 0), (0, 0), (padding, padding)))
    # [B, Cin, Lout, K]
    windows = sliding_window_view(padded, width, axis=2)[:, :, ::stride, :]
    out_len = windows.shape[2]
    out = np.tensordot(windows, kernel.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    out = out + bias.data[None, :, None]

    def vjp(grad: Array) -> tuple[Array, Array, Array]:
        grad_kernel = np.tensordot(grad, windows, axes=([0, 2], [0, 2]))
        grad_padded = np.zeros_like(padded)
        span = stride * (out_len - 1) + 1
        for offset in range(width):
            grad_padded[:, :, offset : offset + span : stride] += np.einsum(
                "bol,oc->bcl", grad, kernel.data[:, :, offset]
            )
        grad_input = grad_padded[:, :, padding : padding + length]
        return grad_input, grad_kernel, grad.sum(axis=(0, 2))

    return emit("conv1d", (input, kernel, bias), np.ascontiguousarray(out), vjp)


def relu(input: Tensor) -> Tensor:
    mask = input.data > 0
    return emit("relu", (input,), input.data * mask, lambda grad: (grad * mask,))


def maxpool1d(input: Tensor, window: int, stride: int) -> Tensor:
    """Windowed maximum over the last axis; ties route the gradient to the first maximum."""
    if window < 1 or stride < 1:
        raise ParameterError(f"maxpool1d needs positive window and stride, got {window}, {stride}.")
    if input.ndim != 3:
        raise DimensionError(f"maxpool1d expects [B, C, L], got {input.shape}.")
    if window > input.shape[2]:
        raise DimensionError(f"maxpool1d window {window} exceeds length {input.shape[2]}.")
    windows = sliding_window_view(input.data, window, axis=2)[:, :, ::stride, :]
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    span = stride * (windows.shape[2] - 1) + 1

    def vjp(grad: Array) -> tuple[Array]:
        grad_input = np.zeros_like(input.data)
        for offset in range(window):
            grad_input[:, :, offset : offset + span : stride] += grad * (argmax == offset)
        return (grad_input,)

    return emit("maxpool1d", (input,), out, vjp)


def adaptive_avg_pool1d(input: Tensor, out_len: int) -> Tensor:
    """
    Average contiguous bins so the last axis has `out_len` cells.

    Bin `i` spans `floor(i * L / out_len)` up to `floor((i + 1) * L / out_len)`.
    """
    if input.ndim != 3:
        raise DimensionError(f"adaptive_avg_pool1d expects [B, C, L], got {input.shape}.")
    length = input.shape[2]
    if out_len < 1 or out_len > length:
        raise DimensionError(f"adaptive_avg_pool1d cannot pool length {length} to {out_len}.")
    bounds = [(i * length // out_len, (i + 1) * length // out_len) for i in range(out_len)]
    out = np.stack([input.data[:, :, lo:hi].mean(axis=2) for lo, hi in bounds], axis=2)

    def vjp(grad: Array) -> tuple[Array]:
        grad_input = np.zeros_like(input.data)
        for index, (lo, hi) in enumerate(bounds):
            grad_input[:, :, lo:hi] = grad[:, :, index : index + 1] / (hi - lo)
        return (grad_input,)

    return emit("adaptive_avg_pool1d", (input,), out, vjp)


def dropout(input: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """
    Inverted dropout: survivors are scaled by `1 / (1 - p)` so evaluation is the identity.
    """
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}.")
    if not training or p == 0.0:
        return input
    mask = (rng.random(input.shape) >= p) / (1.0 - p)
    return emit("dropout", (input,), input.data * mask, lambda grad: (grad * mask,))


def softmax(logits: Tensor) -> Tensor:
    """Row softmax over the last axis, computed on max-shifted logits."""
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    out = exps / exps.sum(axis=-1, keepdims=True)

    def vjp(grad: Array) -> tuple[Array]:
        return (out * (grad - (grad * out).sum(axis=-1, keepdims=True)),)

    return emit("softmax", (logits,), out, vjp)


def log_softmax(logits: Tensor) -> Tensor:
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def vjp(grad: Array) -> tuple[Array]:
        return (grad - np.exp(out) * grad.sum(axis=-1, keepdims=True),)

    return emit("log_softmax", (logits,), out, vjp)
