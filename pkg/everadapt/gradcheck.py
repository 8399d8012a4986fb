"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence

import numpy as np

from .tensor import Graph, Tensor, backward, no_grad

logger = logging.getLogger(__name__)


def numeric_gradient(
    fn: Callable[..., Tensor], inputs: Sequence[Tensor], index: int, h: float
) -> np.ndarray:
    target = inputs[index]
    # perturbations go through a flat view
    target.data = np.ascontiguousarray(target.data)
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    with no_grad():
        for position in range(flat.size):
            original = flat[position]
            flat[position] = original + h
            upper = fn(*inputs).item()
            flat[position] = original - h
            lower = fn(*inputs).item()
            flat[position] = original
            grad.reshape(-1)[position] = (upper - lower) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, eps: float = 1e-12) -> float:
    """`|a - n| / max(|a|, |n|, eps)` in the Euclidean norm."""
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), eps)
    return float(np.linalg.norm(analytic - numeric)) / scale


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """
    Compare the gradients from `backward` with central finite differences.

    `fn` must map the inputs to a scalar tensor and be deterministic. Only inputs with
    `requires_grad` are checked; their `.grad` slots are reset by the check.

    Returns:
        The relative error of the analytic gradient over all checked inputs, taken as one vector.
    """
    for tensor in inputs:
        tensor.grad = None
    with Graph() as graph:
        loss = fn(*inputs)
    backward(graph, loss)
    analytic_parts: list[np.ndarray] = []
    numeric_parts: list[np.ndarray] = []
    for index, tensor in enumerate(inputs):
        if not tensor.requires_grad:
            continue
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        numeric = numeric_gradient(fn, inputs, index, h)
        logger.debug(
            "gradcheck input %d: relative error %.3e", index, relative_error(analytic, numeric)
        )
        analytic_parts.append(analytic.reshape(-1))
        numeric_parts.append(numeric.reshape(-1))
        tensor.grad = None
    if not analytic_parts:
        return 0.0
    return relative_error(np.concatenate(analytic_parts), np.concatenate(numeric_parts))
