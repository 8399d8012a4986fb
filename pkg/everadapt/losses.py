"""Training objectives: source cross-entropy, kernel alignment, entropy, replay and their mix."""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .exceptions import DimensionError, LabelError, ParameterError, SetSizeError
from .functional import log_softmax, softmax
from .tensor import Array, Tensor, as_tensor, exp, gather, index_select
from .types import LossTerm

if TYPE_CHECKING:
    from .models import Model
    from .replay import MemoryBatch

logger = logging.getLogger(__name__)


class KernelConfig(BaseModel):
    """
    Sum of RBF kernels `exp(-d^2 / (2 sigma^2))` over a ladder of bandwidths.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    bandwidths: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
    relative_to_median: bool = True
    """Scale the ladder by the median pairwise distance of the joint set."""

    @field_validator("bandwidths")
    @classmethod
    def _check_bandwidths(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value or any(bandwidth <= 0 for bandwidth in value):
            raise ValueError("bandwidths must be a non-empty list of positive numbers")
        return value


class LossWeights(BaseModel):
    """
    Weights of the overall objective: `alpha(t) * L_e + (1 - alpha(t)) * L_loc + beta * L_m + L_s`.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha_start: float = Field(1.0, ge=0.0, le=1.0)
    alpha_end: float = Field(0.1, ge=0.0, le=1.0)
    total_steps: int = Field(1, ge=1)
    """Steps over which alpha moves from `alpha_start` to `alpha_end`."""
    beta_replay: float = Field(1.0, ge=0.0, allow_inf_nan=False)


def _zero() -> Tensor:
    return Tensor(0.0)


def cross_entropy(logits: Tensor, labels: ArrayLike) -> Tensor:
    """
    Mean of `-log softmax(logits)[label]` over the batch.

    Raises:
        LabelError: If a label lies outside `[0, C)`.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(
            f"cross_entropy expects logits [B, C] and labels [B], got {logits.shape} and "
            f"{labels.shape}."
        )
    classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise LabelError(f"Labels must lie in [0, {classes}), got {labels.min()}..{labels.max()}.")
    return -gather(log_softmax(logits), labels.astype(np.intp)).mean()


def entropy_loss(logits: Tensor) -> Tensor:
    """Mean Shannon entropy (nats) of the predicted class distribution."""
    probs = softmax(logits)
    return -(probs * log_softmax(logits)).sum(axis=1).mean()


def _squared_distances(set_a: Tensor, set_b: Tensor) -> Tensor:
    norms_a = (set_a * set_a).sum(axis=1, keepdims=True)
    norms_b = (set_b * set_b).sum(axis=1, keepdims=True)
    return norms_a + norms_b.T - (set_a @ set_b.T) * 2.0


def median_distance(points: Array) -> float:
    """Median Euclidean distance over distinct pairs; 1.0 when undefined or zero."""
    if points.shape[0] < 2:
        return 1.0
    diffs = points[:, None, :] - points[None, :, :]
    distances = np.sqrt((diffs * diffs).sum(axis=-1))
    upper = distances[np.triu_indices(points.shape[0], k=1)]
    median = float(np.median(upper))
    return median if median > 0 and np.isfinite(median) else 1.0


def kernel_sigmas(set_a: Tensor, set_b: Tensor, kernel: KernelConfig) -> list[float]:
    scale = 1.0
    if kernel.relative_to_median:
        scale = median_distance(np.concatenate([set_a.data, set_b.data], axis=0))
    return [bandwidth * scale for bandwidth in kernel.bandwidths]


def _kernel_mean(set_a: Tensor, set_b: Tensor, sigmas: list[float]) -> Tensor:
    distances = _squared_distances(set_a, set_b)
    total: Tensor | None = None
    for sigma in sigmas:
        term = exp(distances * (-1.0 / (2.0 * sigma * sigma)))
        total = term if total is None else total + term
    assert total is not None
    return total.mean()


def mmd(set_a: Tensor, set_b: Tensor, kernel: KernelConfig) -> Tensor:
    """
    Biased squared MMD estimate `mean k(a, a') + mean k(b, b') - 2 mean k(a, b)`.

    Raises:
        SetSizeError: If either set is empty.
    """
    if set_a.ndim != 2 or set_b.ndim != 2 or set_a.shape[1] != set_b.shape[1]:
        raise DimensionError(f"mmd expects [Na, d] and [Nb, d], got {set_a.shape}, {set_b.shape}.")
    if set_a.shape[0] < 1 or set_b.shape[0] < 1:
        raise SetSizeError(f"mmd needs non-empty sets, got {set_a.shape[0]} and {set_b.shape[0]}.")
    sigmas = kernel_sigmas(set_a, set_b, kernel)
    return (
        _kernel_mean(set_a, set_a, sigmas)
        + _kernel_mean(set_b, set_b, sigmas)
        - _kernel_mean(set_a, set_b, sigmas) * 2.0
    )


def class_conditional_mmd(
    feat_s: Tensor,
    labels_s: ArrayLike,
    feat_t: Tensor,
    pseudo_t: ArrayLike,
    kernel: KernelConfig,
    *,
    min_samples: int = 2,
) -> Tensor:
    """
    Sum of per-class MMD between source features and pseudo-labeled target features.

    A class contributes only if it has at least `min_samples` samples on both sides; with no such
    class the result is a constant zero.
    """
    labels_s = np.asarray(labels_s)
    pseudo_t = np.asarray(pseudo_t)
    total: Tensor | None = None
    for label in np.intersect1d(labels_s, pseudo_t):
        source_rows = np.flatnonzero(labels_s == label)
        target_rows = np.flatnonzero(pseudo_t == label)
        if len(source_rows) < min_samples or len(target_rows) < min_samples:
            continue
        term = mmd(index_select(feat_s, source_rows), index_select(feat_t, target_rows), kernel)
        total = term if total is None else total + term
    return _zero() if total is None else total


def replay_loss(
    model: Model, memory: MemoryBatch | None, *, batch_statistics: bool = False
) -> LossTerm:
    """
    Cross-entropy of the model's predictions on memory samples against their stored
    pseudo-labels. Skipped (constant zero) when there is no memory batch.
    """
    from .models import forward

    if memory is None or len(memory.pseudo_labels) == 0:
        logger.debug("Replay memory is empty; replay term skipped.")
        return LossTerm(_zero(), True)
    logits = forward(model, memory.segments, batch_statistics=batch_statistics)
    return LossTerm(cross_entropy(logits, memory.pseudo_labels), False)


def alpha_schedule(step: int, weights: LossWeights) -> float:
    """Linear, clamped interpolation from `alpha_start` to `alpha_end`."""
    if step < 0:
        raise ParameterError(f"step must be non-negative, got {step}.")
    progress = min(step / weights.total_steps, 1.0)
    return weights.alpha_start + (weights.alpha_end - weights.alpha_start) * progress


def overall_loss(
    l_e: Tensor | float,
    l_loc: Tensor | float,
    l_replay: Tensor | float,
    l_src: Tensor | float,
    step: int,
    weights: LossWeights,
    *,
    alpha: float | None = None,
) -> Tensor:
    """
    `alpha * L_e + (1 - alpha) * L_loc + beta * L_m + L_s`.

    `alpha` overrides the schedule, e.g. to pin it when a component is disabled.
    """
    if alpha is None:
        alpha = alpha_schedule(step, weights)
    return (
        as_tensor(l_e) * alpha
        + as_tensor(l_loc) * (1.0 - alpha)
        + as_tensor(l_replay) * weights.beta_replay
        + as_tensor(l_src)
    )
