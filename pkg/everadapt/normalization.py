from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike

from .exceptions import BatchSizeError, DimensionError, LifecycleError, ParameterError
from .tensor import Array, Tensor, as_tensor, rsqrt
from .types import NormStateMode

logger = logging.getLogger(__name__)


@dataclass
class BatchNormState:
    """
    Per-channel affine parameters and running statistics of one normalization layer.

    In `CBN` mode the running statistics are the frozen source statistics and no forward pass
    mutates them.
    """

    gamma: Tensor
    """Learnable scale, one per channel."""
    beta: Tensor
    """Learnable shift, one per channel."""
    mu_ema: Array
    """Running mean accumulated during source pretraining."""
    var_ema: Array
    """Running (biased) variance accumulated during source pretraining."""
    epsilon: float = 1e-5
    ema_momentum: float = 0.1
    """Weight of the current batch in the moving average."""
    mode: NormStateMode = "TRAIN_BN"
    populated: bool = field(default=False)
    """Whether at least one batch has been folded into the running statistics."""

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}.")
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise ParameterError(f"ema_momentum must lie in [0, 1], got {self.ema_momentum}.")
        self.mu_ema = np.array(self.mu_ema, dtype=np.float64)
        self.var_ema = np.array(self.var_ema, dtype=np.float64)

    @classmethod
    def create(
        cls, channels: int, *, epsilon: float = 1e-5, ema_momentum: float = 0.1, name: str = ""
    ) -> BatchNormState:
        """Fresh state: gamma 1, beta 0, running mean 0 and running variance 1."""
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True, name=f"{name}gamma"),
            beta=Tensor(np.zeros(channels), requires_grad=True, name=f"{name}beta"),
            mu_ema=np.zeros(channels),
            var_ema=np.ones(channels),
            epsilon=epsilon,
            ema_momentum=ema_momentum,
        )

    @property
    def channels(self) -> int:
        return int(self.mu_ema.shape[0])

    def freeze(self) -> None:
        """Switch to continual normalization with the accumulated source statistics."""
        if not self.populated:
            raise LifecycleError(
                "Cannot freeze normalization statistics that were never populated; "
                "pretrain on the source domain first."
            )
        self.mode = "CBN"

    def standardize(self, values: ArrayLike) -> Array:
        """Pre-affine normalization of `[B, C, *]` values with the stored running statistics."""
        values = np.asarray(values, dtype=np.float64)
        shape = _channel_shape(values.ndim, self.channels)
        return (values - self.mu_ema.reshape(shape)) / np.sqrt(
            self.var_ema.reshape(shape) + self.epsilon
        )


def _channel_shape(ndim: int, channels: int) -> tuple[int, ...]:
    return (1, channels) + (1,) * (ndim - 2)


def _check_input(input: Tensor, state: BatchNormState) -> tuple[int, ...]:
    if input.ndim < 2 or input.shape[1] != state.channels:
        raise DimensionError(
            f"Normalization of {state.channels} channels got input of shape {input.shape}."
        )
    return _channel_shape(input.ndim, state.channels)


def _affine(normalized: Tensor, state: BatchNormState, shape: tuple[int, ...]) -> Tensor:
    return normalized * state.gamma.reshape(shape) + state.beta.reshape(shape)


def _normalize_with(
    input: Tensor, state: BatchNormState, mean: Array, var: Array, shape: tuple[int, ...]
) -> Tensor:
    scale = as_tensor(1.0 / np.sqrt(var.reshape(shape) + state.epsilon))
    return _affine((input - as_tensor(mean.reshape(shape))) * scale, state, shape)


def _batch_normalize(
    input: Tensor, state: BatchNormState, shape: tuple[int, ...]
) -> tuple[Tensor, Array, Array]:
    if input.shape[0] < 2:
        raise BatchSizeError(
            f"Batch statistics need at least 2 samples, got a batch of {input.shape[0]}."
        )
    axes = (0, *range(2, input.ndim))
    mean = input.mean(axis=axes, keepdims=True)
    centered = input - mean
    var = (centered * centered).mean(axis=axes, keepdims=True)
    normalized = centered * rsqrt(var + state.epsilon)
    return (
        _affine(normalized, state, shape),
        mean.data.reshape(state.channels),
        var.data.reshape(state.channels),
    )


def ema_update(state: BatchNormState, mu_batch: ArrayLike, var_batch: ArrayLike) -> BatchNormState:
    """
    Fold one batch's statistics into the running ones:
    `mu <- (1 - m) * mu + m * mu_batch`, likewise for the variance.
    """
    if state.mode == "CBN":
        raise LifecycleError("Running statistics are frozen in CBN mode.")
    momentum = state.ema_momentum
    state.mu_ema = (1.0 - momentum) * state.mu_ema + momentum * np.asarray(mu_batch, np.float64)
    state.var_ema = (1.0 - momentum) * state.var_ema + momentum * np.asarray(var_batch, np.float64)
    state.populated = True
    return state


def bn_forward(input: Tensor, state: BatchNormState) -> Tensor:
    """
    Conventional batch normalization.

    `TRAIN_BN` normalizes by the statistics of the batch itself (per channel, over the batch and
    spatial axes) and folds them into the running statistics. `EVAL_BN` uses the running
    statistics and changes nothing.

    Raises:
        BatchSizeError: If a `TRAIN_BN` batch has fewer than two samples.
        LifecycleError: If the state is in `CBN` mode.
    """
    shape = _check_input(input, state)
    if state.mode == "CBN":
        raise LifecycleError("bn_forward called on a state in CBN mode; use cbn_forward.")
    if state.mode == "EVAL_BN":
        return _normalize_with(input, state, state.mu_ema, state.var_ema, shape)
    output, mean, var = _batch_normalize(input, state, shape)
    ema_update(state, mean, var)
    return output


def cbn_forward(input: Tensor, state: BatchNormState) -> Tensor:
    """
    Continual batch normalization: every batch is standardized with the frozen source statistics.

    Gamma and beta keep receiving gradients.
    """
    shape = _check_input(input, state)
    if state.mode != "CBN" or not state.populated:
        raise LifecycleError(
            "cbn_forward needs frozen source statistics; pretrain and freeze the state first."
        )
    return _normalize_with(input, state, state.mu_ema, state.var_ema, shape)


def normalize(input: Tensor, state: BatchNormState, *, batch_statistics: bool = False) -> Tensor:
    """
    Dispatch on the state's mode.

    With `batch_statistics` a `CBN` state normalizes by the statistics of the batch itself
    without touching the running statistics.
    """
    if state.mode != "CBN":
        return bn_forward(input, state)
    if batch_statistics:
        return _batch_normalize(input, state, _check_input(input, state))[0]
    return cbn_forward(input, state)
