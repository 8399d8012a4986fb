from __future__ import annotations

from collections.abc import Iterable

import numpy as np

from .exceptions import ContractError, ParameterError
from .tensor import Array, Tensor


def _require_grad(param: Tensor) -> Array:
    if param.grad is None:
        label = param.name or repr(param)
        raise ContractError(f"Parameter {label} has no gradient; run backward before stepping.")
    return param.grad


def sgd_step(params: Iterable[Tensor], lr: float, weight_decay: float = 0.0) -> None:
    """
    One plain update `p <- p - lr * (grad + weight_decay * p)`; gradients are cleared afterwards.

    Every gradient is checked before any parameter is touched.
    """
    params = list(params)
    grads = [_require_grad(param) for param in params]
    for param, grad in zip(params, grads, strict=True):
        param.data -= lr * (grad + weight_decay * param.data)
        param.grad = None


class SGD:
    """
    Stochastic gradient descent with optional heavy-ball momentum.

    The velocity buffers are the optimizer state of a whole continual run: they are created once and
    carried across every domain.
    """

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float,
        *,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
    ) -> None:
        if lr < 0 or weight_decay < 0 or not 0.0 <= momentum < 1.0:
            raise ParameterError(
                f"Invalid SGD hyperparameters: lr={lr}, momentum={momentum}, "
                f"weight_decay={weight_decay}."
            )
        self.params: list[Tensor] = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: list[Array] = [np.zeros_like(param.data) for param in self.params]

    def zero_grad(self) -> None:
        for param in self.params:
            param.grad = None

    def step(self) -> None:
        if self.momentum == 0.0:
            sgd_step(self.params, self.lr, self.weight_decay)
            return
        grads = [_require_grad(param) for param in self.params]
        for param, grad, velocity in zip(self.params, grads, self.velocity, strict=True):
            velocity *= self.momentum
            velocity += grad + self.weight_decay * param.data
            param.data -= self.lr * velocity
            param.grad = None
