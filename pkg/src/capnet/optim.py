"""Binary cross-entropy loss, the Adam update, and a plain SGD baseline.

The loss treats every one-hot cell across all heads as one Bernoulli term,
so the mean is over the full prediction tensor and the gradient scale does
not depend on how many heads contributed.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError, ValidationError
from .tensor import Tensor

CLIP = 1e-7


@dataclass
class AdamHyper:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.beta1 < 1.0:
            raise ParameterError(f"beta1 must lie in (0,1), got {self.beta1}")
        if not 0.0 < self.beta2 < 1.0:
            raise ParameterError(f"beta2 must lie in (0,1), got {self.beta2}")
        if self.epsilon <= 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")


class AdamState:
    """First and second moment accumulators plus the completed-step count."""

    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0


@dataclass
class LossValue:
    loss: float
    gradient: Tensor


def bce_loss(predictions: Tensor, targets: Tensor) -> LossValue:
    """Mean binary cross-entropy over every element, with its analytic gradient.

    Predictions are clipped into [1e-7, 1 - 1e-7] before the logs; the
    gradient is -(1/N) * (y/p - (1-y)/(1-p)) on the clipped values.
    """
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise DimensionError(
            f"bce_loss shapes differ: predictions {predictions.shape}, targets {targets.shape}"
        )
    if not np.all((targets == 0) | (targets == 1)):
        raise ValidationError("bce_loss targets must be 0 or 1")
    p = np.clip(predictions.astype(np.float64), CLIP, 1.0 - CLIP)
    y = targets.astype(np.float64)
    n = p.size
    loss = float(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n)
    grad = -(y / p - (1.0 - y) / (1.0 - p)) / n
    return LossValue(loss, grad.astype(predictions.dtype, copy=False))


def adam_step(params: Tensor, grads: Tensor, state: AdamState, hyper: AdamHyper) -> Tensor:
    """One Adam update; mutates state (m, v, t) and returns the new parameters.

    m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g^2
    mhat = m/(1-b1^t);    vhat = v/(1-b2^t)      with t the new step count
    theta = theta - lr * mhat / (sqrt(vhat) + eps)
    """
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise DimensionError(
            f"adam_step shapes differ: params {params.shape}, grads {grads.shape}, "
            f"state {state.m.shape}"
        )
    state.t += 1
    t = state.t
    state.m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grads
    state.v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grads * grads
    mhat = state.m / (1.0 - hyper.beta1 ** t)
    vhat = state.v / (1.0 - hyper.beta2 ** t)
    update = hyper.learning_rate * mhat / (np.sqrt(vhat) + hyper.epsilon)
    # moments run at 64-bit; keep the parameter's own precision
    return (params - update).astype(params.dtype, copy=False)


def sgd_step(params: Tensor, grads: Tensor, learning_rate: float) -> Tensor:
    if params.shape != grads.shape:
        raise DimensionError(
            f"sgd_step shapes differ: params {params.shape}, grads {grads.shape}"
        )
    return params - learning_rate * grads


class AdamOptimizer:
    """Applies adam_step to a list of named parameters, one state per name."""

    def __init__(self, hyper: AdamHyper | None = None):
        self.hyper = hyper or AdamHyper()
        self.states: dict[str, AdamState] = {}

    def step(self, parameters):
        for p in parameters:
            state = self.states.get(p.name)
            if state is None:
                state = self.states[p.name] = AdamState(p.value.shape)
            p.value = adam_step(p.value, p.grad, state, self.hyper)


class SgdOptimizer:
    def __init__(self, learning_rate: float = 0.001):
        if learning_rate < 0:
            raise ParameterError(f"learning_rate must be non-negative, got {learning_rate}")
        self.learning_rate = learning_rate

    def step(self, parameters):
        for p in parameters:
            p.value = sgd_step(p.value, p.grad, self.learning_rate)
