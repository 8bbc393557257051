"""Mini-batch training loop over the flat-vector model.

Deterministic end to end: the epoch shuffles come from one PCG64 stream
seeded with ``shuffle_seed``, batches are consecutive slices of each
permutation, and all arithmetic is float64. Training twice with the
same seeds yields bit-identical parameters.

The optional ``batch_hook`` is invoked once per batch just before the
update is applied; it receives the live parameters, the batch mean
gradient and a ``preview`` callable that reports the exact delta the
optimizer would apply to any gradient. Gradient ledgers are built on
this hook without touching the loop itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .model import ModelSpec, ParamVector, grad_cross_entropy
from .optim import make_optimizer
from .utils import rng_from
from .validation import as_float_matrix, as_label_vector

_OPTIMIZER_NAMES = ("sgd", "adam", "lbfgs")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    epochs: int
    batch_size: int
    learning_rate: float
    optimizer: str = "sgd"
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in _OPTIMIZER_NAMES:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; "
                             f"expected one of {_OPTIMIZER_NAMES}")


@dataclass
class BatchContext:
    """What a batch hook gets to see just before an update is applied."""

    epoch: int
    indices: np.ndarray          # positions into the training arrays
    params: ParamVector          # live, pre-update; hooks must not mutate
    mean_grad: np.ndarray        # batch mean gradient, flat
    preview: Callable[[np.ndarray], np.ndarray]
    batch_size: int


def train(params: ParamVector, spec: ModelSpec, config: TrainConfig,
          X, labels, batch_hook: Optional[Callable[[BatchContext], None]] = None
          ) -> ParamVector:
    """Train a copy of ``params`` on (X, labels); the input is untouched.

    ``epochs == 0`` returns a bit-identical copy. A single epoch whose
    batch covers the whole set is numerically one optimizer step on the
    full-batch gradient.
    """
    X = as_float_matrix(X)
    labels = as_label_vector(labels, n_classes=spec.n_classes)
    if len(labels) != len(X):
        raise ValueError("X and labels must have matching length")
    if config.optimizer == "lbfgs" and batch_hook is not None:
        raise ValueError("batch hooks are only supported for sgd and adam; "
                         "lbfgs steps are closure-driven and have no "
                         "attributable per-sample delta")

    params = params.copy()
    if config.epochs == 0:
        return params

    opt = make_optimizer(config.optimizer, config.learning_rate)
    rng = rng_from(config.shuffle_seed)
    n = len(X)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            Xb, yb = X[idx], labels[idx]
            if config.optimizer == "lbfgs":
                def closure(theta, Xb=Xb, yb=yb):
                    loss, grad = grad_cross_entropy(
                        params.with_values(theta), spec, Xb, yb)
                    return loss, grad.values
                new_values, _, _ = opt.step(params.values, closure)
                params.values = new_values
            else:
                _, grad = grad_cross_entropy(params, spec, Xb, yb)
                if batch_hook is not None:
                    batch_hook(BatchContext(
                        epoch=epoch, indices=idx, params=params,
                        mean_grad=grad.values, preview=opt.preview,
                        batch_size=len(idx)))
                params.values = params.values + opt.step(grad.values)
    return params
