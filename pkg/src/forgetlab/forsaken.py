"""Neuron-masking unlearning (the "forsaken" method).

The trained parameters stay frozen; a mask vector the same shape as the
parameters is optimized so that the shifted model

    theta(M) = theta_0 - xi * M

moves the unlearn samples' posteriors toward what the model produces on
never-trained data. The objective per mask is

    mean_i KL(posterior_i(M) || target_i)  +  lambda * sum_d w_d |M_d|

where the targets are per-class average posteriors over a reference
pool, fixed before the first iteration, and w is an optional penalty
weight vector derived from cross-entropy gradient magnitudes on a small
probe of retained training data (dimensions the retained task actually
uses get a larger penalty, discouraging collateral damage there).

The mask is optimized directly, by L-BFGS by default; each optimizer
step plays the role of one mask-gradient emission, and the cumulative
mask applied to theta_0 reproduces the iterate recurrence
theta_t = theta_{t-1} - xi * mu_t.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .datasets import ScenarioDataset, sample_reference_set
from .model import (ModelSpec, ParamVector, PROB_FLOOR, forward_batch,
                    grad_cross_entropy, grad_from_output)
from .utils import derive_seed, rng_from
from .validation import as_float_matrix, as_flat_float, as_posterior_matrix

_KL_DIRECTIONS = ("forward", "reverse")
_MASK_OPTIMIZERS = ("lbfgs", "adam")
_WEIGHT_MODES = ("per_dimension", "scalar_mean")


@dataclass
class TargetDistribution:
    """Fixed unlearning targets.

    per_class[c] is the average reference posterior assigned to class c
    (uniform when no reference sample lands in c); assignments maps each
    unlearn sample to the class whose average it is pushed toward, and
    targets holds the resulting per-sample target rows.
    """

    per_class: np.ndarray
    assignments: np.ndarray
    targets: np.ndarray
    empty_classes: tuple = ()


def average_posteriors_by_class(posteriors, labels, n_classes: int):
    """Per-class mean posterior; classes with no samples fall back to uniform.

    The uniform fallback is the maximum-entropy choice: with no evidence
    about a class, the least-committal target is "the model knows
    nothing".
    """
    P = as_posterior_matrix(posteriors, n_classes=None)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != len(P):
        raise ValueError("posteriors and labels must have matching length")
    k = P.shape[1]
    out = np.full((n_classes, k), 1.0 / k)
    empty = []
    for c in range(n_classes):
        rows = P[labels == c]
        if len(rows):
            out[c] = rows.mean(axis=0)
        else:
            empty.append(c)
    return out, tuple(empty)


def estimate_target_posteriors(params: ParamVector, spec: ModelSpec,
                               dataset: ScenarioDataset) -> TargetDistribution:
    """Build the fixed target distribution from the reference pool.

    Reference samples are labeled by the current model's argmax and
    averaged per class. The poison kind instead groups by the stored
    clean labels: the targets there describe what the model produces for
    the original, un-poisoned data.
    """
    ref_idx = sample_reference_set(dataset)
    unlearn_idx = dataset.indices("unlearn")
    if len(unlearn_idx) == 0:
        raise ValueError("dataset has no unlearn samples")
    p = spec.n_classes

    ref_posts = forward_batch(params, spec, dataset.X[ref_idx])
    poisoned = dataset.spec.kind == "poison"
    if poisoned:
        ref_labels = dataset.clean_labels[ref_idx]
        assignments = dataset.clean_labels[unlearn_idx].astype(np.int64)
    else:
        ref_labels = np.argmax(ref_posts, axis=1)
        unlearn_posts = forward_batch(params, spec, dataset.X[unlearn_idx])
        assignments = np.argmax(unlearn_posts, axis=1)

    per_class, empty = average_posteriors_by_class(ref_posts, ref_labels, p)
    return TargetDistribution(per_class=per_class,
                              assignments=assignments,
                              targets=per_class[assignments],
                              empty_classes=empty)


def penalty_weights(params: ParamVector, spec: ModelSpec, X_probe, labels_probe,
                    mode: str = "per_dimension") -> np.ndarray:
    """Mean absolute per-sample cross-entropy gradient over a probe set.

    Computed once, on the original parameters, before any mask step.
    ``scalar_mean`` collapses the vector to its mean, penalizing every
    dimension equally.
    """
    if mode not in _WEIGHT_MODES:
        raise ValueError(f"unknown penalty weight mode {mode!r}")
    X_probe = as_float_matrix(X_probe, name="probe features")
    if len(X_probe) == 0:
        raise ValueError("penalty weight probe set is empty")
    acc = np.zeros(len(params))
    for i in range(len(X_probe)):
        _, g = grad_cross_entropy(params, spec, X_probe[i:i + 1],
                                  labels_probe[i:i + 1])
        acc += np.abs(g.values)
    weights = acc / len(X_probe)
    if mode == "scalar_mean":
        weights = np.full_like(weights, weights.mean())
    return weights


def _kl_rows(P, T, direction):
    """Per-row KL divergence in nats with the probability floor applied."""
    Pc = np.clip(P, PROB_FLOOR, 1.0)
    Tc = np.clip(T, PROB_FLOOR, 1.0)
    if direction == "forward":
        return (P * (np.log(Pc) - np.log(Tc))).sum(axis=1)
    return (T * (np.log(Tc) - np.log(Pc))).sum(axis=1)


def forgetting_loss(params0: ParamVector, spec: ModelSpec, X_unlearn, targets,
                    mask, penalty: float, weights=None,
                    forgetting_coefficient: float = 1.0,
                    kl_direction: str = "forward"):
    """Forgetting objective at a mask, with its exact gradient.

    Returns (loss, grad_wrt_mask, mean_kl). ``penalty == 0`` reduces the
    loss to the bare divergence term. The L1 subgradient uses sign(0)=0.
    """
    if kl_direction not in _KL_DIRECTIONS:
        raise ValueError(f"unknown kl direction {kl_direction!r}")
    X_unlearn = as_float_matrix(X_unlearn, name="unlearn features")
    targets = as_posterior_matrix(targets, n_classes=spec.n_classes, name="targets")
    mask = as_flat_float(mask, length=len(params0), name="mask")
    if len(targets) != len(X_unlearn):
        raise ValueError("targets and unlearn features must have matching length")

    xi = float(forgetting_coefficient)
    shifted = params0.with_values(params0.values - xi * mask)
    n = len(X_unlearn)

    # d(mean KL)/d(posterior row): computed against the clamped values so
    # the gradient stays consistent with the clamped loss.
    def d_kl(P):
        Pc = np.clip(P, PROB_FLOOR, 1.0)
        Tc = np.clip(targets, PROB_FLOOR, 1.0)
        live = (P > PROB_FLOOR).astype(np.float64)
        if kl_direction == "forward":
            return (np.log(Pc) - np.log(Tc) + live) / n
        return -(targets / Pc) * live / n

    probs, kl_grad = grad_from_output(shifted, spec, X_unlearn, d_kl)

    mean_kl = float(_kl_rows(probs, targets, kl_direction).mean())
    grad_mask = -xi * kl_grad.values
    loss = mean_kl
    if penalty != 0.0:
        w = np.ones_like(mask) if weights is None else \
            as_flat_float(weights, length=len(mask), name="penalty weights")
        loss = mean_kl + penalty * float(np.sum(w * np.abs(mask)))
        grad_mask = grad_mask + penalty * w * np.sign(mask)
    return float(loss), grad_mask, mean_kl


@dataclass
class MaskGradient:
    """Cumulative mask and the last optimizer emission."""

    cumulative: np.ndarray
    last_step: np.ndarray


@dataclass
class TraceRow:
    iteration: int
    loss: float
    mean_kl: float
    test_accuracy: float
    mask_l1: float


@dataclass
class ForsakenResult:
    params: ParamVector
    mask: MaskGradient
    trace: list
    targets: TargetDistribution
    iterations: int
    early_stopped: bool
    runtime_seconds: float
    forgetting_coefficient: float = 1.0

    @property
    def total_shift(self) -> np.ndarray:
        """theta_0 - theta_T: the mask scaled by the forgetting
        coefficient; what a federated client would transmit."""
        return self.forgetting_coefficient * self.mask.cumulative


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "loss", "mean_kl", "test_acc", "mask_l1"])
        for row in trace:
            acc = "" if row.test_accuracy is None or math.isnan(row.test_accuracy) \
                else repr(row.test_accuracy)
            writer.writerow([row.iteration, repr(row.loss), repr(row.mean_kl),
                             acc, repr(row.mask_l1)])


class Forsaken(BaseEstimator):
    """Configured neuron-masking unlearner.

    Parameters
    ----------
    max_iter : mask-gradient iterations T.
    forgetting_coefficient : xi, the scale applied to the cumulative mask.
    lambda_penalty : L1 penalty strength on the mask.
    use_penalty_weight : scale the penalty per dimension by gradient
        magnitudes measured on a small probe of retained training data.
    penalty_weight_mode : "per_dimension" or "scalar_mean".
    optimizer : "lbfgs" (default) or "adam" for the mask updates.
    learning_rate : Adam step size; ignored by lbfgs.
    d0_fraction : fraction of the retained train role used as the probe
        set for penalty weights; must lie in (0, 0.05].
    early_stop_kl : stop once the mean divergence to the targets falls
        to this value (nats).
    kl_direction : "forward" (model || target) or "reverse".
    random_state : seed for the probe draw.
    """

    def __init__(self, max_iter=30, forgetting_coefficient=1.0,
                 lambda_penalty=10.0, use_penalty_weight=True,
                 penalty_weight_mode="per_dimension", optimizer="lbfgs",
                 learning_rate=0.05, d0_fraction=0.01, early_stop_kl=0.05,
                 kl_direction="forward", random_state=0):
        self.max_iter = max_iter
        self.forgetting_coefficient = forgetting_coefficient
        self.lambda_penalty = lambda_penalty
        self.use_penalty_weight = use_penalty_weight
        self.penalty_weight_mode = penalty_weight_mode
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.d0_fraction = d0_fraction
        self.early_stop_kl = early_stop_kl
        self.kl_direction = kl_direction
        self.random_state = random_state

    def _validate(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.forgetting_coefficient <= 0:
            raise ValueError("forgetting_coefficient must be positive")
        if self.lambda_penalty < 0:
            raise ValueError("lambda_penalty must be >= 0")
        if self.optimizer not in _MASK_OPTIMIZERS:
            raise ValueError(f"mask optimizer must be one of {_MASK_OPTIMIZERS}")
        if not 0.0 < self.d0_fraction <= 0.05:
            raise ValueError("d0_fraction must lie in (0, 0.05]")
        if self.early_stop_kl < 0:
            raise ValueError("early_stop_kl must be >= 0")
        if self.kl_direction not in _KL_DIRECTIONS:
            raise ValueError(f"kl_direction must be one of {_KL_DIRECTIONS}")
        if self.penalty_weight_mode not in _WEIGHT_MODES:
            raise ValueError(f"penalty_weight_mode must be one of {_WEIGHT_MODES}")
        if self.optimizer == "adam" and self.learning_rate <= 0:
            raise ValueError("adam mask updates need a positive learning_rate")

    def probe_indices(self, dataset: ScenarioDataset) -> np.ndarray:
        """Seeded probe draw from the retained train role (never unlearn rows)."""
        train_idx = dataset.indices("train")
        if len(train_idx) == 0:
            raise ValueError("dataset has no retained train samples for the probe")
        size = max(1, math.ceil(self.d0_fraction * len(train_idx)))
        rng = rng_from(derive_seed(self.random_state, 11))
        return np.sort(rng.choice(train_idx, size=size, replace=False))

    def unlearn(self, params: ParamVector, spec: ModelSpec,
                dataset: ScenarioDataset, eval_set=None) -> ForsakenResult:
        """Run the masking loop against a trained model.

        ``eval_set`` is an optional (X, labels) pair whose accuracy is
        recorded in the trace each iteration.
        """
        self._validate()
        t_start = time.perf_counter()
        targets = estimate_target_posteriors(params, spec, dataset)
        unlearn_idx = dataset.indices("unlearn")
        X_unlearn = dataset.X[unlearn_idx]

        weights = None
        if self.use_penalty_weight and self.lambda_penalty != 0.0:
            probe = self.probe_indices(dataset)
            weights = penalty_weights(params, spec, dataset.X[probe],
                                      dataset.labels[probe],
                                      mode=self.penalty_weight_mode)

        return self._optimize(params, spec, X_unlearn, targets, weights,
                              eval_set=eval_set, t_start=t_start)

    def unlearn_arrays(self, params: ParamVector, spec: ModelSpec, X_unlearn,
                       reference_posterior_targets, eval_set=None) -> ForsakenResult:
        """Dataset-free variant for callers that assemble their own targets.

        ``reference_posterior_targets`` must be one target row per
        unlearn sample. Penalty weights are skipped (no probe data), so
        the penalty falls back to unweighted L1 unless disabled.
        """
        self._validate()
        t_start = time.perf_counter()
        X_unlearn = as_float_matrix(X_unlearn, name="unlearn features")
        target_rows = as_posterior_matrix(reference_posterior_targets,
                                          n_classes=spec.n_classes)
        targets = TargetDistribution(
            per_class=np.empty((0, spec.n_classes)),
            assignments=np.full(len(X_unlearn), -1, dtype=np.int64),
            targets=target_rows)
        return self._optimize(params, spec, X_unlearn, targets, None,
                              eval_set=eval_set, t_start=t_start)

    def _optimize(self, params, spec, X_unlearn, targets, weights,
                  eval_set, t_start) -> ForsakenResult:
        from .optim import Adam, Lbfgs, OwlQn

        xi = float(self.forgetting_coefficient)
        lam = float(self.lambda_penalty)

        def objective(mask):
            return forgetting_loss(params, spec, X_unlearn, targets.targets,
                                   mask, lam, weights,
                                   forgetting_coefficient=xi,
                                   kl_direction=self.kl_direction)

        def smooth(mask):
            _, g, kl = forgetting_loss(params, spec, X_unlearn,
                                       targets.targets, mask, 0.0, None,
                                       forgetting_coefficient=xi,
                                       kl_direction=self.kl_direction)
            return kl, g

        def eval_accuracy(mask):
            if eval_set is None:
                return float("nan")
            Xe, ye = eval_set
            shifted = params.with_values(params.values - xi * mask)
            preds = np.argmax(forward_batch(shifted, spec, Xe), axis=1)
            return float((preds == np.asarray(ye)).mean())

        mask = np.zeros(len(params))
        loss, grad, mean_kl = objective(mask)
        trace = [TraceRow(0, loss, mean_kl, eval_accuracy(mask), 0.0)]
        if mean_kl <= self.early_stop_kl:
            return ForsakenResult(
                params=params.copy(), mask=MaskGradient(mask, mask.copy()),
                trace=trace, targets=targets, iterations=0, early_stopped=True,
                runtime_seconds=time.perf_counter() - t_start,
                forgetting_coefficient=xi)

        # A strong Wolfe search through the |M| kink stalls whenever the
        # penalty slope beats the divergence gradient, so the penalized
        # quasi-Newton path runs orthant-wise on the smooth part instead.
        owl = None
        if self.optimizer == "lbfgs":
            if lam > 0.0:
                per_dim = np.ones_like(mask) if weights is None else weights
                owl = OwlQn(lam * per_dim)
                opt = owl
            else:
                opt = Lbfgs()
        else:
            opt = Adam(self.learning_rate)

        # The line search's final evaluation is always at the accepted
        # point, so stashing the divergence of the latest objective call
        # gives the statistics at the new mask without an extra pass.
        kl_box = {"kl": mean_kl}

        def closure(m):
            l, g, k = objective(m)
            kl_box["kl"] = k
            return l, g

        last_step = np.zeros_like(mask)
        iterations = 0
        early = False
        # At M=0 the penalty term and its subgradient both vanish, so the
        # full objective values double as the smooth-part seeds.
        loss_s = mean_kl
        for _ in range(int(self.max_iter)):
            if owl is not None:
                new_mask, loss_s, grad = owl.step(mask, smooth,
                                                  f0=loss_s, g0=grad)
                mean_kl = loss_s
                loss = loss_s + owl.penalty(new_mask)
            elif self.optimizer == "lbfgs":
                new_mask, loss, grad = opt.step(mask, closure, f0=loss, g0=grad)
                mean_kl = kl_box["kl"]
            else:
                delta = opt.step(grad)
                new_mask = mask + delta
                loss, grad, mean_kl = objective(new_mask)
            if np.array_equal(new_mask, mask):
                break  # gradient vanished; nothing left to move
            last_step = new_mask - mask
            mask = new_mask
            iterations += 1
            trace.append(TraceRow(iterations, loss, mean_kl,
                                  eval_accuracy(mask),
                                  float(np.abs(mask).sum())))
            if mean_kl <= self.early_stop_kl:
                early = True
                break

        final = params.with_values(params.values - xi * mask)
        return ForsakenResult(
            params=final, mask=MaskGradient(mask, last_step), trace=trace,
            targets=targets, iterations=iterations, early_stopped=early,
            runtime_seconds=time.perf_counter() - t_start,
            forgetting_coefficient=xi)


def client_mask_scale(mask, learning_rate: float, n_samples: int) -> np.ndarray:
    """Scale a mask so a gradient-averaging server undoes the scaling.

    The server applies lr * payload / n; sending n * mask / lr therefore
    lands the exact mask on the global model, indistinguishable from a
    learning update on the wire.
    """
    mask = as_flat_float(mask, name="mask")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return (float(n_samples) / float(learning_rate)) * mask
