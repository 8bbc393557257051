"""Unlearning baselines: full retraining and summation-ledger subtraction.

Full retraining is the gold standard: a fresh model, same initialization
policy, trained on the retained data only.

The summation method (smu) records, during the original training run,
the exact slice of every applied update that was attributable to the
unlearn samples, one summed entry per epoch. Unlearning then adds those
entries back onto the final parameters. For sgd the attribution is
exact algebra: a batch update is -lr * mean(grad), so the unlearn
samples' share of it is lr/B * sum of their per-sample gradients. For
adam the share is measured by a recompute-without pass: the update the
optimizer would have applied had the unlearn samples' gradient mass
been absent from the batch summation, state held fixed. lbfgs updates
are closure-driven and have no per-sample decomposition, so recording
under lbfgs is an error.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .datasets import ScenarioDataset
from .model import ModelSpec, ParamVector, build_model, grad_cross_entropy
from .training import BatchContext, TrainConfig, train


def retrain_full(dataset: ScenarioDataset, spec: ModelSpec, config: TrainConfig
                 ) -> ParamVector:
    """Train a fresh model on the retained train role only.

    With an empty unlearn set this reproduces the original training run
    bit for bit (same seeds, same data order).
    """
    keep = dataset.indices("train")
    if len(keep) == 0:
        raise ValueError("nothing left to retrain on")
    return train(build_model(spec), spec, config,
                 dataset.X[keep], dataset.labels[keep])


@dataclass
class GradientLedger:
    """Per-epoch summed unlearn-sample update contributions.

    entries[e] is the vector that, added to the parameters, cancels what
    the unlearn samples contributed to epoch e's applied updates.
    """

    entries: list
    optimizer: str
    n_params: int
    overhead_seconds: float = 0.0

    def total(self) -> np.ndarray:
        out = np.zeros(self.n_params)
        for entry in self.entries:
            out += entry
        return out


class _LedgerRecorder:
    """Batch hook accumulating unlearn-sample update contributions."""

    def __init__(self, unlearn_mask: np.ndarray, X, labels, spec: ModelSpec,
                 config: TrainConfig):
        self.unlearn_mask = unlearn_mask
        self.X = X
        self.labels = labels
        self.spec = spec
        self.config = config
        self.entries: list[np.ndarray] = []
        self.overhead_seconds = 0.0

    def _entry(self, epoch: int, n_params: int) -> np.ndarray:
        while len(self.entries) <= epoch:
            self.entries.append(np.zeros(n_params))
        return self.entries[epoch]

    def __call__(self, ctx: BatchContext) -> None:
        t0 = time.perf_counter()
        in_batch = ctx.indices[self.unlearn_mask[ctx.indices]]
        if len(in_batch) > 0:
            _, g_sub = grad_cross_entropy(ctx.params, self.spec,
                                          self.X[in_batch],
                                          self.labels[in_batch],
                                          validate=False)
            share = (len(in_batch) / ctx.batch_size) * g_sub.values
            if self.config.optimizer == "sgd":
                # The applied delta is -lr * mean_grad; removing the
                # unlearn share from the summation adds back lr * share.
                contribution = self.config.learning_rate * share
            else:
                without = ctx.preview(ctx.mean_grad - share)
                with_all = ctx.preview(ctx.mean_grad)
                contribution = without - with_all
            self._entry(ctx.epoch, len(contribution))[:] += contribution
        else:
            self._entry(ctx.epoch, len(ctx.mean_grad))
        self.overhead_seconds += time.perf_counter() - t0


def record_unlearn_contributions(params: ParamVector, spec: ModelSpec,
                                 config: TrainConfig, X, labels,
                                 unlearn_positions):
    """Train while recording the ledger. Returns (params, ledger).

    ``unlearn_positions`` are row positions into X. Every position must
    be part of the training stream (it is, by definition, here; an empty
    selection is rejected because there would be nothing to record).
    """
    if config.optimizer == "lbfgs":
        raise ValueError("gradient ledgers are defined for sgd and adam only; "
                         "lbfgs has no per-sample update decomposition")
    positions = np.asarray(unlearn_positions, dtype=np.int64)
    if positions.size == 0:
        raise ValueError("no unlearn samples in the training stream")
    n = len(X)
    if positions.min() < 0 or positions.max() >= n:
        raise ValueError("unlearn positions fall outside the training stream")
    mask = np.zeros(n, dtype=bool)
    mask[positions] = True

    recorder = _LedgerRecorder(mask, np.asarray(X, dtype=np.float64),
                               np.asarray(labels), spec, config)
    trained = train(params, spec, config, X, labels, batch_hook=recorder)
    entries = recorder.entries
    while len(entries) < config.epochs:  # epochs whose batches held no unlearn rows
        entries.append(np.zeros(len(trained)))
    ledger = GradientLedger(entries=entries, optimizer=config.optimizer,
                            n_params=len(trained),
                            overhead_seconds=recorder.overhead_seconds)
    return trained, ledger


def smu_record(dataset: ScenarioDataset, spec: ModelSpec, config: TrainConfig):
    """Original training with ledger recording, driven by dataset roles."""
    rows = dataset.training_indices()
    roles = dataset.roles[rows]
    positions = np.flatnonzero(roles == "unlearn")
    return record_unlearn_contributions(build_model(spec), spec, config,
                                        dataset.X[rows], dataset.labels[rows],
                                        positions)


def smu_unlearn(params: ParamVector, ledger: GradientLedger) -> ParamVector:
    """Add the recorded contributions back onto the trained parameters."""
    if ledger.n_params != len(params):
        raise ValueError(f"ledger was recorded for {ledger.n_params} parameters, "
                         f"model has {len(params)}")
    return params.with_values(params.values + ledger.total())
