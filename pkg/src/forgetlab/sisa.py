"""Sharded, sliced training with checkpoint-based unlearning.

The training rows are partitioned into S shards; each shard's rows are
partitioned into R slices. A shard model is trained in R stages, stage r
seeing the cumulative rows of slices 0..r, and the parameters after
every stage are checkpointed. Removing samples then only costs a partial
retrain: each affected shard resumes from the checkpoint taken before
its earliest affected slice. Shards without removed samples keep their
checkpoints untouched, bit for bit.

Assignment uses a stable seeded hash of the global row index, so it does
not depend on process state or on which rows are later removed. If the
hash leaves any (shard, slice) cell empty, the whole assignment falls
back to round-robin over the sorted rows, which fills every cell
whenever there are at least S*R rows.

With one shard and one slice the whole construction collapses: seeds
derive through stream 0 (the identity), stage epochs equal the full
budget, and the single cell holds every row in order, so the one shard
model is bit-identical to plain training.

Prediction is majority vote over the shard heads, ties resolved toward
the lowest class id. The ensemble posterior for a row is the mean of the
winning shards' posteriors, renormalized.
"""

from __future__ import annotations

import csv
import json
import os
import re
from dataclasses import dataclass, replace

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import ScenarioDataset
from .model import ModelSpec, ParamVector, build_model, forward_batch
from .training import TrainConfig, train
from .utils import derive_seed, stable_index_hash
from .validation import as_float_matrix

_S_SHARD_ASSIGN = 41
_S_SLICE_ASSIGN = 42
# Stage shuffle streams: shard s, stage r -> s * _STAGE_STRIDE + r. The
# stride keeps (s, r) pairs collision-free for any practical R and maps
# (0, 0) to stream 0, the identity.
_STAGE_STRIDE = 997


@dataclass
class SisaEnsemble:
    """Checkpoints and assignment of one sharded training run."""

    spec: ModelSpec
    config: TrainConfig
    n_shards: int
    n_slices: int
    sample_indices: np.ndarray   # global dataset rows, sorted
    shards: np.ndarray           # per row of sample_indices
    slices: np.ndarray
    checkpoints: list            # [shard][slice] -> ParamVector

    def shard_spec(self, shard: int) -> ModelSpec:
        return replace(self.spec, seed=derive_seed(self.spec.seed, shard))

    def final_params(self, shard: int) -> ParamVector:
        return self.checkpoints[shard][-1]

    def rows_of(self, shard: int, max_slice: int) -> np.ndarray:
        """Global rows of `shard` in slices 0..max_slice, sorted order."""
        mask = (self.shards == shard) & (self.slices <= max_slice)
        return self.sample_indices[mask]


def stage_epochs(total_epochs: int, n_slices: int) -> list:
    """Split an epoch budget across R stages, earlier stages first.

    Sums exactly to the budget; with R = 1 the single stage gets it all.
    """
    base, extra = divmod(total_epochs, n_slices)
    return [base + (1 if r < extra else 0) for r in range(n_slices)]


def assign_cells(indices: np.ndarray, n_shards: int, n_slices: int,
                 seed: int):
    """Map each global row to a (shard, slice) cell.

    Returns (shards, slices, fallback) where fallback reports whether the
    hash assignment left empty cells and round-robin was used instead.
    """
    n = len(indices)
    if n < n_shards * n_slices:
        raise ValueError(f"{n} rows cannot fill {n_shards}x{n_slices} cells")
    shard_seed = derive_seed(seed, _S_SHARD_ASSIGN)
    slice_seed = derive_seed(seed, _S_SLICE_ASSIGN)
    shards = np.array([stable_index_hash(shard_seed, int(i)) % n_shards
                       for i in indices], dtype=np.int64)
    slices = np.array([stable_index_hash(slice_seed, int(i)) % n_slices
                       for i in indices], dtype=np.int64)
    counts = np.zeros((n_shards, n_slices), dtype=np.int64)
    np.add.at(counts, (shards, slices), 1)
    if counts.min() > 0:
        return shards, slices, False
    pos = np.arange(n)
    return pos % n_shards, (pos // n_shards) % n_slices, True


def sisa_train(dataset: ScenarioDataset, spec: ModelSpec, config: TrainConfig,
               n_shards: int, n_slices: int) -> SisaEnsemble:
    """Train the full ensemble from scratch over the training roles."""
    if n_shards < 1 or n_slices < 1:
        raise ValueError("need at least one shard and one slice")
    rows = dataset.training_indices()
    shards, slices, _ = assign_cells(rows, n_shards, n_slices, spec.seed)
    ensemble = SisaEnsemble(spec=spec, config=config, n_shards=n_shards,
                            n_slices=n_slices, sample_indices=rows,
                            shards=shards, slices=slices,
                            checkpoints=[[None] * n_slices for _ in range(n_shards)])
    for s in range(n_shards):
        _train_shard(ensemble, dataset, s, from_slice=0)
    return ensemble


def _train_shard(ensemble: SisaEnsemble, dataset: ScenarioDataset, shard: int,
                 from_slice: int) -> None:
    """(Re)train one shard from stage `from_slice` onward, in place."""
    spec_s = ensemble.shard_spec(shard)
    epochs = stage_epochs(ensemble.config.epochs, ensemble.n_slices)
    if from_slice == 0:
        params = build_model(spec_s)
    else:
        params = ensemble.checkpoints[shard][from_slice - 1]
    for r in range(from_slice, ensemble.n_slices):
        rows = ensemble.rows_of(shard, r)
        if len(rows) == 0:
            # every row of the cumulative stage was removed; nothing to fit
            params = params.copy()
        else:
            cfg = replace(ensemble.config, epochs=epochs[r],
                          shuffle_seed=derive_seed(ensemble.config.shuffle_seed,
                                                   shard * _STAGE_STRIDE + r))
            params = train(params, spec_s, cfg,
                           dataset.X[rows], dataset.labels[rows])
        ensemble.checkpoints[shard][r] = params


def sisa_unlearn(ensemble: SisaEnsemble, dataset: ScenarioDataset,
                 unlearn_rows=None):
    """Remove rows and partially retrain. Returns (new_ensemble, info).

    info carries, per shard, the first retrained stage (or None when the
    shard was untouched) plus the total number of stages retrained.
    """
    if unlearn_rows is None:
        unlearn_rows = dataset.indices("unlearn")
    unlearn_rows = np.asarray(unlearn_rows, dtype=np.int64)
    if unlearn_rows.size == 0:
        raise ValueError("unlearn set is empty")
    known = np.isin(unlearn_rows, ensemble.sample_indices)
    if not known.all():
        missing = unlearn_rows[~known].tolist()
        raise ValueError(f"rows {missing} are not in the ensemble manifest")

    keep = ~np.isin(ensemble.sample_indices, unlearn_rows)
    new = SisaEnsemble(
        spec=ensemble.spec, config=ensemble.config,
        n_shards=ensemble.n_shards, n_slices=ensemble.n_slices,
        sample_indices=ensemble.sample_indices[keep],
        shards=ensemble.shards[keep], slices=ensemble.slices[keep],
        checkpoints=[list(row) for row in ensemble.checkpoints])

    removed_shards = ensemble.shards[~keep]
    removed_slices = ensemble.slices[~keep]
    first_stage = [None] * ensemble.n_shards
    stages_retrained = 0
    for s in range(ensemble.n_shards):
        hit = removed_slices[removed_shards == s]
        if hit.size == 0:
            continue
        r0 = int(hit.min())
        first_stage[s] = r0
        stages_retrained += ensemble.n_slices - r0
        _train_shard(new, dataset, s, from_slice=r0)
    info = {"first_retrained_stage": first_stage,
            "stages_retrained": stages_retrained,
            "n_removed": int(unlearn_rows.size)}
    return new, info


def sisa_predict(ensemble: SisaEnsemble, X):
    """Majority-vote labels and winner-mean posteriors. Returns (probs, labels)."""
    X = as_float_matrix(X)
    p = ensemble.spec.n_classes
    all_probs = np.stack([forward_batch(ensemble.final_params(s),
                                        ensemble.spec, X)
                          for s in range(ensemble.n_shards)])  # (S, n, p)
    votes = all_probs.argmax(axis=2)                           # (S, n)
    counts = np.zeros((len(X), p), dtype=np.int64)
    for s in range(ensemble.n_shards):
        counts[np.arange(len(X)), votes[s]] += 1
    labels = counts.argmax(axis=1)  # argmax takes the lowest class on ties
    winner = votes == labels[None, :]                          # (S, n)
    summed = np.einsum("sn,snp->np", winner.astype(np.float64), all_probs)
    probs = summed / summed.sum(axis=1, keepdims=True)
    return probs, labels


_CKPT_RE = re.compile(r"^shard(\d+)_slice(\d+)\.fskn$")


def save_ensemble(directory: str, ensemble: SisaEnsemble) -> None:
    """Write shard{S}_slice{R}.fskn checkpoints, manifest.csv and meta.json."""
    os.makedirs(directory, exist_ok=True)
    for s in range(ensemble.n_shards):
        for r in range(ensemble.n_slices):
            save_checkpoint(os.path.join(directory, f"shard{s}_slice{r}.fskn"),
                            ensemble.checkpoints[s][r], ensemble.spec)
    with open(os.path.join(directory, "manifest.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "shard", "slice"])
        for i, s, r in zip(ensemble.sample_indices, ensemble.shards,
                           ensemble.slices):
            writer.writerow([int(i), int(s), int(r)])
    meta = {
        "n_shards": ensemble.n_shards,
        "n_slices": ensemble.n_slices,
        "layer_sizes": list(ensemble.spec.layer_sizes),
        "seed": ensemble.spec.seed,
        "hidden_activation": ensemble.spec.hidden_activation,
        "config": {"epochs": ensemble.config.epochs,
                   "batch_size": ensemble.config.batch_size,
                   "learning_rate": ensemble.config.learning_rate,
                   "optimizer": ensemble.config.optimizer,
                   "shuffle_seed": ensemble.config.shuffle_seed},
    }
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_ensemble(directory: str) -> SisaEnsemble:
    """Restore an ensemble saved by save_ensemble."""
    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    spec = ModelSpec(layer_sizes=tuple(meta["layer_sizes"]), seed=meta["seed"],
                     hidden_activation=meta["hidden_activation"])
    cfg = TrainConfig(**meta["config"])
    n_shards, n_slices = meta["n_shards"], meta["n_slices"]

    names = set(os.listdir(directory))
    checkpoints = []
    for s in range(n_shards):
        row = []
        for r in range(n_slices):
            name = f"shard{s}_slice{r}.fskn"
            if name not in names:
                raise ValueError(f"checkpoint {name} missing from {directory}")
            params, _ = load_checkpoint(os.path.join(directory, name), spec=spec)
            row.append(params)
        checkpoints.append(row)

    indices, shards, slices = [], [], []
    with open(os.path.join(directory, "manifest.csv"), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["sample_index", "shard", "slice"]:
            raise ValueError("manifest.csv must have columns sample_index,shard,slice")
        for line in reader:
            indices.append(int(line["sample_index"]))
            shards.append(int(line["shard"]))
            slices.append(int(line["slice"]))
    return SisaEnsemble(spec=spec, config=cfg, n_shards=n_shards,
                        n_slices=n_slices,
                        sample_indices=np.array(indices, dtype=np.int64),
                        shards=np.array(shards, dtype=np.int64),
                        slices=np.array(slices, dtype=np.int64),
                        checkpoints=checkpoints)
