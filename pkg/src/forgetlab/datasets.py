"""Synthetic scenario datasets for unlearning experiments.

A scenario is a seeded Gaussian-mixture classification task plus a
designated unlearn set and a reference pool, with one role tag per
sample:

    train        retained training samples
    unlearn      samples to be forgotten; these WERE trained on
    test         held-out task samples
    reference    never-trained pool used to estimate target posteriors
    shadow_train training half for the shadow model
    shadow_test  held-out half for the shadow model

Kinds:

    ood_mislabel   unlearn samples come from a shifted copy of one task
                   class's distribution and carry a different label
    ood_foreign    unlearn samples come from clusters disjoint from all
                   task clusters, labeled into the task classes
    ood_labelsplit the mixture has extra held-out clusters; unlearn
                   samples come from those, relabeled into [0, p)
    id             unlearn samples are ordinary training samples
    poison         a fraction of one class's training samples get a
                   flipped label; those samples form the unlearn set

For the three ood kinds the reference pool is extra never-trained draws
from the same out-of-distribution process. For id it is a seeded sample
of the test role. For poison it is the poisoned samples themselves,
whose clean labels are kept in ``clean_labels``.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .utils import derive_seed, rng_from
from .validation import as_float_matrix, as_label_vector

KINDS = ("ood_mislabel", "ood_foreign", "ood_labelsplit", "id", "poison")
ROLES = ("train", "test", "unlearn", "reference", "shadow_train", "shadow_test")

# Sub-seed streams off ScenarioSpec.seed.
_S_TASK = 0          # identity: the task mixture owns the base seed
_S_OOD = 2
_S_SHADOW = 3
_S_SELECT = 4
_S_REFERENCE = 5
_S_POISON = 6

# Geometry constants for the out-of-distribution generators, in units
# of the cluster spread.
MISLABEL_SHIFT = 1.5
FOREIGN_MARGIN = 2.0
# Foreign clusters are drawn tighter than task clusters: packing the
# randomly labeled rows close together caps the margin the model can
# reach on them, so they stay memorized without saturating the softmax.
# Saturated rows give the mask optimizer vanishing gradients and leave
# nothing for the penalty weights to trade off against.
FOREIGN_WIDTH = 0.5


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to rebuild a scenario deterministically."""

    kind: str
    n_train: int = 2000
    n_test: int = 1000
    n_unlearn: int = 200
    n_reference: int = 500
    n_classes: int = 5
    input_dim: int = 20
    seed: int = 0
    # Heavy class overlap on purpose: a model that interpolates the
    # training set while test accuracy sits near the Bayes error is what
    # gives the membership oracle a confidence gap to key on.
    spread: float = 8.0
    center_scale: float = 3.0
    n_heldout_classes: int | None = None
    poison_fraction: float = 0.05
    poison_pair: tuple = (0, 1)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        for name in ("n_train", "n_test", "n_unlearn", "n_reference"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.spread <= 0 or self.center_scale <= 0:
            raise ValueError("spread and center_scale must be positive")
        if self.kind == "id" and self.n_unlearn > self.n_train:
            raise ValueError("id scenarios need n_unlearn <= n_train")
        if self.kind == "ood_labelsplit":
            q = self.heldout_classes
            if q < 1:
                raise ValueError("ood_labelsplit needs at least one held-out class")
        if self.kind == "poison":
            if not 0.0 < self.poison_fraction <= 1.0:
                raise ValueError("poison_fraction must lie in (0, 1]")
            pair = tuple(int(c) for c in self.poison_pair)
            object.__setattr__(self, "poison_pair", pair)
            if len(pair) != 2 or pair[0] == pair[1]:
                raise ValueError("poison_pair must be two distinct classes")
            if not all(0 <= c < self.n_classes for c in pair):
                raise ValueError("poison_pair classes out of range")

    @property
    def heldout_classes(self) -> int:
        if self.n_heldout_classes is not None:
            return int(self.n_heldout_classes)
        return max(1, self.n_classes // 3)


@dataclass
class ScenarioDataset:
    """Materialized scenario: feature matrix, labels and role tags."""

    spec: ScenarioSpec
    X: np.ndarray
    labels: np.ndarray
    clean_labels: np.ndarray
    roles: np.ndarray
    info: dict = field(default_factory=dict)

    def indices(self, role: str) -> np.ndarray:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        return np.flatnonzero(self.roles == role)

    def training_indices(self) -> np.ndarray:
        """Rows the target model is trained on: roles train and unlearn."""
        return np.flatnonzero((self.roles == "train") | (self.roles == "unlearn"))

    def role_counts(self) -> dict:
        return {role: int(np.count_nonzero(self.roles == role)) for role in ROLES}

    def copy(self) -> "ScenarioDataset":
        return ScenarioDataset(self.spec, self.X.copy(), self.labels.copy(),
                               self.clean_labels.copy(), self.roles.copy(),
                               dict(self.info))

    def __len__(self) -> int:
        return len(self.X)


def _balanced_labels(n_classes: int, n_samples: int) -> np.ndarray:
    """Class counts balanced within one: first n % p classes get the extra."""
    base = n_samples // n_classes
    counts = np.full(n_classes, base, dtype=np.int64)
    counts[: n_samples % n_classes] += 1
    return np.repeat(np.arange(n_classes), counts)


def _sample_mixture(rng: np.random.Generator, centers: np.ndarray, n_samples: int,
                    spread: float):
    labels = _balanced_labels(len(centers), n_samples)
    labels = labels[rng.permutation(n_samples)]
    X = centers[labels] + spread * rng.standard_normal((n_samples, centers.shape[1]))
    return X, labels


def gen_gaussian_mixture(n_classes: int, input_dim: int, n_samples: int, seed: int,
                         spread: float = 1.0, center_scale: float = 3.0,
                         centers: np.ndarray | None = None):
    """Balanced isotropic Gaussian mixture. Returns (X, labels, centers).

    Class counts differ by at most one. Centers are drawn from
    N(0, center_scale^2 I) unless provided.
    """
    if n_samples < n_classes:
        raise ValueError("need at least one sample per class")
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    rng = rng_from(seed)
    if centers is None:
        centers = rng.normal(0.0, center_scale, size=(n_classes, input_dim))
    else:
        centers = as_float_matrix(centers, name="centers")
        if centers.shape != (n_classes, input_dim):
            raise ValueError("centers must have shape (n_classes, input_dim)")
    X, labels = _sample_mixture(rng, centers, n_samples, spread)
    return X, labels, centers


def _foreign_centers(rng: np.random.Generator, task_centers: np.ndarray,
                     n_centers: int, center_scale: float, margin: float) -> np.ndarray:
    """Cluster centers at distance >= margin from every task center."""
    dim = task_centers.shape[1]
    out = np.empty((n_centers, dim))
    for i in range(n_centers):
        candidate = rng.normal(0.0, center_scale, size=dim)
        for _ in range(100):
            dists = np.linalg.norm(task_centers - candidate, axis=1)
            if dists.min() >= margin:
                break
            candidate = rng.normal(0.0, center_scale, size=dim)
        else:
            # Rejection failed; place the candidate on a sphere around
            # the task-center centroid. Radius margin + R clears every
            # center at once: |P - C_j| >= |P - centroid| - R = margin.
            centroid = task_centers.mean(axis=0)
            radius = margin + float(
                np.linalg.norm(task_centers - centroid, axis=1).max())
            offset = candidate - centroid
            norm = np.linalg.norm(offset)
            if norm == 0.0:
                offset = np.ones(dim) / math.sqrt(dim)
                norm = 1.0
            candidate = centroid + offset / norm * radius
        out[i] = candidate
    return out


def _labels_avoiding(rng: np.random.Generator, n_samples: int, n_classes: int,
                     avoid: int) -> np.ndarray:
    """Uniform labels over [0, n_classes) excluding one class."""
    draws = rng.integers(0, n_classes - 1, size=n_samples)
    return draws + (draws >= avoid)


def build_ood_scenario(spec: ScenarioSpec) -> ScenarioDataset:
    """Task mixture plus out-of-distribution unlearn and reference pools.

    The unlearn rows are part of the training role (they get trained
    on); the reference rows never are.
    """
    if not spec.kind.startswith("ood_"):
        raise ValueError(f"build_ood_scenario got kind {spec.kind!r}")
    p, d = spec.n_classes, spec.input_dim
    rng_task = rng_from(derive_seed(spec.seed, _S_TASK))
    rng_ood = rng_from(derive_seed(spec.seed, _S_OOD))

    info = {}
    if spec.kind == "ood_labelsplit":
        q = spec.heldout_classes
        all_centers = rng_task.normal(0.0, spec.center_scale, size=(p + q, d))
        task_centers = all_centers[:p]
        info["heldout_centers"] = all_centers[p:]
    else:
        task_centers = rng_task.normal(0.0, spec.center_scale, size=(p, d))
    info["task_centers"] = task_centers

    X_train, y_train = _sample_mixture(rng_task, task_centers, spec.n_train, spec.spread)
    X_test, y_test = _sample_mixture(rng_task, task_centers, spec.n_test, spec.spread)

    n_ood = spec.n_unlearn + spec.n_reference
    if spec.kind == "ood_mislabel":
        source = int(rng_ood.integers(p))
        direction = rng_ood.standard_normal(d)
        direction /= np.linalg.norm(direction)
        shift = direction * (MISLABEL_SHIFT * spec.spread)
        center = task_centers[source] + shift
        X_ood = center + spec.spread * rng_ood.standard_normal((n_ood, d))
        y_ood = _labels_avoiding(rng_ood, n_ood, p, avoid=source)
        info["source_class"] = source
        info["shift"] = shift
    elif spec.kind == "ood_foreign":
        margin = FOREIGN_MARGIN * spec.spread
        foreign = _foreign_centers(rng_ood, task_centers, p, spec.center_scale, margin)
        info["ood_centers"] = foreign
        info["min_center_distance"] = float(min(
            np.linalg.norm(task_centers - c, axis=1).min() for c in foreign))
        X_ood, _ = _sample_mixture(rng_ood, foreign, n_ood,
                                   FOREIGN_WIDTH * spec.spread)
        y_ood = rng_ood.integers(0, p, size=n_ood)
    else:  # ood_labelsplit
        held = info["heldout_centers"]
        X_ood, _ = _sample_mixture(rng_ood, held, n_ood, spec.spread)
        y_ood = rng_ood.integers(0, p, size=n_ood)

    X = np.vstack([X_train, X_test, X_ood])
    labels = np.concatenate([y_train, y_test, y_ood]).astype(np.int64)
    roles = np.concatenate([
        np.full(spec.n_train, "train"),
        np.full(spec.n_test, "test"),
        np.full(spec.n_unlearn, "unlearn"),
        np.full(spec.n_reference, "reference"),
    ]).astype("<U12")
    return ScenarioDataset(spec, X, labels, labels.copy(), roles, info)


def _build_plain(spec: ScenarioSpec) -> ScenarioDataset:
    p, d = spec.n_classes, spec.input_dim
    rng_task = rng_from(derive_seed(spec.seed, _S_TASK))
    task_centers = rng_task.normal(0.0, spec.center_scale, size=(p, d))
    X_train, y_train = _sample_mixture(rng_task, task_centers, spec.n_train, spec.spread)
    X_test, y_test = _sample_mixture(rng_task, task_centers, spec.n_test, spec.spread)
    X = np.vstack([X_train, X_test])
    labels = np.concatenate([y_train, y_test]).astype(np.int64)
    roles = np.concatenate([
        np.full(spec.n_train, "train"),
        np.full(spec.n_test, "test"),
    ]).astype("<U12")
    return ScenarioDataset(spec, X, labels, labels.copy(), roles,
                           {"task_centers": task_centers})


def select_unlearn_set(dataset: ScenarioDataset, n_unlearn: int, seed: int) -> ScenarioDataset:
    """Tag a seeded uniform sample of the train role as the unlearn set."""
    if n_unlearn < 1:
        raise ValueError("n_unlearn must be >= 1")
    ds = dataset.copy()
    train_idx = ds.indices("train")
    if n_unlearn > len(train_idx):
        raise ValueError(f"cannot unlearn {n_unlearn} of {len(train_idx)} train samples")
    chosen = rng_from(seed).choice(train_idx, size=n_unlearn, replace=False)
    ds.roles[np.sort(chosen)] = "unlearn"
    return ds


def poison_labels(dataset: ScenarioDataset, pair, fraction: float, seed: int) -> ScenarioDataset:
    """Flip a seeded fraction of one class's train-role labels.

    Poisoned rows keep their original label in ``clean_labels``, get the
    flipped label in ``labels`` and are tagged as the unlearn set.
    """
    source, target = int(pair[0]), int(pair[1])
    if source == target:
        raise ValueError("poison pair must be distinct classes")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("poison fraction must lie in (0, 1]")
    ds = dataset.copy()
    candidates = np.flatnonzero((ds.roles == "train") & (ds.clean_labels == source))
    if len(candidates) == 0:
        raise ValueError(f"no train-role samples of class {source} to poison")
    count = max(1, int(round(fraction * len(candidates))))
    chosen = np.sort(rng_from(seed).choice(candidates, size=count, replace=False))
    ds.labels[chosen] = target
    ds.roles[chosen] = "unlearn"
    ds.info["poisoned_indices"] = chosen
    ds.info["poison_pair"] = (source, target)
    return ds


def split_shadow(dataset: ScenarioDataset, seed: int) -> ScenarioDataset:
    """Carve shadow halves out of the train and test roles.

    Half of the train role becomes shadow_train; half of the test role
    becomes shadow_test (the disjoint never-trained counterpart). Target
    training afterwards uses only the remaining train rows.
    """
    ds = dataset.copy()
    rng = rng_from(seed)
    train_idx = ds.indices("train")
    if len(train_idx) < 2:
        raise ValueError("need at least 2 train-role samples to split a shadow set")
    take = len(train_idx) // 2
    chosen = rng.choice(train_idx, size=take, replace=False)
    ds.roles[np.sort(chosen)] = "shadow_train"

    test_idx = ds.indices("test")
    if len(test_idx) >= 2:
        take_t = len(test_idx) // 2
        chosen_t = rng.choice(test_idx, size=take_t, replace=False)
        ds.roles[np.sort(chosen_t)] = "shadow_test"
    return ds


def sample_reference_set(dataset: ScenarioDataset) -> np.ndarray:
    """Row indices of the reference pool for the dataset's kind.

    ood kinds: the reference role. id: a seeded sample of the test role
    (stored at build time). poison: the poisoned rows themselves; their
    clean labels stand in for the pre-poison data.
    """
    kind = dataset.spec.kind
    if kind.startswith("ood_"):
        idx = dataset.indices("reference")
        if len(idx) == 0:
            raise ValueError("dataset has no reference-role samples")
        return idx
    if kind == "id":
        idx = dataset.info.get("reference_indices")
        if idx is None or len(idx) == 0:
            raise ValueError("id dataset is missing its reference sample")
        return np.asarray(idx)
    idx = dataset.info.get("poisoned_indices")
    if idx is None or len(idx) == 0:
        raise ValueError("poison dataset is missing its poisoned indices")
    return np.asarray(idx)


def build_scenario(spec: ScenarioSpec, with_shadow: bool = True) -> ScenarioDataset:
    """Construct a full scenario: roles, shadow split and reference pool."""
    if spec.kind.startswith("ood_"):
        ds = build_ood_scenario(spec)
        if with_shadow:
            ds = split_shadow(ds, derive_seed(spec.seed, _S_SHADOW))
        return ds

    ds = _build_plain(spec)
    if with_shadow:
        ds = split_shadow(ds, derive_seed(spec.seed, _S_SHADOW))
    if spec.kind == "id":
        ds = select_unlearn_set(ds, spec.n_unlearn, derive_seed(spec.seed, _S_SELECT))
        test_idx = ds.indices("test")
        if len(test_idx) < spec.n_reference:
            raise ValueError(f"test role has {len(test_idx)} rows, "
                             f"cannot draw {spec.n_reference} reference samples")
        ref = rng_from(derive_seed(spec.seed, _S_REFERENCE)).choice(
            test_idx, size=spec.n_reference, replace=False)
        ds.info["reference_indices"] = np.sort(ref)
    else:  # poison
        ds = poison_labels(ds, spec.poison_pair, spec.poison_fraction,
                           derive_seed(spec.seed, _S_POISON))
    return ds


def check_dataset(dataset: ScenarioDataset) -> None:
    """Structural invariants: known roles, consistent lengths, non-empty sets."""
    n = len(dataset.X)
    if not (len(dataset.labels) == len(dataset.clean_labels) == len(dataset.roles) == n):
        raise ValueError("dataset arrays have mismatched lengths")
    unknown = set(np.unique(dataset.roles)) - set(ROLES)
    if unknown:
        raise ValueError(f"unknown roles {sorted(unknown)}")
    if np.count_nonzero(dataset.roles == "unlearn") == 0:
        raise ValueError("dataset has no unlearn samples")
    if np.count_nonzero(dataset.roles == "train") == 0:
        raise ValueError("dataset has no train samples")
    as_label_vector(dataset.labels, n_classes=dataset.spec.n_classes,
                    name="dataset labels")


# ---------------------------------------------------------------------------
# CSV interchange

def dump_role_csvs(dataset: ScenarioDataset, out_dir) -> list:
    """One CSV per role present: role,label,clean_label,f0..f{d-1}."""
    os.makedirs(out_dir, exist_ok=True)
    d = dataset.X.shape[1]
    header = ["role", "label", "clean_label"] + [f"f{j}" for j in range(d)]
    written = []
    for role in ROLES:
        idx = dataset.indices(role)
        if len(idx) == 0:
            continue
        path = os.path.join(out_dir, f"{role}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in idx:
                writer.writerow([role, int(dataset.labels[i]),
                                 int(dataset.clean_labels[i])]
                                + [repr(float(v)) for v in dataset.X[i]])
        written.append(path)
    return written


def load_csv_dataset(path):
    """Load a feature CSV with a header row and min-max scale each column.

    Expects a ``label`` column plus feature columns named ``f0..``; the
    optional ``role`` and ``clean_label`` columns are passed through.
    Each feature column is scaled to [0, 1]; constant columns map to 0.
    Returns (X, labels, extras) where extras holds any role/clean_label
    columns found.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path} is empty") from None
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path} has a header but no data rows")
    if "label" not in header:
        raise ValueError(f"{path} is missing a 'label' column")
    feat_cols = [i for i, name in enumerate(header) if name.startswith("f")
                 and name[1:].isdigit()]
    if not feat_cols:
        raise ValueError(f"{path} has no feature columns (f0, f1, ...)")
    label_col = header.index("label")

    X = np.array([[float(row[i]) for i in feat_cols] for row in rows])
    labels = np.array([int(float(row[label_col])) for row in rows], dtype=np.int64)
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    span = hi - lo
    scaled = np.where(span > 0, (X - lo) / np.where(span > 0, span, 1.0), 0.0)

    extras = {}
    for opt in ("role", "clean_label"):
        if opt in header:
            col = header.index(opt)
            vals = [row[col] for row in rows]
            extras[opt] = (np.array(vals) if opt == "role"
                           else np.array([int(float(v)) for v in vals], dtype=np.int64))
    return scaled, labels, extras
