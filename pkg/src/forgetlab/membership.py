"""Shadow-model membership oracle.

The oracle answers "was this sample trained on?" from a model's output
posterior alone. A shadow model with the target's exact architecture
and training recipe is fitted on the shadow_train role; its posteriors
on shadow_train (members) and shadow_test (non-members) train a boosted
tree attack classifier. Features are the posterior sorted in descending
order, so verdicts are invariant to class permutations.

Scores are member probabilities; a score exactly at the threshold is
called a member (ties break toward "member" so that borderline samples
are flagged rather than missed).
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass

import numpy as np

from .datasets import ScenarioDataset
from .gbdt import GradientBoostingBinaryClassifier, _Tree
from .model import ModelSpec, ParamVector, build_model, forward_batch
from .training import TrainConfig, train
from .utils import rng_from
from .validation import as_posterior_matrix

ORACLE_MAGIC = b"FLMO"
ORACLE_VERSION = 1


def extract_features(posteriors) -> np.ndarray:
    """Sort each posterior row in descending order.

    Ranking by confidence rather than class identity makes the attack
    features invariant to how classes happen to be indexed.
    """
    P = as_posterior_matrix(np.atleast_2d(posteriors))
    return -np.sort(-P, axis=1)


@dataclass
class MembershipOracle:
    """Fitted attack classifier plus its decision threshold."""

    attack_model: GradientBoostingBinaryClassifier
    threshold: float
    n_classes: int

    def score(self, posteriors) -> np.ndarray:
        """Member probability per posterior row."""
        P = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
        if P.shape[1] != self.n_classes:
            raise ValueError(f"posterior has {P.shape[1]} classes, "
                             f"oracle was built for {self.n_classes}")
        return self.attack_model.predict_proba(extract_features(P))[:, 1]

    def predict(self, posteriors) -> np.ndarray:
        """Boolean member verdicts; score >= threshold counts as member."""
        return self.score(posteriors) >= self.threshold


def infer_membership(oracle: MembershipOracle, posterior):
    """Single-sample convenience: returns (is_member, score)."""
    scores = oracle.score(np.atleast_2d(posterior))
    return bool(scores[0] >= oracle.threshold), float(scores[0])


def train_shadow(dataset: ScenarioDataset, spec: ModelSpec, config: TrainConfig
                 ) -> ParamVector:
    """Train the shadow model on the shadow_train role.

    Same architecture, same hyperparameters as the target; only the data
    differs. Deterministic for fixed seeds.
    """
    idx = dataset.indices("shadow_train")
    if len(idx) == 0:
        raise ValueError("dataset has no shadow_train role; run split_shadow first")
    return train(build_model(spec), spec, config,
                 dataset.X[idx], dataset.labels[idx])


def train_attack_classifier(member_features, nonmember_features, seed: int,
                            threshold: float = 0.5) -> MembershipOracle:
    """Fit the boosted-tree attack model on labeled posterior features.

    Classes are balanced by seeded subsampling of the larger side before
    fitting so the base rate does not leak into the scores.
    """
    members = np.atleast_2d(np.asarray(member_features, dtype=np.float64))
    nonmembers = np.atleast_2d(np.asarray(nonmember_features, dtype=np.float64))
    if len(members) == 0 or len(nonmembers) == 0:
        raise ValueError("need both member and non-member examples")
    if members.shape[1] != nonmembers.shape[1]:
        raise ValueError("member and non-member features disagree on width")

    rng = rng_from(seed)
    m = min(len(members), len(nonmembers))
    if len(members) > m:
        members = members[np.sort(rng.choice(len(members), size=m, replace=False))]
    if len(nonmembers) > m:
        nonmembers = nonmembers[np.sort(rng.choice(len(nonmembers), size=m, replace=False))]

    X = np.vstack([members, nonmembers])
    y = np.concatenate([np.ones(m, dtype=np.int64), np.zeros(m, dtype=np.int64)])
    clf = GradientBoostingBinaryClassifier(random_state=seed).fit(X, y)
    return MembershipOracle(attack_model=clf, threshold=float(threshold),
                            n_classes=members.shape[1])


def build_oracle(dataset: ScenarioDataset, spec: ModelSpec, config: TrainConfig,
                 seed: int) -> MembershipOracle:
    """Shadow training plus attack fitting in one call."""
    shadow = train_shadow(dataset, spec, config)
    members = dataset.indices("shadow_train")
    nonmembers = dataset.indices("shadow_test")
    if len(nonmembers) == 0:
        raise ValueError("dataset has no shadow_test role; run split_shadow first")
    feats_in = extract_features(forward_batch(shadow, spec, dataset.X[members]))
    feats_out = extract_features(forward_batch(shadow, spec, dataset.X[nonmembers]))
    return train_attack_classifier(feats_in, feats_out, seed)


@dataclass
class OracleQuality:
    accuracy: float
    precision: float
    recall: float
    n_members: int
    n_nonmembers: int


def evaluate_oracle(oracle: MembershipOracle, params: ParamVector, spec: ModelSpec,
                    dataset: ScenarioDataset, seed: int) -> OracleQuality:
    """Oracle quality against ground truth membership.

    Members are the retained train role, non-members the test role,
    balanced by seeded subsampling of the larger side. "Member" is the
    positive class for precision and recall.
    """
    members = dataset.indices("train")
    nonmembers = dataset.indices("test")
    if len(members) == 0 or len(nonmembers) == 0:
        raise ValueError("need non-empty train and test roles to evaluate the oracle")
    rng = rng_from(seed)
    m = min(len(members), len(nonmembers))
    if len(members) > m:
        members = members[np.sort(rng.choice(len(members), size=m, replace=False))]
    if len(nonmembers) > m:
        nonmembers = nonmembers[np.sort(rng.choice(len(nonmembers), size=m, replace=False))]

    verdict_in = oracle.predict(forward_batch(params, spec, dataset.X[members]))
    verdict_out = oracle.predict(forward_batch(params, spec, dataset.X[nonmembers]))
    tp = int(np.count_nonzero(verdict_in))
    fn = m - tp
    fp = int(np.count_nonzero(verdict_out))
    tn = m - fp
    accuracy = (tp + tn) / (2.0 * m)
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    return OracleQuality(accuracy=float(accuracy), precision=float(precision),
                         recall=float(recall), n_members=m, n_nonmembers=m)


# ---------------------------------------------------------------------------
# Persistence: versioned binary blob with the tree ensemble as flat arrays.

def oracle_to_bytes(oracle: MembershipOracle) -> bytes:
    clf = oracle.attack_model
    trees = clf.trees_
    n_nodes = len(trees[0].feature) if trees else 0
    out = io.BytesIO()
    out.write(ORACLE_MAGIC)
    out.write(struct.pack("<IIIII", ORACLE_VERSION, oracle.n_classes,
                          clf.n_features_in_, len(trees), n_nodes))
    out.write(struct.pack("<ddI", oracle.threshold, clf.base_score_,
                          max(tree.max_depth for tree in trees) if trees else 0))
    for tree in trees:
        out.write(np.ascontiguousarray(tree.feature, dtype="<i8").tobytes())
        out.write(np.ascontiguousarray(tree.threshold, dtype="<f8").tobytes())
        out.write(np.ascontiguousarray(tree.value, dtype="<f8").tobytes())
    return out.getvalue()


def oracle_from_bytes(data: bytes) -> MembershipOracle:
    if len(data) < 24 or data[:4] != ORACLE_MAGIC:
        raise ValueError("not a membership oracle blob")
    version, n_classes, n_features, n_trees, n_nodes = struct.unpack_from("<IIIII", data, 4)
    if version != ORACLE_VERSION:
        raise ValueError(f"unsupported oracle version {version}")
    threshold, base_score, _stored_depth = struct.unpack_from("<ddI", data, 24)
    offset = 24 + struct.calcsize("<ddI")
    clf = GradientBoostingBinaryClassifier(n_estimators=max(n_trees, 1))
    clf.base_score_ = base_score
    clf.n_features_in_ = n_features
    clf.classes_ = np.array([0, 1])
    clf.trees_ = []
    per_tree = n_nodes * (8 + 8 + 8)
    expected = offset + n_trees * per_tree
    if len(data) != expected:
        raise ValueError(f"oracle blob has {len(data)} bytes, expected {expected}")
    # Node arrays are complete binary trees, so the depth is implied by
    # the node count; trust that over the stored hint.
    depth = max(int(np.log2(n_nodes + 1)) - 1, 0) if n_nodes else 0
    for _ in range(n_trees):
        tree = _Tree(depth)
        tree.feature = np.frombuffer(data, dtype="<i8", count=n_nodes, offset=offset).astype(np.int64)
        offset += 8 * n_nodes
        tree.threshold = np.frombuffer(data, dtype="<f8", count=n_nodes, offset=offset).astype(np.float64)
        offset += 8 * n_nodes
        tree.value = np.frombuffer(data, dtype="<f8", count=n_nodes, offset=offset).astype(np.float64)
        offset += 8 * n_nodes
        clf.trees_.append(tree)
    return MembershipOracle(attack_model=clf, threshold=threshold, n_classes=n_classes)


def save_oracle(path, oracle: MembershipOracle) -> None:
    with open(path, "wb") as fh:
        fh.write(oracle_to_bytes(oracle))


def load_oracle(path) -> MembershipOracle:
    with open(path, "rb") as fh:
        return oracle_from_bytes(fh.read())


def dump_probes(path, roles, scores, verdicts, posteriors) -> None:
    """Per-sample audit CSV: role,score,verdict,p0..p{k-1}."""
    posteriors = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    k = posteriors.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["role", "score", "verdict"] + [f"p{j}" for j in range(k)])
        for role, s, v, row in zip(roles, scores, verdicts, posteriors):
            writer.writerow([role, repr(float(s)), int(bool(v))]
                            + [repr(float(x)) for x in row])
