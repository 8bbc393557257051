"""Unlearning quality metrics and multi-trial aggregation.

All verdict arrays are booleans from the membership oracle, True for
"member". The forgetting rate counts unlearn samples flipped from member
to non-member, normalized by how many were memorized to begin with:

    FR = (AF - BF) / BT

with BT members before, BF non-members before, AF non-members after.
BT = 0 leaves the rate undefined and is an error. A negative FR means
the method made samples look more memorized than before; reports flag
this as reversed rather than hiding it.

The catastrophic forgetting rate is the collateral damage on retained
training samples: the fraction of previously memorized retained samples
no longer judged members after unlearning,

    CFR = (BT_train - AT_train) / BT_train.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, ParamVector, evaluate


def _as_verdicts(v, name):
    v = np.asarray(v)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D boolean array")
    return v.astype(bool)


def forgetting_rate_from_counts(bt: int, bf: int, af: int) -> float:
    """FR = (AF - BF) / BT. BT must be positive."""
    if bt < 0 or bf < 0 or af < 0:
        raise ValueError("counts must be non-negative")
    if bt == 0:
        raise ValueError("no unlearn sample was judged a member before "
                         "unlearning (BT = 0); the forgetting rate is undefined")
    if af > bt + bf:
        raise ValueError(f"AF = {af} exceeds the unlearn set size {bt + bf}")
    return (af - bf) / bt


def forgetting_rate(verdicts_before, verdicts_after) -> float:
    """Forgetting rate from member verdicts over the same unlearn set."""
    before = _as_verdicts(verdicts_before, "verdicts_before")
    after = _as_verdicts(verdicts_after, "verdicts_after")
    if len(before) != len(after):
        raise ValueError("verdict arrays must cover the same unlearn set")
    bt = int(before.sum())
    bf = int(len(before) - bt)
    af = int((~after).sum())
    return forgetting_rate_from_counts(bt, bf, af)


def catastrophic_forgetting_rate_from_counts(bt_train: int, at_train: int) -> float:
    """CFR = (BT_train - AT_train) / BT_train. BT_train must be positive."""
    if bt_train < 0 or at_train < 0:
        raise ValueError("counts must be non-negative")
    if bt_train == 0:
        raise ValueError("no retained sample was judged a member before "
                         "unlearning (BT_train = 0); CFR is undefined")
    return (bt_train - at_train) / bt_train


def catastrophic_forgetting_rate(member_verdicts_before, member_verdicts_after) -> float:
    """CFR from member verdicts over the same retained training samples.

    AT_train is the plain count of members after unlearning, so the raw
    rate goes negative when unlearning makes retained samples look more
    memorized than before; reports clamp it to [-1, 1].
    """
    before = _as_verdicts(member_verdicts_before, "member_verdicts_before")
    after = _as_verdicts(member_verdicts_after, "member_verdicts_after")
    if len(before) != len(after):
        raise ValueError("verdict arrays must cover the same retained set")
    bt_train = int(before.sum())
    at_train = int(after.sum())
    return catastrophic_forgetting_rate_from_counts(bt_train, at_train)


def accuracy_drop(model_before: ParamVector, model_after: ParamVector,
                  spec: ModelSpec, X_test, labels_test) -> float:
    """diff_acc = acc_before - acc_after on a shared test set (positive = worse)."""
    X_test = np.asarray(X_test, dtype=np.float64)
    if X_test.size == 0:
        raise ValueError("test set is empty")
    acc_before = evaluate(model_before, spec, X_test, labels_test)
    acc_after = evaluate(model_after, spec, X_test, labels_test)
    return acc_before - acc_after


@dataclass(frozen=True)
class UnlearnReport:
    """Per-trial outcome of one unlearning method on one scenario."""

    method: str
    trial_seed: int
    bt: int
    bf: int
    af: int
    fr: float
    bt_train: int
    at_train: int
    cfr: float
    acc_before: float
    acc_after: float
    diff_acc: float
    runtime_seconds: float
    unlearning_reversed: bool

    def to_dict(self) -> dict:
        """Plain dict with a stable field order (insertion order kept)."""
        return {
            "method": self.method,
            "trial_seed": self.trial_seed,
            "bt": self.bt, "bf": self.bf, "af": self.af, "fr": self.fr,
            "bt_train": self.bt_train, "at_train": self.at_train,
            "cfr": self.cfr,
            "acc_before": self.acc_before, "acc_after": self.acc_after,
            "diff_acc": self.diff_acc,
            "runtime_seconds": self.runtime_seconds,
            "unlearning_reversed": self.unlearning_reversed,
        }


def make_report(method: str, trial_seed: int,
                unlearn_before, unlearn_after,
                retained_before, retained_after,
                acc_before: float, acc_after: float,
                runtime_seconds: float) -> UnlearnReport:
    """Assemble a report from raw verdicts.

    CFR is clamped to [-1, 1] for reporting; the raw value can in theory
    run below -1 when the oracle memorizes more after unlearning. A
    verdict set with no prior members leaves the corresponding rate
    undefined; the report stores NaN there instead of failing, so that
    methods whose models the oracle never flags (ensemble-averaged
    posteriors, say) still produce rows.
    """
    before = _as_verdicts(unlearn_before, "unlearn_before")
    after = _as_verdicts(unlearn_after, "unlearn_after")
    bt = int(before.sum())
    bf = int(len(before) - bt)
    af = int((~after).sum())
    fr = forgetting_rate_from_counts(bt, bf, af) if bt > 0 else float("nan")

    r_before = _as_verdicts(retained_before, "retained_before")
    r_after = _as_verdicts(retained_after, "retained_after")
    if len(r_before) != len(r_after):
        raise ValueError("retained verdict arrays must match in length")
    bt_train = int(r_before.sum())
    at_train = int(r_after.sum())
    cfr = (catastrophic_forgetting_rate_from_counts(bt_train, at_train)
           if bt_train > 0 else float("nan"))

    return UnlearnReport(
        method=method, trial_seed=trial_seed,
        bt=bt, bf=bf, af=af, fr=fr,
        bt_train=bt_train, at_train=at_train,
        cfr=float(np.clip(cfr, -1.0, 1.0)) if np.isfinite(cfr) else cfr,
        acc_before=acc_before, acc_after=acc_after,
        diff_acc=acc_before - acc_after,
        runtime_seconds=runtime_seconds,
        unlearning_reversed=bool(fr < 0.0) if np.isfinite(fr) else False)


AGGREGATE_FIELDS = ("fr", "cfr", "acc_before", "acc_after", "diff_acc",
                    "runtime_seconds")


def aggregate_trials(reports) -> dict:
    """Mean and unbiased variance of each numeric field across trials.

    Trials are ordered by seed before aggregation, so the result does
    not depend on the order reports are handed in. All reports must come
    from the same method; comparing across methods is the caller's job.
    """
    reports = sorted(reports, key=lambda r: r.trial_seed)
    if not reports:
        raise ValueError("need at least one report to aggregate")
    methods = {r.method for r in reports}
    if len(methods) > 1:
        raise ValueError(f"got reports from multiple methods: {sorted(methods)}")
    out = {"method": reports[0].method, "n_trials": len(reports)}
    for field_name in AGGREGATE_FIELDS:
        vals = np.array([getattr(r, field_name) for r in reports])
        variance = float(vals.var(ddof=1)) if len(vals) > 1 else 0.0
        out[field_name] = {"mean": float(vals.mean()), "variance": variance}
    out["trial_seeds"] = [r.trial_seed for r in reports]
    return out
