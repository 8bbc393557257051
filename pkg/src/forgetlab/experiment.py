"""End-to-end experiment driver: data -> train -> unlearn -> audit -> report.

Each trial is fully determined by master_seed + trial_index; data, model
init, batch order, oracle and method randomness all derive from that one
integer through separate streams. Failures abort only their own trial:
the run carries on and the summary flags what broke where.

Artifacts written per run:
  summary.json        aggregate + per-trial metrics, stable key order.
                      Contains no wall-clock values, so identical seeds
                      produce byte-identical bytes.
  trials.csv          one row per successful trial, full precision,
                      including runtime_seconds.
  table.csv           one row per method with mean/variance columns.
  posteriors_before.csv / posteriors_after.csv
                      trial-0 posterior dumps with oracle scores.
  trace.csv           trial-0 per-iteration masking trace (forsaken only).
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from .baselines import retrain_full, smu_record, smu_unlearn
from .configfile import ExperimentConfig, forsaken_from_config, serialize_config
from .datasets import build_scenario
from .forsaken import write_trace
from .membership import build_oracle, dump_probes, evaluate_oracle
from .metrics import UnlearnReport, aggregate_trials, make_report
from .model import ModelSpec, build_model, evaluate, forward_batch
from .sisa import sisa_predict, sisa_train, sisa_unlearn
from .training import train
from .utils import derive_seed

_S_DATA, _S_MODEL, _S_SHUFFLE, _S_ORACLE, _S_METHOD, _S_EVAL = 21, 22, 23, 24, 25, 26


@dataclass
class TrialResult:
    index: int
    trial_seed: int
    report: UnlearnReport | None = None
    oracle_quality: dict | None = None
    stage: str | None = None
    error: str | None = None
    trace: list | None = None
    posteriors: dict | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def _model_spec(config: ExperimentConfig, trial_seed: int) -> ModelSpec:
    scenario = config.scenario
    return ModelSpec(layer_sizes=(scenario.input_dim, *config.hidden_sizes,
                                  scenario.n_classes),
                     seed=derive_seed(trial_seed, _S_MODEL))


def build_trial_parts(config: ExperimentConfig, trial_index: int = 0):
    """Dataset, model spec and training config for one trial's seed."""
    trial_seed = config.seed + trial_index
    scenario = replace(config.scenario, seed=derive_seed(trial_seed, _S_DATA))
    dataset = build_scenario(scenario)
    spec = _model_spec(config, trial_seed)
    tcfg = replace(config.training,
                   shuffle_seed=derive_seed(trial_seed, _S_SHUFFLE))
    return dataset, spec, tcfg


def run_trial(config: ExperimentConfig, trial_index: int,
              collect_posteriors: bool = False) -> TrialResult:
    """One seeded pass of the full pipeline for the configured method."""
    trial_seed = config.seed + trial_index
    result = TrialResult(index=trial_index, trial_seed=trial_seed)
    stage = "build-data"
    try:
        dataset, spec, tcfg = build_trial_parts(config, trial_index)
        method = config.method

        stage = "train-target"
        ledger = None
        ensemble = None
        target = None
        if method == "smu":
            target, ledger = smu_record(dataset, spec, tcfg)
        elif method == "sisa":
            ensemble = sisa_train(dataset, spec, tcfg,
                                  config.sisa_shards, config.sisa_slices)
        else:
            rows = dataset.training_indices()
            target = train(build_model(spec), spec, tcfg,
                           dataset.X[rows], dataset.labels[rows])

        stage = "build-oracle"
        oracle = build_oracle(dataset, spec, tcfg,
                              derive_seed(trial_seed, _S_ORACLE))
        if target is not None:
            quality = evaluate_oracle(oracle, target, spec, dataset,
                                      derive_seed(trial_seed, _S_EVAL))
            result.oracle_quality = {
                "accuracy": quality.accuracy, "precision": quality.precision,
                "recall": quality.recall, "n_members": quality.n_members,
                "n_nonmembers": quality.n_nonmembers}

        stage = "snapshot-before"
        unlearn_idx = dataset.indices("unlearn")
        retained_idx = dataset.indices("train")
        test_idx = dataset.indices("test")

        def snapshot(params, ens):
            if ens is not None:
                post_u, _ = sisa_predict(ens, dataset.X[unlearn_idx])
                post_r, _ = sisa_predict(ens, dataset.X[retained_idx])
                post_t, pred_t = sisa_predict(ens, dataset.X[test_idx])
                acc = float((pred_t == dataset.labels[test_idx]).mean())
            else:
                post_u = forward_batch(params, spec, dataset.X[unlearn_idx])
                post_r = forward_batch(params, spec, dataset.X[retained_idx])
                post_t = forward_batch(params, spec, dataset.X[test_idx])
                acc = evaluate(params, spec, dataset.X[test_idx],
                               dataset.labels[test_idx])
            return post_u, post_r, post_t, acc

        before_u, before_r, before_t, acc_before = snapshot(target, ensemble)

        stage = f"unlearn-{method}"
        trace = None
        t0 = time.perf_counter()
        if method == "none":
            after_u, after_r, after_t, acc_after = before_u, before_r, before_t, acc_before
            runtime = 0.0
        elif method == "forsaken":
            unlearner = forsaken_from_config(
                config, random_state=derive_seed(trial_seed, _S_METHOD))
            outcome = unlearner.unlearn(target, spec, dataset)
            runtime = time.perf_counter() - t0
            trace = outcome.trace
            after_u, after_r, after_t, acc_after = snapshot(outcome.params, None)
        elif method == "retrain":
            retrained = retrain_full(dataset, spec, tcfg)
            runtime = time.perf_counter() - t0
            after_u, after_r, after_t, acc_after = snapshot(retrained, None)
        elif method == "smu":
            unlearned = smu_unlearn(target, ledger)
            # recording overhead belongs to this method, not to training
            runtime = (time.perf_counter() - t0) + ledger.overhead_seconds
            after_u, after_r, after_t, acc_after = snapshot(unlearned, None)
        elif method == "sisa":
            ens_after, _ = sisa_unlearn(ensemble, dataset)
            runtime = time.perf_counter() - t0
            after_u, after_r, after_t, acc_after = snapshot(None, ens_after)
        else:
            raise ValueError(f"unknown method {method!r}")

        stage = "audit"
        result.report = make_report(
            method, trial_seed,
            oracle.predict(before_u), oracle.predict(after_u),
            oracle.predict(before_r), oracle.predict(after_r),
            acc_before, acc_after, runtime)
        result.trace = trace
        if collect_posteriors:
            roles = np.concatenate([dataset.roles[unlearn_idx],
                                    dataset.roles[retained_idx],
                                    dataset.roles[test_idx]])
            result.posteriors = {
                "roles": roles,
                "before": np.vstack([before_u, before_r, before_t]),
                "after": np.vstack([after_u, after_r, after_t]),
                "oracle": oracle,
            }
    except Exception as exc:  # noqa: BLE001 - trial isolation is the contract
        result.stage = stage
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def run_experiment(config: ExperimentConfig, out_dir: str | None = None):
    """Run all trials and write every artifact. Returns (results, out_dir)."""
    out = out_dir if out_dir is not None else config.out
    os.makedirs(out, exist_ok=True)

    results = []
    for i in range(config.trials):
        results.append(run_trial(config, i, collect_posteriors=(i == 0)))

    reports = [r.report for r in results if r.report is not None]
    failures = [{"trial": r.index, "seed": r.trial_seed, "stage": r.stage,
                 "error": r.error} for r in results if r.failed]
    qualities = [
        {"trial": r.index, **r.oracle_quality}
        for r in results if r.oracle_quality is not None]

    if reports:
        write_trials_csv(os.path.join(out, "trials.csv"), reports)
        emit_report(reports, out, scenario_kind=config.scenario.kind,
                    failures=failures, oracle_quality=qualities,
                    config_text=serialize_config(config))
    first = results[0] if results else None
    if first is not None and first.posteriors is not None:
        _dump_posteriors(out, first.posteriors)
    if first is not None and first.trace:
        write_trace(os.path.join(out, "trace.csv"), first.trace)
    return results, out


def _dump_posteriors(out: str, bundle: dict) -> None:
    oracle = bundle["oracle"]
    for tag in ("before", "after"):
        P = bundle[tag]
        scores = oracle.score(P)
        dump_probes(os.path.join(out, f"posteriors_{tag}.csv"),
                    bundle["roles"], scores, scores >= oracle.threshold, P)


_TRIAL_COLUMNS = ("method", "trial_seed", "bt", "bf", "af", "fr", "bt_train",
                  "at_train", "cfr", "acc_before", "acc_after", "diff_acc",
                  "runtime_seconds", "unlearning_reversed")


def write_trials_csv(path: str, reports) -> None:
    """One row per trial; floats via repr so nothing is rounded away."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TRIAL_COLUMNS)
        for r in sorted(reports, key=lambda r: (r.method, r.trial_seed)):
            d = r.to_dict()
            writer.writerow([repr(d[c]) if isinstance(d[c], float) else d[c]
                             for c in _TRIAL_COLUMNS])


def read_trials_csv(path: str):
    """Inverse of write_trials_csv."""
    reports = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(_TRIAL_COLUMNS):
            raise ValueError(f"{path} is not a trials.csv "
                             f"(columns {reader.fieldnames})")
        for row in reader:
            reports.append(UnlearnReport(
                method=row["method"], trial_seed=int(row["trial_seed"]),
                bt=int(row["bt"]), bf=int(row["bf"]), af=int(row["af"]),
                fr=float(row["fr"]), bt_train=int(row["bt_train"]),
                at_train=int(row["at_train"]), cfr=float(row["cfr"]),
                acc_before=float(row["acc_before"]),
                acc_after=float(row["acc_after"]),
                diff_acc=float(row["diff_acc"]),
                runtime_seconds=float(row["runtime_seconds"]),
                unlearning_reversed=row["unlearning_reversed"] == "True"))
    return reports


def _without_runtime(d: dict) -> dict:
    return {k: v for k, v in d.items() if k != "runtime_seconds"}


def emit_report(reports, out_dir: str, scenario_kind: str = "unknown",
                failures=(), oracle_quality=None, config_text=None) -> None:
    """Write summary.json and table.csv for a batch of trial reports.

    Reports may span several methods; each method aggregates separately
    and becomes one table row. summary.json intentionally omits
    runtime_seconds everywhere: wall-clock noise would break the
    byte-for-byte reproducibility the rest of the pipeline guarantees.
    Timings live in trials.csv and table.csv instead.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to emit")
    os.makedirs(out_dir, exist_ok=True)
    by_method = {}
    for r in reports:
        by_method.setdefault(r.method, []).append(r)

    summary = {
        "scenario": scenario_kind,
        "n_reports": len(reports),
        "methods": {},
        "trials": {},
        "failures": list(failures),
    }
    if oracle_quality:
        summary["oracle_quality"] = list(oracle_quality)
    if config_text is not None:
        summary["config"] = config_text
    for method in sorted(by_method):
        group = by_method[method]
        summary["methods"][method] = _without_runtime(aggregate_trials(group))
        summary["trials"][method] = [
            _without_runtime(r.to_dict())
            for r in sorted(group, key=lambda r: r.trial_seed)]
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(os.path.join(out_dir, "table.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "scenario", "n_trials",
                         "fr_mean", "fr_variance",
                         "cfr_mean", "cfr_variance",
                         "diff_acc_mean", "diff_acc_variance",
                         "acc_before_mean", "acc_after_mean",
                         "runtime_mean", "runtime_variance"])
        for method in sorted(by_method):
            agg = aggregate_trials(by_method[method])
            writer.writerow([
                method, scenario_kind, agg["n_trials"],
                repr(agg["fr"]["mean"]), repr(agg["fr"]["variance"]),
                repr(agg["cfr"]["mean"]), repr(agg["cfr"]["variance"]),
                repr(agg["diff_acc"]["mean"]), repr(agg["diff_acc"]["variance"]),
                repr(agg["acc_before"]["mean"]), repr(agg["acc_after"]["mean"]),
                repr(agg["runtime_seconds"]["mean"]),
                repr(agg["runtime_seconds"]["variance"])])
