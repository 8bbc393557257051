"""Command line front end.

Subcommands cover the pipeline stages individually (gen-data, train,
unlearn, audit) and as a whole (run); report rebuilds summary/table
artifacts from a previous run's trials.csv. Exit codes: 0 success,
1 configuration problem, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .baselines import retrain_full, smu_record, smu_unlearn
from .checkpoint import load_checkpoint, save_checkpoint
from .configfile import (ConfigError, apply_overrides, default_config,
                         forsaken_from_config, load_config, serialize_config)
from .datasets import build_scenario, dump_role_csvs
from .experiment import (_S_METHOD, build_trial_parts, emit_report,
                         read_trials_csv, run_experiment)
from .forsaken import write_trace
from .membership import build_oracle, dump_probes, evaluate_oracle
from .metrics import catastrophic_forgetting_rate, forgetting_rate
from .model import build_model, evaluate, forward_batch
from .sisa import save_ensemble, sisa_train, sisa_unlearn
from .training import train
from .utils import derive_seed


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as config errors (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="forgetlab",
                     description="Neuron-masking unlearning benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory")
        p.add_argument("--method", help="unlearning method override")
        p.add_argument("--trials", type=int, help="trial count override")
        return p

    add("gen-data", "generate a scenario and dump per-role CSVs")
    add("train", "train the target model and save a checkpoint")
    add("unlearn", "train, then apply one unlearning method once")
    add("audit", "evaluate the membership oracle; compare checkpoints if present")
    add("run", "full multi-trial pipeline with reports")
    add("report", "rebuild summary.json and table.csv from trials.csv")
    return parser


def _config_from(args) -> "ExperimentConfig":
    config = load_config(args.config) if args.config else default_config()
    return apply_overrides(config, seed=args.seed, out=args.out,
                           method=args.method, trials=args.trials)


def _out_dir(config) -> str:
    os.makedirs(config.out, exist_ok=True)
    return config.out


def _cmd_gen_data(args) -> int:
    config = _config_from(args)
    out = _out_dir(config)
    dataset, _, _ = build_trial_parts(config, 0)
    paths = dump_role_csvs(dataset, out)
    info = {"kind": dataset.spec.kind, "seed": config.seed,
            "role_counts": {k: int(n) for k, n in dataset.role_counts().items()},
            "info": {k: v for k, v in dataset.info.items()
                     if isinstance(v, (int, float, str, bool))}}
    with open(os.path.join(out, "scenario.json"), "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(paths)} role files and scenario.json to {out}")
    return 0


def _train_target(config):
    dataset, spec, tcfg = build_trial_parts(config, 0)
    rows = dataset.training_indices()
    params = train(build_model(spec), spec, tcfg,
                   dataset.X[rows], dataset.labels[rows])
    return dataset, spec, tcfg, params


def _cmd_train(args) -> int:
    config = _config_from(args)
    out = _out_dir(config)
    dataset, spec, _, params = _train_target(config)
    path = os.path.join(out, "target.fskn")
    save_checkpoint(path, params, spec)
    test = dataset.indices("test")
    acc = evaluate(params, spec, dataset.X[test], dataset.labels[test])
    print(f"trained target ({len(params)} parameters), "
          f"test accuracy {acc:.4f}, saved {path}")
    return 0


def _cmd_unlearn(args) -> int:
    config = _config_from(args)
    out = _out_dir(config)
    method = config.method
    dataset, spec, tcfg = build_trial_parts(config, 0)

    if method == "sisa":
        ensemble = sisa_train(dataset, spec, tcfg,
                              config.sisa_shards, config.sisa_slices)
        after, info = sisa_unlearn(ensemble, dataset)
        save_ensemble(os.path.join(out, "sisa"), after)
        print(f"sisa retrained {info['stages_retrained']} stages; "
              f"ensemble saved under {os.path.join(out, 'sisa')}")
        return 0

    if method == "smu":
        target, ledger = smu_record(dataset, spec, tcfg)
        unlearned = smu_unlearn(target, ledger)
    else:
        rows = dataset.training_indices()
        target = train(build_model(spec), spec, tcfg,
                       dataset.X[rows], dataset.labels[rows])
        if method == "none":
            unlearned = target.copy()
        elif method == "retrain":
            unlearned = retrain_full(dataset, spec, tcfg)
        else:  # forsaken
            unlearner = forsaken_from_config(
                config, random_state=derive_seed(config.seed, _S_METHOD))
            outcome = unlearner.unlearn(target, spec, dataset)
            unlearned = outcome.params
            write_trace(os.path.join(out, "trace.csv"), outcome.trace)
            print(f"forsaken ran {outcome.iterations} iterations"
                  f"{' (early stop)' if outcome.early_stopped else ''}")

    save_checkpoint(os.path.join(out, "target.fskn"), target, spec)
    save_checkpoint(os.path.join(out, "unlearned.fskn"), unlearned, spec)
    test = dataset.indices("test")
    acc = evaluate(unlearned, spec, dataset.X[test], dataset.labels[test])
    print(f"method={method} done, post-unlearning test accuracy {acc:.4f}; "
          f"saved target.fskn and unlearned.fskn to {out}")
    return 0


def _cmd_audit(args) -> int:
    config = _config_from(args)
    out = _out_dir(config)
    dataset, spec, tcfg = build_trial_parts(config, 0)
    target_path = os.path.join(out, "target.fskn")
    if os.path.exists(target_path):
        target, _ = load_checkpoint(target_path, spec=spec)
    else:
        _, _, _, target = _train_target(config)

    oracle = build_oracle(dataset, spec, tcfg, derive_seed(config.seed, 24))
    quality = evaluate_oracle(oracle, target, spec, dataset,
                              derive_seed(config.seed, 26))
    audit = {"oracle_accuracy": quality.accuracy,
             "oracle_precision": quality.precision,
             "oracle_recall": quality.recall,
             "n_members": quality.n_members,
             "n_nonmembers": quality.n_nonmembers}

    rows = np.concatenate([dataset.indices("unlearn"), dataset.indices("train"),
                           dataset.indices("test")])
    posts = forward_batch(target, spec, dataset.X[rows])
    scores = oracle.score(posts)
    dump_probes(os.path.join(out, "probes.csv"), dataset.roles[rows], scores,
                scores >= oracle.threshold, posts)

    unlearned_path = os.path.join(out, "unlearned.fskn")
    if os.path.exists(unlearned_path):
        unlearned, _ = load_checkpoint(unlearned_path, spec=spec)
        u = dataset.indices("unlearn")
        r = dataset.indices("train")
        b_u = oracle.predict(forward_batch(target, spec, dataset.X[u]))
        a_u = oracle.predict(forward_batch(unlearned, spec, dataset.X[u]))
        b_r = oracle.predict(forward_batch(target, spec, dataset.X[r]))
        a_r = oracle.predict(forward_batch(unlearned, spec, dataset.X[r]))
        audit["fr"] = forgetting_rate(b_u, a_u) if b_u.sum() else None
        audit["cfr"] = catastrophic_forgetting_rate(b_r, a_r) if b_r.sum() else None

    with open(os.path.join(out, "audit.json"), "w") as fh:
        json.dump(audit, fh, indent=2, sort_keys=True)
        fh.write("\n")
    line = (f"oracle accuracy {quality.accuracy:.4f} "
            f"(precision {quality.precision:.4f}, recall {quality.recall:.4f})")
    if "fr" in audit:
        line += f"; FR={audit['fr']}, CFR={audit['cfr']}"
    print(line)
    return 0


def _cmd_run(args) -> int:
    config = _config_from(args)
    results, out = run_experiment(config)
    ok = [r for r in results if r.report is not None]
    failed = [r for r in results if r.failed]
    for r in ok:
        rep = r.report
        print(f"trial {r.index} seed {r.trial_seed}: FR={rep.fr:.4f} "
              f"CFR={rep.cfr:.4f} diff_acc={rep.diff_acc:.4f} "
              f"runtime={rep.runtime_seconds:.3f}s")
    for r in failed:
        print(f"trial {r.index} FAILED at {r.stage}: {r.error}", file=sys.stderr)
    if not ok:
        print("all trials failed", file=sys.stderr)
        return 2
    print(f"{len(ok)}/{len(results)} trials succeeded; artifacts in {out}")
    return 0


def _cmd_report(args) -> int:
    config = _config_from(args)
    out = config.out
    trials_path = os.path.join(out, "trials.csv")
    if not os.path.exists(trials_path):
        raise FileNotFoundError(f"{trials_path} not found; run `forgetlab run` first")
    reports = read_trials_csv(trials_path)
    emit_report(reports, out, scenario_kind=config.scenario.kind,
                config_text=serialize_config(config) if args.config else None)
    print(f"rebuilt summary.json and table.csv in {out} "
          f"from {len(reports)} trial rows")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "unlearn": _cmd_unlearn,
    "audit": _cmd_audit,
    "run": _cmd_run,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
