"""Experiment configuration: a small line-based text format.

One assignment per line, `section.key = value`. Blank lines and lines
starting with `#` are skipped. Every key has a default, so the empty
string parses to the default experiment; unknown or duplicate keys are
errors rather than silently ignored typos. parse/serialize round-trips
exactly: floats are written with repr, which preserves their value.

    scenario.kind = ood_foreign
    training.epochs = 50
    method.name = forsaken
    forsaken.lambda = 10.0
    run.trials = 10
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .datasets import ScenarioSpec
from .forsaken import Forsaken
from .training import TrainConfig

METHODS = ("forsaken", "retrain", "smu", "sisa", "none")


class ConfigError(ValueError):
    """Raised for syntax errors, unknown keys, and invalid values."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one `run` needs. Seeds inside nested specs are
    placeholders; per-trial seeds are derived from `seed` at run time."""

    scenario: ScenarioSpec
    hidden_sizes: tuple
    training: TrainConfig
    method: str
    forsaken_max_iter: int
    forsaken_lambda: float
    forsaken_xi: float
    forsaken_use_weight: bool
    forsaken_weight_mode: str
    forsaken_optimizer: str
    forsaken_learning_rate: float
    forsaken_d0_fraction: float
    forsaken_early_stop_kl: float
    forsaken_kl_direction: str
    sisa_shards: int
    sisa_slices: int
    trials: int
    seed: int
    out: str


def _bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _int_list(text: str) -> tuple:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(p) for p in parts)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


# key -> (caster, default). Definition order is the canonical file order.
_KEYS = {
    "scenario.kind": (str, "ood_foreign"),
    "scenario.n_train": (int, 2000),
    "scenario.n_test": (int, 1000),
    "scenario.n_unlearn": (int, 200),
    "scenario.n_reference": (int, 500),
    "scenario.n_classes": (int, 5),
    "scenario.input_dim": (int, 20),
    "scenario.spread": (float, 8.0),
    "scenario.center_scale": (float, 3.0),
    "scenario.heldout_classes": (int, -1),  # -1 = auto (n_classes // 3)
    "scenario.poison_fraction": (float, 0.05),
    "scenario.poison_source": (int, 0),
    "scenario.poison_target": (int, 1),
    "model.hidden": (_int_list, (96, 48)),
    "training.epochs": (int, 50),
    "training.batch_size": (int, 32),
    "training.learning_rate": (float, 0.1),
    "training.optimizer": (str, "sgd"),
    "method.name": (str, "forsaken"),
    "forsaken.max_iter": (int, 30),
    "forsaken.lambda": (float, 10.0),
    "forsaken.xi": (float, 1.0),
    "forsaken.use_weight": (_bool, True),
    "forsaken.weight_mode": (str, "per_dimension"),
    "forsaken.optimizer": (str, "lbfgs"),
    "forsaken.learning_rate": (float, 0.05),
    "forsaken.d0_fraction": (float, 0.01),
    "forsaken.early_stop_kl": (float, 0.05),
    "forsaken.kl_direction": (str, "forward"),
    "sisa.shards": (int, 10),
    "sisa.slices": (int, 5),
    "run.trials": (int, 10),
    "run.seed": (int, 0),
    "run.out": (str, "out"),
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; every error carries a line number or key path."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', "
                              f"got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        caster, _ = _KEYS[key]
        try:
            values[key] = caster(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    for key, (_, default) in _KEYS.items():
        values.setdefault(key, default)
    return _build(values)


def _build(v: dict) -> ExperimentConfig:
    heldout = v["scenario.heldout_classes"]
    try:
        scenario = ScenarioSpec(
            kind=v["scenario.kind"],
            n_train=v["scenario.n_train"], n_test=v["scenario.n_test"],
            n_unlearn=v["scenario.n_unlearn"],
            n_reference=v["scenario.n_reference"],
            n_classes=v["scenario.n_classes"],
            input_dim=v["scenario.input_dim"],
            spread=v["scenario.spread"], center_scale=v["scenario.center_scale"],
            n_heldout_classes=None if heldout == -1 else heldout,
            poison_fraction=v["scenario.poison_fraction"],
            poison_pair=(v["scenario.poison_source"], v["scenario.poison_target"]))
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from None
    try:
        training = TrainConfig(epochs=v["training.epochs"],
                               batch_size=v["training.batch_size"],
                               learning_rate=v["training.learning_rate"],
                               optimizer=v["training.optimizer"])
    except ValueError as exc:
        raise ConfigError(f"training: {exc}") from None
    if v["method.name"] not in METHODS:
        raise ConfigError(f"method.name: unknown method {v['method.name']!r}; "
                          f"expected one of {METHODS}")
    if not v["model.hidden"] or any(h < 1 for h in v["model.hidden"]):
        raise ConfigError("model.hidden: layer sizes must be positive")
    if v["run.trials"] < 1:
        raise ConfigError("run.trials must be >= 1")
    if v["sisa.shards"] < 1 or v["sisa.slices"] < 1:
        raise ConfigError("sisa.shards and sisa.slices must be >= 1")
    if v["forsaken.lambda"] < 0:
        raise ConfigError("forsaken.lambda must be >= 0")

    config = ExperimentConfig(
        scenario=scenario, hidden_sizes=v["model.hidden"], training=training,
        method=v["method.name"],
        forsaken_max_iter=v["forsaken.max_iter"],
        forsaken_lambda=v["forsaken.lambda"],
        forsaken_xi=v["forsaken.xi"],
        forsaken_use_weight=v["forsaken.use_weight"],
        forsaken_weight_mode=v["forsaken.weight_mode"],
        forsaken_optimizer=v["forsaken.optimizer"],
        forsaken_learning_rate=v["forsaken.learning_rate"],
        forsaken_d0_fraction=v["forsaken.d0_fraction"],
        forsaken_early_stop_kl=v["forsaken.early_stop_kl"],
        forsaken_kl_direction=v["forsaken.kl_direction"],
        sisa_shards=v["sisa.shards"], sisa_slices=v["sisa.slices"],
        trials=v["run.trials"], seed=v["run.seed"], out=v["run.out"])
    try:
        forsaken_from_config(config)._validate()
    except ValueError as exc:
        raise ConfigError(f"forsaken: {exc}") from None
    return config


def forsaken_from_config(config: ExperimentConfig, random_state: int = 0
                         ) -> Forsaken:
    return Forsaken(max_iter=config.forsaken_max_iter,
                    forgetting_coefficient=config.forsaken_xi,
                    lambda_penalty=config.forsaken_lambda,
                    use_penalty_weight=config.forsaken_use_weight,
                    penalty_weight_mode=config.forsaken_weight_mode,
                    optimizer=config.forsaken_optimizer,
                    learning_rate=config.forsaken_learning_rate,
                    d0_fraction=config.forsaken_d0_fraction,
                    early_stop_kl=config.forsaken_early_stop_kl,
                    kl_direction=config.forsaken_kl_direction,
                    random_state=random_state)


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical text with every key explicit, in the documented order."""
    heldout = config.scenario.n_heldout_classes
    values = {
        "scenario.kind": config.scenario.kind,
        "scenario.n_train": config.scenario.n_train,
        "scenario.n_test": config.scenario.n_test,
        "scenario.n_unlearn": config.scenario.n_unlearn,
        "scenario.n_reference": config.scenario.n_reference,
        "scenario.n_classes": config.scenario.n_classes,
        "scenario.input_dim": config.scenario.input_dim,
        "scenario.spread": config.scenario.spread,
        "scenario.center_scale": config.scenario.center_scale,
        "scenario.heldout_classes": -1 if heldout is None else heldout,
        "scenario.poison_fraction": config.scenario.poison_fraction,
        "scenario.poison_source": config.scenario.poison_pair[0],
        "scenario.poison_target": config.scenario.poison_pair[1],
        "model.hidden": config.hidden_sizes,
        "training.epochs": config.training.epochs,
        "training.batch_size": config.training.batch_size,
        "training.learning_rate": config.training.learning_rate,
        "training.optimizer": config.training.optimizer,
        "method.name": config.method,
        "forsaken.max_iter": config.forsaken_max_iter,
        "forsaken.lambda": config.forsaken_lambda,
        "forsaken.xi": config.forsaken_xi,
        "forsaken.use_weight": config.forsaken_use_weight,
        "forsaken.weight_mode": config.forsaken_weight_mode,
        "forsaken.optimizer": config.forsaken_optimizer,
        "forsaken.learning_rate": config.forsaken_learning_rate,
        "forsaken.d0_fraction": config.forsaken_d0_fraction,
        "forsaken.early_stop_kl": config.forsaken_early_stop_kl,
        "forsaken.kl_direction": config.forsaken_kl_direction,
        "sisa.shards": config.sisa_shards,
        "sisa.slices": config.sisa_slices,
        "run.trials": config.trials,
        "run.seed": config.seed,
        "run.out": config.out,
    }
    lines = [f"{key} = {_fmt(values[key])}" for key in _KEYS]
    return "\n".join(lines) + "\n"


def default_config() -> ExperimentConfig:
    return parse_config("")


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def apply_overrides(config: ExperimentConfig, seed=None, out=None, method=None,
                    trials=None) -> ExperimentConfig:
    """CLI flags beat the file; unset flags leave the config alone."""
    updates = {}
    if seed is not None:
        updates["seed"] = int(seed)
    if out is not None:
        updates["out"] = str(out)
    if method is not None:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
        updates["method"] = method
    if trials is not None:
        if int(trials) < 1:
            raise ConfigError("trials must be >= 1")
        updates["trials"] = int(trials)
    return replace(config, **updates) if updates else config
