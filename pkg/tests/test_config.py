"""Config text format: defaults, round trip, error reporting."""

import pytest

from forgetlab.configfile import (
    METHODS,
    ConfigError,
    apply_overrides,
    default_config,
    forsaken_from_config,
    load_config,
    parse_config,
    serialize_config,
)


class TestDefaults:
    def test_empty_text_yields_documented_defaults(self):
        c = parse_config("")
        assert c.scenario.kind == "ood_foreign"
        assert c.scenario.n_train == 2000
        assert c.scenario.n_test == 1000
        assert c.scenario.n_unlearn == 200
        assert c.scenario.n_reference == 500
        assert c.scenario.n_classes == 5
        assert c.scenario.input_dim == 20
        assert c.scenario.spread == 8.0
        assert c.scenario.center_scale == 3.0
        assert c.scenario.n_heldout_classes is None
        assert c.scenario.poison_fraction == 0.05
        assert c.scenario.poison_pair == (0, 1)
        assert c.hidden_sizes == (96, 48)
        assert c.training.epochs == 50
        assert c.training.batch_size == 32
        assert c.training.learning_rate == 0.1
        assert c.training.optimizer == "sgd"
        assert c.method == "forsaken"
        assert c.forsaken_max_iter == 30
        assert c.forsaken_lambda == 10.0
        assert c.forsaken_xi == 1.0
        assert c.forsaken_use_weight is True
        assert c.forsaken_weight_mode == "per_dimension"
        assert c.forsaken_optimizer == "lbfgs"
        assert c.forsaken_learning_rate == 0.05
        assert c.forsaken_d0_fraction == 0.01
        assert c.forsaken_early_stop_kl == 0.05
        assert c.forsaken_kl_direction == "forward"
        assert c.sisa_shards == 10
        assert c.sisa_slices == 5
        assert c.trials == 10
        assert c.seed == 0
        assert c.out == "out"

    def test_default_config_helper(self):
        assert default_config() == parse_config("")


class TestParsing:
    def test_comments_and_blanks_skipped(self):
        text = "# a comment\n\n  \nrun.seed = 7\n# run.seed = 9\n"
        assert parse_config(text).seed == 7

    def test_values_override_defaults(self):
        c = parse_config("training.epochs = 3\nmodel.hidden = 8,4\n"
                         "forsaken.use_weight = false\n")
        assert c.training.epochs == 3
        assert c.hidden_sizes == (8, 4)
        assert c.forsaken_use_weight is False

    def test_heldout_minus_one_means_auto(self):
        c = parse_config("scenario.kind = ood_labelsplit\n"
                         "scenario.heldout_classes = -1\n")
        assert c.scenario.n_heldout_classes is None
        assert c.scenario.heldout_classes == 1
        c2 = parse_config("scenario.kind = ood_labelsplit\n"
                          "scenario.heldout_classes = 2\n")
        assert c2.scenario.heldout_classes == 2

    def test_syntax_error_carries_line_number(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("run.seed = 1\nnot an assignment\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match=r"line 1: unknown key"):
            parse_config("run.sede = 1\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match=r"line 3: duplicate key"):
            parse_config("run.seed = 1\n# x\nrun.seed = 2\n")

    def test_bad_value_types(self):
        with pytest.raises(ConfigError, match="line 1: bad value"):
            parse_config("training.epochs = many\n")
        with pytest.raises(ConfigError, match="true or false"):
            parse_config("forsaken.use_weight = yes\n")
        with pytest.raises(ConfigError, match="integers"):
            parse_config("model.hidden = \n")

    def test_construction_errors_are_prefixed(self):
        with pytest.raises(ConfigError, match="scenario:"):
            parse_config("scenario.n_classes = 1\n")
        with pytest.raises(ConfigError, match="training:"):
            parse_config("training.learning_rate = -1.0\n")
        with pytest.raises(ConfigError, match="forsaken:"):
            parse_config("forsaken.d0_fraction = 0.5\n")

    def test_semantic_checks(self):
        with pytest.raises(ConfigError, match="unknown method"):
            parse_config("method.name = oblivion\n")
        with pytest.raises(ConfigError, match="positive"):
            parse_config("model.hidden = 0,4\n")
        with pytest.raises(ConfigError, match="trials"):
            parse_config("run.trials = 0\n")
        with pytest.raises(ConfigError, match="sisa"):
            parse_config("sisa.shards = 0\n")
        with pytest.raises(ConfigError, match="lambda"):
            parse_config("forsaken.lambda = -2.0\n")


class TestSerialization:
    def test_round_trip_identity(self):
        c = parse_config("scenario.kind = poison\nscenario.spread = 2.5\n"
                         "model.hidden = 10\nforsaken.lambda = 0.1\n"
                         "run.out = elsewhere\n")
        assert parse_config(serialize_config(c)) == c

    def test_serialization_is_canonical(self):
        # Same config from differently ordered text serializes the same.
        a = parse_config("run.seed = 3\ntraining.epochs = 2\n")
        b = parse_config("training.epochs = 2\nrun.seed = 3\n")
        assert serialize_config(a) == serialize_config(b)

    def test_every_key_appears_once(self):
        text = serialize_config(default_config())
        lines = [l for l in text.splitlines() if l]
        assert len(lines) == 34
        keys = [l.split(" = ")[0] for l in lines]
        assert len(set(keys)) == len(keys)

    def test_floats_survive_exactly(self):
        c = parse_config("scenario.spread = 0.30000000000000004\n")
        back = parse_config(serialize_config(c))
        assert back.scenario.spread == 0.30000000000000004

    def test_bools_and_tuples_formatting(self):
        text = serialize_config(default_config())
        assert "forsaken.use_weight = true" in text
        assert "model.hidden = 96,48" in text


class TestFileLoading:
    def test_load_config(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("run.trials = 4\nmethod.name = retrain\n")
        c = load_config(str(path))
        assert c.trials == 4 and c.method == "retrain"


class TestOverrides:
    def test_flags_beat_file(self):
        c = default_config()
        out = apply_overrides(c, seed=9, out="results", method="sisa",
                              trials=2)
        assert (out.seed, out.out, out.method, out.trials) == \
            (9, "results", "sisa", 2)
        # untouched fields carry over
        assert out.scenario == c.scenario

    def test_no_flags_returns_config_unchanged(self):
        c = default_config()
        assert apply_overrides(c) == c

    def test_override_validation(self):
        c = default_config()
        with pytest.raises(ConfigError, match="unknown method"):
            apply_overrides(c, method="void")
        with pytest.raises(ConfigError, match="trials"):
            apply_overrides(c, trials=0)


class TestForsakenFromConfig:
    def test_field_mapping(self):
        c = parse_config("forsaken.max_iter = 7\nforsaken.lambda = 2.0\n"
                         "forsaken.xi = 0.5\nforsaken.use_weight = false\n"
                         "forsaken.weight_mode = scalar_mean\n"
                         "forsaken.optimizer = adam\n"
                         "forsaken.learning_rate = 0.01\n"
                         "forsaken.d0_fraction = 0.02\n"
                         "forsaken.early_stop_kl = 0.1\n"
                         "forsaken.kl_direction = reverse\n")
        f = forsaken_from_config(c, random_state=42)
        assert f.max_iter == 7
        assert f.lambda_penalty == 2.0
        assert f.forgetting_coefficient == 0.5
        assert f.use_penalty_weight is False
        assert f.penalty_weight_mode == "scalar_mean"
        assert f.optimizer == "adam"
        assert f.learning_rate == 0.01
        assert f.d0_fraction == 0.02
        assert f.early_stop_kl == 0.1
        assert f.kl_direction == "reverse"
        assert f.random_state == 42

    def test_methods_tuple(self):
        assert METHODS == ("forsaken", "retrain", "smu", "sisa", "none")
