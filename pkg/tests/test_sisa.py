"""Sharded/sliced training, checkpoint reuse, partial retraining."""

import numpy as np
import pytest

from forgetlab.model import ModelSpec, build_model, forward_batch, zeros_like_params
from forgetlab.sisa import (
    SisaEnsemble,
    assign_cells,
    load_ensemble,
    save_ensemble,
    sisa_predict,
    sisa_train,
    sisa_unlearn,
    stage_epochs,
)
from forgetlab.training import TrainConfig, train


@pytest.fixture(scope="module")
def ensemble(small_dataset, small_model_spec, small_train_config):
    return sisa_train(small_dataset, small_model_spec, small_train_config,
                      n_shards=3, n_slices=2)


class TestStageEpochs:
    def test_sums_to_budget(self):
        for total in (0, 1, 7, 50):
            for r in (1, 2, 5):
                parts = stage_epochs(total, r)
                assert sum(parts) == total
                assert len(parts) == r

    def test_earlier_stages_take_the_extra(self):
        assert stage_epochs(7, 3) == [3, 2, 2]
        assert stage_epochs(50, 5) == [10] * 5
        assert stage_epochs(3, 1) == [3]


class TestAssignCells:
    def test_hash_assignment_fills_cells(self):
        indices = np.arange(600)
        shards, slices, fallback = assign_cells(indices, 3, 2, seed=0)
        assert not fallback
        counts = np.zeros((3, 2), dtype=int)
        np.add.at(counts, (shards, slices), 1)
        assert counts.min() > 0
        assert counts.sum() == 600

    def test_deterministic_and_seed_sensitive(self):
        indices = np.arange(300)
        a = assign_cells(indices, 4, 3, seed=1)
        b = assign_cells(indices, 4, 3, seed=1)
        c = assign_cells(indices, 4, 3, seed=2)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        assert (not np.array_equal(a[0], c[0])) or \
            (not np.array_equal(a[1], c[1]))

    def test_assignment_ignores_row_removal(self):
        # Hash keyed on the global index: dropping rows must not move
        # the survivors.
        indices = np.arange(400)
        shards, slices, fallback = assign_cells(indices, 3, 2, seed=5)
        assert not fallback
        keep = np.ones(400, dtype=bool)
        keep[::7] = False
        s2, r2, fb2 = assign_cells(indices[keep], 3, 2, seed=5)
        assert not fb2
        assert np.array_equal(s2, shards[keep])
        assert np.array_equal(r2, slices[keep])

    def test_round_robin_fallback_when_cells_starve(self):
        # 12 rows into 12 cells: the hash is all but certain to leave a
        # hole, flipping assignment to round-robin over positions.
        indices = np.arange(100, 112)
        shards, slices, fallback = assign_cells(indices, 4, 3, seed=0)
        assert fallback
        pos = np.arange(12)
        assert np.array_equal(shards, pos % 4)
        assert np.array_equal(slices, (pos // 4) % 3)

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValueError, match="cells"):
            assign_cells(np.arange(5), 3, 2, seed=0)


class TestTrain:
    def test_checkpoint_grid_is_complete(self, ensemble):
        assert len(ensemble.checkpoints) == 3
        for row in ensemble.checkpoints:
            assert len(row) == 2
            for pv in row:
                assert pv is not None

    def test_single_cell_collapses_to_plain_training(self, small_dataset,
                                                     small_model_spec,
                                                     small_train_config):
        ens = sisa_train(small_dataset, small_model_spec,
                         small_train_config, n_shards=1, n_slices=1)
        rows = small_dataset.training_indices()
        plain = train(build_model(small_model_spec), small_model_spec,
                      small_train_config, small_dataset.X[rows],
                      small_dataset.labels[rows])
        assert np.array_equal(ens.final_params(0).values, plain.values)

    def test_shard_rows_partition_training_set(self, ensemble,
                                               small_dataset):
        rows = small_dataset.training_indices()
        got = np.sort(np.concatenate(
            [ensemble.rows_of(s, 1) for s in range(3)]))
        assert np.array_equal(got, rows)

    def test_invalid_grid_rejected(self, small_dataset, small_model_spec,
                                   small_train_config):
        with pytest.raises(ValueError, match="at least one"):
            sisa_train(small_dataset, small_model_spec, small_train_config,
                       n_shards=0, n_slices=1)


class TestUnlearn:
    def test_untouched_shards_keep_exact_checkpoints(self, ensemble,
                                                     small_dataset):
        victim = int(ensemble.shards[0])
        rows = ensemble.sample_indices[ensemble.shards == victim][:2]
        new, info = sisa_unlearn(ensemble, small_dataset, unlearn_rows=rows)
        for s in range(3):
            if s == victim:
                continue
            assert info["first_retrained_stage"][s] is None
            for r in range(2):
                assert np.array_equal(new.checkpoints[s][r].values,
                                      ensemble.checkpoints[s][r].values)

    def test_first_stage_is_earliest_hit_slice(self, ensemble,
                                               small_dataset):
        # Remove one row from slice 1 of some shard: stage 0 must be
        # reused, only stage 1 retrained.
        mask = ensemble.slices == 1
        row = ensemble.sample_indices[mask][0]
        shard = int(ensemble.shards[mask][0])
        new, info = sisa_unlearn(ensemble, small_dataset,
                                 unlearn_rows=[row])
        assert info["first_retrained_stage"][shard] == 1
        assert info["stages_retrained"] == 1
        assert info["n_removed"] == 1
        assert np.array_equal(new.checkpoints[shard][0].values,
                              ensemble.checkpoints[shard][0].values)
        assert row not in new.sample_indices

    def test_removed_rows_leave_the_manifest(self, ensemble, small_dataset):
        new, info = sisa_unlearn(ensemble, small_dataset)
        removed = small_dataset.indices("unlearn")
        assert info["n_removed"] == len(removed)
        assert not np.isin(removed, new.sample_indices).any()
        assert len(new.sample_indices) == \
            len(ensemble.sample_indices) - len(removed)

    def test_emptied_shard_falls_back_to_init(self, ensemble, small_dataset):
        shard = 1
        rows = ensemble.sample_indices[ensemble.shards == shard]
        new, info = sisa_unlearn(ensemble, small_dataset, unlearn_rows=rows)
        assert info["first_retrained_stage"][shard] == 0
        init = build_model(ensemble.shard_spec(shard))
        assert np.array_equal(new.final_params(shard).values, init.values)

    def test_empty_and_unknown_rows_rejected(self, ensemble, small_dataset):
        with pytest.raises(ValueError, match="empty"):
            sisa_unlearn(ensemble, small_dataset, unlearn_rows=[])
        with pytest.raises(ValueError, match="manifest"):
            sisa_unlearn(ensemble, small_dataset,
                         unlearn_rows=[len(small_dataset) + 5])


class TestPredict:
    def test_shapes_and_normalization(self, ensemble, small_dataset):
        X = small_dataset.X[:17]
        probs, labels = sisa_predict(ensemble, X)
        assert probs.shape == (17, 3)
        assert labels.shape == (17,)
        assert np.allclose(probs.sum(axis=1), 1.0)
        assert np.all(probs >= 0)

    def test_majority_vote_matches_manual_count(self, ensemble,
                                                small_dataset):
        X = small_dataset.X[:40]
        probs, labels = sisa_predict(ensemble, X)
        votes = np.stack([
            forward_batch(ensemble.final_params(s), ensemble.spec,
                          X).argmax(axis=1)
            for s in range(3)])
        for i in range(40):
            counts = np.bincount(votes[:, i], minlength=3)
            assert labels[i] == counts.argmax()

    def _bias_model(self, spec, hot):
        pv = zeros_like_params(spec)
        (W, b), = pv.layers()
        b[hot] = 10.0
        return pv

    def test_tie_goes_to_lowest_class_and_winner_mean(self):
        spec = ModelSpec(layer_sizes=(2, 3), seed=0)
        a = self._bias_model(spec, hot=1)
        b = self._bias_model(spec, hot=2)
        ens = SisaEnsemble(spec=spec, config=TrainConfig(
            epochs=1, batch_size=1, learning_rate=0.1),
            n_shards=2, n_slices=1,
            sample_indices=np.arange(2), shards=np.array([0, 1]),
            slices=np.array([0, 0]), checkpoints=[[a], [b]])
        X = np.zeros((1, 2))
        probs, labels = sisa_predict(ens, X)
        # One vote each for classes 1 and 2: the tie resolves low.
        assert labels[0] == 1
        # Only the winning shard's posterior enters the mean.
        expected = forward_batch(a, spec, X)[0]
        assert np.allclose(probs[0], expected)


class TestPersistence:
    def test_round_trip(self, ensemble, tmp_path):
        save_ensemble(str(tmp_path), ensemble)
        assert (tmp_path / "manifest.csv").exists()
        assert (tmp_path / "meta.json").exists()
        back = load_ensemble(str(tmp_path))
        assert back.n_shards == 3 and back.n_slices == 2
        assert np.array_equal(back.sample_indices, ensemble.sample_indices)
        assert np.array_equal(back.shards, ensemble.shards)
        assert np.array_equal(back.slices, ensemble.slices)
        assert back.spec == ensemble.spec
        assert back.config == ensemble.config
        for s in range(3):
            for r in range(2):
                assert np.array_equal(back.checkpoints[s][r].values,
                                      ensemble.checkpoints[s][r].values)

    def test_missing_checkpoint_detected(self, ensemble, tmp_path):
        save_ensemble(str(tmp_path), ensemble)
        (tmp_path / "shard1_slice0.fskn").unlink()
        with pytest.raises(ValueError, match="missing"):
            load_ensemble(str(tmp_path))
