"""Tests for checkpoint persistence."""

import json

import numpy as np
import pytest

from structshot.checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from structshot.errors import CheckpointError
from structshot.graphs import with_substructures
from structshot.params import state_dict
from structshot.trainer import evaluate, train


@pytest.fixture
def trained(tiny_config, small_dataset):
    return train(tiny_config, small_dataset)


class TestRoundTrip:
    """Tests for save -> load."""

    def test_parameters_and_metadata(self, trained, tmp_path):
        path = save_checkpoint(trained, tmp_path / "run" / "model.npz")
        loaded = load_checkpoint(path)
        before, after = state_dict(trained.params), state_dict(loaded.params)
        assert before.keys() == after.keys()
        for name in before:
            assert np.array_equal(before[name], after[name])
        assert loaded.config == trained.config
        assert loaded.in_dim == trained.in_dim
        assert loaded.best_val_acc == trained.best_val_acc
        assert loaded.loss_trace == trained.loss_trace
        assert loaded.validation == trained.validation
        assert loaded.rng_state == trained.rng_state
        assert np.array_equal(loaded.transforms[0].mean, trained.transforms[0].mean)

    def test_evaluation_is_identical(self, trained, small_dataset, tmp_path):
        """Evaluating the reloaded checkpoint reproduces the report exactly."""
        before = evaluate(trained, small_dataset.test, num_tasks=6, seed=11)
        loaded = load_checkpoint(save_checkpoint(trained, tmp_path / "model.npz"))
        after = evaluate(loaded, small_dataset.test, num_tasks=6, seed=11)
        assert before.to_json() == after.to_json()

    def test_no_temporary_file_left(self, trained, tmp_path):
        save_checkpoint(trained, tmp_path / "out" / "model.npz")
        assert [p.name for p in (tmp_path / "out").iterdir()] == ["model.npz"]

    def test_ensemble_keeps_one_transform_per_branch(self, tiny_config, small_dataset, tmp_path):
        config = tiny_config.with_overrides(
            {"variant": "ensemble", "global_attn": "vanilla", "local_attn": "vanilla", "iterations": 1}
        )
        ckpt = train(config, with_substructures(small_dataset, config.seed))
        loaded = load_checkpoint(save_checkpoint(ckpt, tmp_path / "ensemble.npz"))
        assert len(loaded.transforms) == 2


class TestLoadErrors:
    """Tests for rejected checkpoints."""

    def test_missing(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "absent.npz")

    def test_not_an_archive(self, tmp_path):
        path = tmp_path / "garbage.npz"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError, match="unreadable"):
            load_checkpoint(path)

    def test_unknown_format_version(self, tmp_path):
        path = tmp_path / "future.npz"
        np.savez(path, meta=np.array(json.dumps({"format_version": FORMAT_VERSION + 1})))
        with pytest.raises(CheckpointError, match="unsupported checkpoint format version 2"):
            load_checkpoint(path)

    def test_missing_metadata(self, tmp_path):
        path = tmp_path / "bare.npz"
        np.savez(path, weights=np.zeros(3))
        with pytest.raises(CheckpointError, match="no metadata"):
            load_checkpoint(path)

    def test_mismatched_parameters(self, trained, tmp_path):
        """Arrays that do not fit the stored config are rejected."""
        path = save_checkpoint(trained, tmp_path / "model.npz")
        with np.load(path) as archive:
            arrays = {name: archive[name] for name in archive.files}
        meta = json.loads(str(arrays["meta"]))
        meta["config"]["hidden_dim"] = 16
        arrays["meta"] = np.array(json.dumps(meta))
        np.savez(path, **arrays)
        with pytest.raises(CheckpointError, match="do not match"):
            load_checkpoint(path)
