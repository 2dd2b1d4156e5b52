"""Tests for the command-line interface."""

import json
from unittest.mock import MagicMock, patch

import pytest

from conftest import make_eval_args, make_train_args
from structshot import cli
from structshot.checkpoint import load_checkpoint
from structshot.errors import CheckpointError
from structshot.gradsuite import CheckResult

TRAIN_FLAGS = [
    "--variant", "g", "--global-attn", "learned", "--n", "2", "--k", "2", "--q", "2",
    "--hidden-dim", "8", "--num-layers", "2", "--iterations", "2", "--validate-every", "1",
    "--val-tasks", "2", "--eval-tasks", "5", "--no-progress",
]  # fmt: skip


def run_train(dataset_file, out, *extra):
    return cli.main(["train", "--dataset", str(dataset_file), *TRAIN_FLAGS, *extra, "--out", str(out)])


class TestMain:
    """Tests for dispatch and error handling."""

    def test_no_command_prints_help(self, capsys):
        assert cli.main([]) == 1
        assert "usage: structshot" in capsys.readouterr().out

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc_info:
            cli.main(["fit"])
        assert exc_info.value.code == 2

    def test_domain_error_is_one_line(self, tmp_path, capsys):
        """Errors become a single stderr line and exit status 1."""
        code = cli.main(["eval", "--checkpoint", str(tmp_path / "absent.npz")])
        assert code == 1
        err = capsys.readouterr().err.strip().splitlines()
        assert err == [f"Error: checkpoint not found: {tmp_path / 'absent.npz'}"]

    def test_debug_propagates(self, tmp_path):
        with pytest.raises(CheckpointError):
            cli.main(["--debug", "eval", "--checkpoint", str(tmp_path / "absent.npz")])


class TestGenerateData:
    """Tests for generate-data."""

    def test_writes_requested_graphs(self, tmp_path, capsys):
        out = tmp_path / "d.jsonl"
        code = cli.main(
            ["generate-data", "--classes", "4", "--per-class", "30", "--seed", "1", "--out", str(out)]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 120
        records = [json.loads(line) for line in lines]
        assert {r["label"] for r in records} == {1, 2, 3, 4}
        assert "Wrote 120 graphs" in capsys.readouterr().out

    def test_bad_class_count(self, tmp_path, capsys):
        code = cli.main(["generate-data", "--classes", "12", "--out", str(tmp_path / "d.jsonl")])
        assert code == 1
        assert "num_classes" in capsys.readouterr().err


class TestTrainAndEval:
    """Tests for train and eval."""

    def test_train_writes_checkpoint(self, dataset_file, tmp_path, capsys):
        out = tmp_path / "run" / "g.npz"
        assert run_train(dataset_file, out) == 0
        assert "Trained g for 2 steps" in capsys.readouterr().out
        ckpt = load_checkpoint(out)
        assert ckpt.config.global_attn == "learned"
        assert len(ckpt.validation) == 2

    def test_config_file_with_flag_override(self, dataset_file, tmp_path, capsys):
        conf = tmp_path / "run.conf"
        conf.write_text("iterations = 3\nlearning_rate = 0.01\n")
        out = tmp_path / "g.npz"
        assert run_train(dataset_file, out, "--config", str(conf), "--iterations", "1") == 0
        ckpt = load_checkpoint(out)
        assert ckpt.config.iterations == 1
        assert ckpt.config.learning_rate == 0.01

    def test_train_and_eval_are_reproducible(self, dataset_file, tmp_path):
        """Two identical train + eval runs give byte-identical reports."""
        reports = []
        for name in ("a", "b"):
            ckpt = tmp_path / f"{name}.npz"
            report = tmp_path / f"{name}.json"
            assert run_train(dataset_file, ckpt) == 0
            assert cli.main(["eval", "--checkpoint", str(ckpt), "--out", str(report), "--no-progress"]) == 0
            reports.append(report.read_bytes())
        assert reports[0] == reports[1]
        parsed = json.loads(reports[0])
        assert parsed["tasks"] == 5
        assert set(parsed) == {"mean", "std", "ci95", "tasks", "accuracies"}

    def test_eval_missing_checkpoint_writes_nothing(self, tmp_path):
        report = tmp_path / "report.json"
        args = make_eval_args(checkpoint=str(tmp_path / "absent.npz"), out=str(report))
        with pytest.raises(CheckpointError):
            cli.cmd_eval(args)
        assert not report.exists()

    def test_eval_prints_report(self, dataset_file, tmp_path, capsys):
        ckpt = tmp_path / "g.npz"
        run_train(dataset_file, ckpt)
        capsys.readouterr()
        assert cli.cmd_eval(make_eval_args(checkpoint=str(ckpt), tasks=3, seed=2)) == 0
        assert json.loads(capsys.readouterr().out)["tasks"] == 3

    def test_eval_empty_split(self, dataset_file, tmp_path, capsys):
        ckpt = tmp_path / "g.npz"
        run_train(dataset_file, ckpt)
        code = cli.main(["eval", "--checkpoint", str(ckpt), "--split", "validation"])
        assert code == 1
        assert "no validation graphs" in capsys.readouterr().err

    def test_cmd_train_with_namespace(self, dataset_file, tmp_path):
        out = tmp_path / "base.npz"
        args = make_train_args(
            dataset=str(dataset_file), variant="base", n=2, k=2, q=2, hidden_dim=8, num_layers=2,
            iterations=1, val_tasks=2, out=str(out),
        )  # fmt: skip
        assert cli.cmd_train(args) == 0
        assert load_checkpoint(out).config.progress is False

    @patch("structshot.cli.save_checkpoint")
    @patch("structshot.cli.train")
    def test_cmd_train_passes_merged_config(self, mock_train, mock_save, tmp_path, capsys):
        """cmd_train trains on the file+flag config and saves to --out."""
        conf = tmp_path / "run.conf"
        conf.write_text("variant = base\nhidden_dim = 16\n")
        mock_train.return_value = MagicMock(loss_trace=[1.0, 0.5], best_val_acc=None)
        args = make_train_args(config=str(conf), dataset="d.jsonl", hidden_dim=8, out="run/x.npz")
        assert cli.cmd_train(args) == 0
        config = mock_train.call_args.args[0]
        assert (config.variant, config.hidden_dim, config.dataset) == ("base", 8, "d.jsonl")
        mock_save.assert_called_once_with(mock_train.return_value, "run/x.npz")
        assert "Trained base for 2 steps" in capsys.readouterr().out


class TestGradCheck:
    """Tests for grad-check."""

    def test_subset_passes(self, capsys):
        code = cli.main(["grad-check", "--seed", "7", "--points", "2", "--only", "primitive:mat"])
        out = capsys.readouterr().out
        assert code == 0
        assert "primitive:matmul" in out
        assert "primitive:matvec" in out
        assert "max relative error" in out

    def test_no_matching_cases(self, capsys):
        assert cli.main(["grad-check", "--only", "nothing:"]) == 1
        assert "no grad-check cases" in capsys.readouterr().err

    @patch("structshot.cli.run_grad_suite")
    def test_failing_case_exits_one(self, mock_suite, capsys):
        """A case above tolerance is reported and the exit status is 1."""
        mock_suite.return_value = [CheckResult("primitive:add", 0.0, 2), CheckResult("gin:layer", 0.5, 2)]
        assert cli.main(["grad-check", "--seed", "3", "--points", "2"]) == 1
        out = capsys.readouterr().out
        assert "gin:layer" in out
        assert "FAIL" in out
        mock_suite.assert_called_once_with(seed=3, points=2, only=None)


class TestStatsAndInspect:
    """Tests for stats and inspect."""

    def test_stats(self, dataset_file, capsys):
        assert cli.main(["stats", "--dataset", str(dataset_file)]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["train"]["classes"] == 3
        assert stats["test"]["graphs"] == 24
        assert stats["validation"]["graphs"] == 0

    def test_inspect_one_graph(self, dataset_file, small_dataset, tmp_path, capsys):
        ckpt = tmp_path / "g.npz"
        run_train(dataset_file, ckpt)
        capsys.readouterr()
        graph_id = small_dataset.train[0].id
        assert cli.main(["inspect", "--checkpoint", str(ckpt), "--graph-id", graph_id]) == 0
        out = json.loads(capsys.readouterr().out)
        assert list(out) == [graph_id]
        entry = out[graph_id][0]
        assert entry["branch"] == "global[learned]"
        assert len(entry["global"]) == 2
        assert entry["local"] is None

    def test_inspect_unknown_graph(self, dataset_file, tmp_path, capsys):
        ckpt = tmp_path / "g.npz"
        run_train(dataset_file, ckpt)
        assert cli.main(["inspect", "--checkpoint", str(ckpt), "--graph-id", "nope"]) == 1
        assert "no graph with id 'nope'" in capsys.readouterr().err


class TestLogging:
    """Tests for log setup."""

    def test_log_file(self, dataset_file, tmp_path):
        log = tmp_path / "train.log"
        code = cli.main(
            ["--log-file", str(log), "train", "--dataset", str(dataset_file), *TRAIN_FLAGS,
             "--out", str(tmp_path / "g.npz")]
        )  # fmt: skip
        assert code == 0
        assert "Training g" in log.read_text()
