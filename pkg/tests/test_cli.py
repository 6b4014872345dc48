from __future__ import annotations

from pathlib import Path

from pytest_mock import MockerFixture
from typer.testing import CliRunner

from prvnet.cli import app
from prvnet.config import build_config
from prvnet.dataset import dataset_digest
from prvnet.models import RunManifest
from prvnet.pipeline import write_manifest

runner = CliRunner()


def test_gen_data_requires_out() -> None:
    result = runner.invoke(app, ["gen-data", "--count", "150"])
    assert result.exit_code == 2


def test_gen_data_prints_splits_and_is_reproducible(tmp_path: Path, tiny_config_file: Path) -> None:
    args = ["gen-data", "--count", "150", "--seed", "7", "--scenario", "indoor", "--config", str(tiny_config_file)]
    first = runner.invoke(app, args + ["--out", str(tmp_path / "a.bin")])
    assert first.exit_code == 0, first.output
    assert "100/30/20" in first.stdout
    second = runner.invoke(app, args + ["--out", str(tmp_path / "b.bin")])
    assert second.exit_code == 0
    assert dataset_digest(tmp_path / "a.bin") == dataset_digest(tmp_path / "b.bin")


def test_invalid_count_is_a_runtime_failure(tmp_path: Path) -> None:
    result = runner.invoke(app, ["gen-data", "--count", "5", "--out", str(tmp_path / "d.bin")])
    assert result.exit_code == 1


def test_train_then_eval(tmp_path: Path, tiny_config_file: Path) -> None:
    data = tmp_path / "d.bin"
    assert runner.invoke(app, ["gen-data", "--out", str(data), "--config", str(tiny_config_file)]).exit_code == 0
    out = tmp_path / "runs"
    trained = runner.invoke(app, ["train", "--data", str(data), "--gamma", "1/4", "--config", str(tiny_config_file), "--out-dir", str(out)])
    assert trained.exit_code == 0, trained.output
    assert "beta*:" in trained.stdout
    checkpoint = out / "train-indoor-seed5" / "model.ckpt"
    assert checkpoint.exists()

    swept = runner.invoke(
        app,
        ["eval", "--checkpoint", str(checkpoint), "--data", str(data), "--snr-sweep", "--config", str(tiny_config_file), "--out-dir", str(out)],
    )
    assert swept.exit_code == 0, swept.output
    table = [line for line in swept.stdout.strip().splitlines() if not line.startswith("note:")]
    assert table[0].split() == ["gamma", "scenario", "snr_db", "nmse_db", "n_samples", "model_id", "seed"]
    assert [line.split()[2] for line in table[1:]] == ["35", "32", "29", "26", "23"]

    clean = runner.invoke(app, ["eval", "--checkpoint", str(checkpoint), "--data", str(data), "--clean", "--out-dir", str(out)])
    assert clean.exit_code == 0
    rows = clean.stdout.strip().splitlines()[1:]
    assert len(rows) == 1 and rows[0].split()[2] == "clean"

    shown = runner.invoke(app, ["show-manifest", str(out / "train-indoor-seed5")])
    assert shown.exit_code == 0
    assert '"command": "train"' in shown.stdout


def test_missing_checkpoint_exits_one(tmp_path: Path) -> None:
    result = runner.invoke(app, ["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(tmp_path / "d.bin")])
    assert result.exit_code == 1
    assert "not found" in result.output


def test_paper_hyperparams_and_baseline_flags(mocker: MockerFixture, tmp_path: Path) -> None:
    runner_cls = mocker.patch("prvnet.cli.ExperimentRunner")
    runner_cls.return_value.train.return_value = RunManifest(command="train", config={}, started_at="now")
    result = runner.invoke(
        app,
        ["train", "--data", str(tmp_path / "d.bin"), "--paper-hyperparams", "--beta-fixed", "0", "--baseline", "point-estimate"],
    )
    assert result.exit_code == 0, result.output
    config = runner_cls.call_args[0][0]
    assert (config.train.learning_rate, config.train.epochs, config.train.batch_size) == (0.1, 1000, 128)
    assert config.model.beta_fixed == 0.0
    assert config.model.mode.value == "point-estimate"


def test_sweep_passes_parsed_gammas(mocker: MockerFixture, tmp_path: Path) -> None:
    runner_cls = mocker.patch("prvnet.cli.ExperimentRunner")
    runner_cls.return_value.sweep.return_value = RunManifest(command="sweep", config={}, started_at="now", report_paths=["r.csv"])
    data = [str(tmp_path / "in.bin"), str(tmp_path / "out.bin")]
    result = runner.invoke(app, ["sweep", "--data", data[0], "--data", data[1], "--gammas", "1/4,1/16,1/32,1/64", "--parallel", "2"])
    assert result.exit_code == 0, result.output
    paths, gammas, baseline, parallel = runner_cls.return_value.sweep.call_args[0]
    assert [str(p) for p in paths] == data
    assert gammas == [0.25, 1 / 16, 1 / 32, 1 / 64]
    assert (baseline, parallel) == (False, 2)
    assert "report: r.csv" in result.stdout


def test_rerun_never_overwrites_the_recorded_run(mocker: MockerFixture, tmp_path: Path) -> None:
    runner_cls = mocker.patch("prvnet.cli.ExperimentRunner")
    run_dir = tmp_path / "runs" / "train-indoor-seed1"
    snapshot = build_config(None, {"output_dir": tmp_path / "runs"}).snapshot()
    write_manifest(RunManifest(command="train", config=snapshot, started_at="now", arguments={"data": "d.bin"}), run_dir)

    assert runner.invoke(app, ["show-manifest", str(run_dir), "--rerun"]).exit_code == 0
    config, run_name = runner_cls.call_args[0]
    assert run_name == "train-indoor-seed1-rerun"
    assert config.output_dir == tmp_path / "runs"
    runner_cls.return_value.replay.assert_called_once()

    elsewhere = tmp_path / "again"
    assert runner.invoke(app, ["show-manifest", str(run_dir / "manifest.json"), "--rerun", "--out-dir", str(elsewhere)]).exit_code == 0
    config, run_name = runner_cls.call_args[0]
    assert (config.output_dir, run_name) == (elsewhere, "train-indoor-seed1")
