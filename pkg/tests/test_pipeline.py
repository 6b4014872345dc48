from __future__ import annotations

from pathlib import Path
from typing import Any, Dict

import pytest
from pytest_mock import MockerFixture

from prvnet.config import ExperimentConfig, build_config
from prvnet.dataset import ChannelDataset, dataset_digest
from prvnet.models import NmseReport, NmseRow, Scenario
from prvnet.pipeline import ExperimentRunner, _sweep_job, read_manifest, write_json_atomic


def _config(config_file: Path, out: Path) -> ExperimentConfig:
    return build_config(config_file, {"output_dir": out})


def _fake_job(snapshot: Dict[str, Any], data_path: str, gamma: float, baseline: bool) -> Dict[str, Any]:
    row = NmseRow(gamma=gamma, scenario=Scenario.INDOOR, nmse_db=-40.0 * gamma, n_samples=6, model_id="variational-x", seed=5)
    return NmseReport(rows=[row], seed=5).model_dump(mode="json")


def test_atomic_json_write(tmp_path: Path) -> None:
    path = write_json_atomic(tmp_path / "nested" / "m.json", {"b": 1, "a": [1, 2]})
    assert path.read_text(encoding="utf-8").startswith("{")
    assert sorted(p.name for p in path.parent.iterdir()) == ["m.json"]


def test_generate_train_and_evaluate(tmp_path: Path, tiny_config_file: Path) -> None:
    runner = ExperimentRunner(_config(tiny_config_file, tmp_path / "runs"))
    data = tmp_path / "tiny.bin"
    dataset = runner.generate_data(data)
    assert dataset.splits == (30, 9, 6)

    manifest = runner.train(data)
    run_dir = tmp_path / "runs" / "train-indoor-seed5"
    assert manifest.beta_star is not None and manifest.beta_star_nmse_db is not None
    assert [Path(p).name for p in manifest.trace_paths] == ["trace_select.csv", "trace_retrain.csv"]
    assert [Path(p).name for p in manifest.checkpoint_paths] == ["model.ckpt", "best.ckpt"]
    assert (run_dir / "config.json").exists()
    recorded = read_manifest(run_dir)
    assert recorded.dataset_hash == manifest.dataset_hash and recorded.arguments == {"data": str(data)}

    outcome = runner.evaluate(run_dir / "model.ckpt", data, sweep_snr=True, clean=True, plots=True)
    assert len(outcome.report.rows) == 6
    assert outcome.summary.splitlines()[0].split()[0] == "gamma"
    assert [chart.name for chart in outcome.charts] == ["nmse_vs_snr.svg"]
    training_report = (run_dir / "report.md").read_text(encoding="utf-8")
    assert f"Selected beta*: **{manifest.beta_star:.4f}**" in training_report
    assert str(run_dir / "report.md") in manifest.report_paths
    assert (tmp_path / "runs" / "eval-indoor-seed5" / "report.md").exists()


def test_replay_reproduces_checkpoint_and_report(tmp_path: Path, tiny_config_file: Path) -> None:
    runner = ExperimentRunner(_config(tiny_config_file, tmp_path / "first"), run_name="r")
    data = tmp_path / "tiny.bin"
    runner.generate_data(data)
    manifest = runner.train(data)

    replayed = ExperimentRunner(_config(tiny_config_file, tmp_path / "second"), run_name="r").replay(manifest)
    assert replayed.beta_star == manifest.beta_star
    original = (tmp_path / "first" / "r" / "model.ckpt").read_bytes()
    assert (tmp_path / "second" / "r" / "model.ckpt").read_bytes() == original

    ExperimentRunner(_config(tiny_config_file, tmp_path / "first"), run_name="e").evaluate(
        tmp_path / "first" / "r" / "model.ckpt", data, sweep_snr=True, clean=True
    )
    recorded = read_manifest(tmp_path / "first" / "e")
    ExperimentRunner(_config(tiny_config_file, tmp_path / "second"), run_name="e").replay(recorded)
    first_report = (tmp_path / "first" / "e" / "report.csv").read_bytes()
    assert (tmp_path / "second" / "e" / "report.csv").read_bytes() == first_report


def test_sweep_aggregates_in_job_order(mocker: MockerFixture, tmp_path: Path, tiny_config_file: Path) -> None:
    mocker.patch("prvnet.pipeline._sweep_job", side_effect=_fake_job)
    runner = ExperimentRunner(_config(tiny_config_file, tmp_path), run_name="s")
    manifest = runner.sweep([tmp_path / "d.bin"], [1 / 64, 1 / 4, 1 / 16])
    assert manifest.status == "complete" and not manifest.failures
    lines = (tmp_path / "s" / "report.csv").read_text(encoding="utf-8").splitlines()
    assert [line.split(",")[0] for line in lines[1:]] == ["1/4", "1/16", "1/64"]
    assert (tmp_path / "s" / "run-02" / "manifest.json").exists()
    assert read_manifest(tmp_path / "s").arguments["gammas"] == [1 / 64, 1 / 4, 1 / 16]


def test_sweep_keeps_completed_runs_on_failure(mocker: MockerFixture, tmp_path: Path, tiny_config_file: Path) -> None:
    outcomes = [_fake_job({}, "d", 0.25, False), RuntimeError("diverged"), _fake_job({}, "d", 1 / 64, False)]
    mocker.patch("prvnet.pipeline._sweep_job", side_effect=outcomes)
    manifest = ExperimentRunner(_config(tiny_config_file, tmp_path), run_name="s").sweep([tmp_path / "d.bin"], [1 / 4, 1 / 16, 1 / 64])
    assert manifest.status == "partial"
    assert len(manifest.failures) == 1 and "diverged" in manifest.failures[0]
    lines = (tmp_path / "s" / "report.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 3
    assert "## Failed Runs" in (tmp_path / "s" / "report.md").read_text(encoding="utf-8")


def test_interrupted_sweep_is_marked_incomplete(mocker: MockerFixture, tmp_path: Path, tiny_config_file: Path) -> None:
    mocker.patch("prvnet.pipeline._sweep_job", side_effect=[_fake_job({}, "d", 0.25, False), KeyboardInterrupt()])
    runner = ExperimentRunner(_config(tiny_config_file, tmp_path), run_name="s")
    with pytest.raises(KeyboardInterrupt):
        runner.sweep([tmp_path / "d.bin"], [1 / 4, 1 / 16])
    assert read_manifest(tmp_path / "s").status == "incomplete"
    lines = (tmp_path / "s" / "report.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2


def test_sweep_job_uses_configured_evaluation(mocker: MockerFixture, tmp_path: Path, tiny_config_file: Path, tiny_dataset: ChannelDataset) -> None:
    data = tiny_dataset.save(tmp_path / "tiny.bin")
    config = build_config(tiny_config_file, {"output_dir": tmp_path, "eval.transmit": "sample", "eval.nmse_reduction": "mean_db"})
    report = NmseReport(seed=5)
    cr = mocker.patch("prvnet.pipeline.cr_sweep", return_value=report)
    compare = mocker.patch("prvnet.pipeline.baseline_compare", return_value=report)

    payload = _sweep_job(config.snapshot(), str(data), 0.25, False)
    assert cr.call_args.kwargs["transmit"] == "sample" and cr.call_args.kwargs["reduction"] == "mean_db"
    assert payload["dataset_hash"] == dataset_digest(data)

    _sweep_job(config.snapshot(), str(data), 0.25, True)
    assert compare.call_args.kwargs["transmit"] == "sample" and compare.call_args.kwargs["reduction"] == "mean_db"


def test_sweep_report_carries_the_dataset_hash(mocker: MockerFixture, tmp_path: Path, tiny_config_file: Path) -> None:
    def hashed_job(snapshot: Dict[str, Any], data_path: str, gamma: float, baseline: bool) -> Dict[str, Any]:
        return {**_fake_job(snapshot, data_path, gamma, baseline), "dataset_hash": "ab" * 32}

    mocker.patch("prvnet.pipeline._sweep_job", side_effect=hashed_job)
    ExperimentRunner(_config(tiny_config_file, tmp_path), run_name="s").sweep([tmp_path / "d.bin"], [1 / 4, 1 / 16])
    assert f"`{'ab' * 8}`" in (tmp_path / "s" / "report.md").read_text(encoding="utf-8")


def test_parallel_sweep_matches_serial_sweep(tmp_path: Path, tiny_config_file: Path) -> None:
    config = _config(tiny_config_file, tmp_path / "runs")
    data = tmp_path / "tiny.bin"
    ExperimentRunner(config).generate_data(data)

    serial = ExperimentRunner(config, run_name="serial").sweep([data], [1 / 4, 1 / 16])
    parallel = ExperimentRunner(config, run_name="parallel").sweep([data], [1 / 4, 1 / 16], parallel=2)
    assert serial.status == parallel.status == "complete"
    serial_rows = (tmp_path / "runs" / "serial" / "report.csv").read_bytes()
    assert (tmp_path / "runs" / "parallel" / "report.csv").read_bytes() == serial_rows
