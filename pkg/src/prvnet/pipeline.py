"""Experiment orchestration: dataset generation, training, evaluation, sweeps and run manifests."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import UTC, datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import orjson

from .config import ExperimentConfig
from .dataset import ChannelDataset, build_dataset, dataset_digest
from .errors import ContractError
from .evaluator import MONOTONE_TOLERANCE_DB, baseline_compare, cr_sweep, evaluate, is_non_decreasing, snr_sweep
from .models import AnnealSchedule, CodecMode, NmseReport, RunManifest, Scenario
from .network import PRVNet, load_checkpoint, save_checkpoint
from .numerics import rng_stream
from .report import (
    export_report_csv,
    export_trace_csv,
    plot_nmse_vs_compression,
    plot_nmse_vs_snr,
    render_markdown_report,
    render_summary_table,
)
from .trainer import anneal_and_retrain, model_trainer, train, train_with_channel_noise

LOGGER = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _now() -> str:
    return datetime.now(UTC).isoformat(timespec="seconds")


def write_json_atomic(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(orjson.dumps(payload, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
    os.replace(tmp, path)
    return path


def write_manifest(manifest: RunManifest, run_dir: Path) -> Path:
    return write_json_atomic(run_dir / MANIFEST_NAME, manifest.model_dump(mode="json"))


def read_manifest(path: Path) -> RunManifest:
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    return RunManifest.model_validate(orjson.loads(path.read_bytes()))


@dataclass
class EvalOutcome:
    report: NmseReport
    summary: str
    report_path: Path
    charts: List[Path] = field(default_factory=list)


def _sweep_job(snapshot: Dict[str, Any], data_path: str, gamma: float, baseline: bool) -> Dict[str, Any]:
    """One (dataset, gamma) cell of a sweep; module level so worker processes can run it."""
    config = ExperimentConfig.model_validate(snapshot)
    dataset = ChannelDataset.load(Path(data_path))
    trainer_fn = model_trainer(
        config.train,
        config.anneal,
        beta_fixed=config.model.beta_fixed,
        architecture_overrides=config.architecture_overrides(),
    )
    options = {"transmit": config.eval.transmit, "reduction": config.eval.nmse_reduction}
    if baseline:
        report = baseline_compare(dataset, trainer_fn, gammas=[gamma], snrs=config.eval.snrs, seed=config.seed, **options)
    else:
        report = cr_sweep(trainer_fn, dataset, gammas=[gamma], seed=config.seed, **options)
    report.dataset_hash = dataset_digest(Path(data_path))
    return report.model_dump(mode="json")


class ExperimentRunner:
    def __init__(self, config: ExperimentConfig, run_name: Optional[str] = None) -> None:
        self.config = config
        self.run_name = run_name

    def _run_dir(self, command: str) -> Path:
        name = self.run_name or f"{command}-{self.config.scenario.value}-seed{self.config.seed}"
        run_dir = self.config.output_dir / name
        run_dir.mkdir(parents=True, exist_ok=True)
        write_json_atomic(run_dir / "config.json", self.config.snapshot())
        return run_dir

    def _manifest(self, command: str, arguments: Dict[str, Any], data_path: Optional[Path] = None) -> RunManifest:
        return RunManifest(
            command=command,
            config=self.config.snapshot(),
            dataset_path=str(data_path) if data_path else None,
            dataset_hash=dataset_digest(data_path) if data_path and data_path.exists() else None,
            started_at=_now(),
            arguments=arguments,
        )

    def generate_data(self, out: Path) -> ChannelDataset:
        LOGGER.info("=" * 60)
        LOGGER.info("PRVNet channel dataset generation")
        LOGGER.info("=" * 60)
        params = self.config.multipath_params()
        dataset = build_dataset(params, self.config.data.count, self.config.seed, workers=self.config.data.workers)
        dataset.save(out)
        train_n, val_n, test_n = dataset.splits
        LOGGER.info(f"✓ Wrote {out} ({dataset.count} channels, {dataset.n_a}x{dataset.n_t} angular-delay)")
        LOGGER.info(f"  - splits train/val/test: {train_n}/{val_n}/{test_n}")
        LOGGER.info(f"  - normalization range: [{dataset.normalizer.minimum:.4f}, {dataset.normalizer.maximum:.4f}]")
        return dataset

    def train(self, data_path: Path) -> RunManifest:
        started = time.monotonic()
        run_dir = self._run_dir("train")
        manifest = self._manifest("train", {"data": str(data_path)}, data_path)
        config = self.config

        LOGGER.info("=" * 60)
        LOGGER.info("PRVNet training")
        LOGGER.info("=" * 60)
        LOGGER.info("📚 Phase 1: Loading dataset...")
        dataset = ChannelDataset.load(data_path)
        LOGGER.info(f"✓ {dataset.count} channels ({dataset.scenario.value}), splits {dataset.splits}")

        arch = config.architecture(dataset.n_a, dataset.n_t)

        def factory() -> PRVNet:
            return PRVNet.initialize(arch, rng_stream(config.seed, "init"))

        LOGGER.info(f"🏋 Phase 2: Training {arch.mode.value} model (M={arch.latent_dim}, gamma={arch.gamma:.4g})...")
        traces: List[Tuple[str, Any]] = []
        best_state = None
        if arch.mode is CodecMode.POINT_ESTIMATE or config.model.beta_fixed is not None:
            beta = 0.0 if arch.mode is CodecMode.POINT_ESTIMATE else float(config.model.beta_fixed)  # type: ignore[arg-type]
            schedule = AnnealSchedule.fixed(beta)
            if config.train.train_snr_db is not None:
                result = train_with_channel_noise(factory(), dataset, config.train, schedule)
            else:
                result = train(factory(), dataset, config.train, schedule)
            model, best_state = result.model, result.best_state
            traces.append(("trace", result.trace))
        else:
            retrain = anneal_and_retrain(factory, dataset, config.train, config.anneal)
            model, best_state = retrain.model, retrain.retrain.best_state
            manifest.beta_star = retrain.beta_star
            manifest.beta_star_nmse_db = retrain.beta_star_nmse_db
            traces.append(("trace_select", retrain.selection.trace))
            traces.append(("trace_retrain", retrain.retrain.trace))

        LOGGER.info("📊 Phase 3: Writing artifacts...")
        manifest.checkpoint_paths.append(str(save_checkpoint(model, run_dir / "model.ckpt")))
        best = factory()
        best.load_state(best_state)
        manifest.checkpoint_paths.append(str(save_checkpoint(best, run_dir / "best.ckpt")))
        for stem, trace in traces:
            manifest.trace_paths.append(str(export_trace_csv(trace, run_dir / f"{stem}.csv")))
        options = {"transmit": config.eval.transmit, "reduction": config.eval.nmse_reduction}
        summary = NmseReport(seed=config.seed, dataset_hash=manifest.dataset_hash, rows=[evaluate(model, dataset, None, seed=config.seed, **options)])
        report_md = run_dir / "report.md"
        report_md.write_text(render_markdown_report(summary, "PRVNet Training Report", beta_star=manifest.beta_star), encoding="utf-8")
        manifest.report_paths.append(str(report_md))

        manifest.duration_s = time.monotonic() - started
        write_manifest(manifest, run_dir)
        LOGGER.info("=" * 60)
        LOGGER.info("✅ Training complete!")
        LOGGER.info(f"  📁 Run directory: {run_dir}")
        if manifest.beta_star is not None:
            LOGGER.info(f"  📈 beta* = {manifest.beta_star:.4f} ({manifest.beta_star_nmse_db:.2f} dB on validation)")
        LOGGER.info("=" * 60)
        return manifest

    def evaluate(
        self,
        checkpoint: Path,
        data_path: Path,
        sweep_snr: bool = False,
        clean: bool = False,
        plots: bool = False,
    ) -> EvalOutcome:
        started = time.monotonic()
        run_dir = self._run_dir("eval")
        arguments = {"checkpoint": str(checkpoint), "data": str(data_path), "snr_sweep": sweep_snr, "clean": clean, "plots": plots}
        manifest = self._manifest("eval", arguments, data_path)
        config = self.config

        model = load_checkpoint(checkpoint)
        dataset = ChannelDataset.load(data_path)
        model_id = f"{model.mode.value}-{model.fingerprint()}"
        options = {"transmit": config.eval.transmit, "reduction": config.eval.nmse_reduction}
        LOGGER.info(f"🔎 Evaluating {model_id} on {dataset.split('test').shape[0]} test channels...")
        if sweep_snr:
            report = snr_sweep(model, dataset, config.eval.snrs, include_clean=clean, seed=config.seed, model_id=model_id, **options)
        else:
            channel = None if clean else config.channel
            report = NmseReport(seed=config.seed, rows=[evaluate(model, dataset, channel, seed=config.seed, model_id=model_id, **options)])
        report.dataset_hash = manifest.dataset_hash

        report_path = export_report_csv(report, run_dir / "report.csv")
        charts = [chart for chart in ([plot_nmse_vs_snr(report, run_dir)] if plots else []) if chart is not None]
        (run_dir / "report.md").write_text(render_markdown_report(report, "PRVNet Evaluation Report", charts), encoding="utf-8")
        manifest.checkpoint_paths.append(str(checkpoint))
        manifest.report_paths.extend([str(report_path)] + [str(chart) for chart in charts])
        manifest.duration_s = time.monotonic() - started
        write_manifest(manifest, run_dir)
        return EvalOutcome(report, render_summary_table(report), report_path, charts)

    def sweep(self, data_paths: Sequence[Path], gammas: Sequence[float], baseline: bool = False, parallel: int = 1) -> RunManifest:
        started = time.monotonic()
        run_dir = self._run_dir("sweep")
        arguments = {"data": [str(path) for path in data_paths], "gammas": list(gammas), "baseline": baseline, "parallel": parallel}
        manifest = self._manifest("sweep", arguments, data_paths[0] if len(data_paths) == 1 else None)
        snapshot = self.config.snapshot()
        jobs = [(str(path), float(gamma)) for path in data_paths for gamma in sorted(gammas, reverse=True)]
        results: Dict[int, NmseReport] = {}
        report_path = run_dir / "report.csv"

        LOGGER.info("=" * 60)
        LOGGER.info(f"PRVNet sweep: {len(jobs)} run(s){' with baseline' if baseline else ''}")
        LOGGER.info("=" * 60)

        def record(index: int, payload: Dict[str, Any]) -> None:
            results[index] = NmseReport.model_validate(payload)
            write_manifest(
                RunManifest(
                    command="sweep-run",
                    config=snapshot,
                    dataset_path=jobs[index][0],
                    started_at=manifest.started_at,
                    arguments={"gamma": jobs[index][1], "baseline": baseline},
                ),
                run_dir / f"run-{index:02d}",
            )
            export_report_csv(self._aggregate(results), report_path)

        try:
            if parallel > 1:
                with ProcessPoolExecutor(max_workers=parallel) as pool:
                    futures = {pool.submit(_sweep_job, snapshot, path, gamma, baseline): index for index, (path, gamma) in enumerate(jobs)}
                    for future, index in futures.items():
                        try:
                            record(index, future.result())
                        except Exception as exc:  # noqa: BLE001
                            self._fail(manifest, jobs[index], exc)
            else:
                for index, (path, gamma) in enumerate(jobs):
                    try:
                        record(index, _sweep_job(snapshot, path, gamma, baseline))
                    except Exception as exc:  # noqa: BLE001
                        self._fail(manifest, jobs[index], exc)
        except KeyboardInterrupt:
            manifest.status = "incomplete"
            LOGGER.warning(f"⚠ Sweep interrupted after {len(results)}/{len(jobs)} run(s); completed rows kept")
            raise
        finally:
            aggregate = self._aggregate(results)
            aggregate.dataset_hash = aggregate.dataset_hash or manifest.dataset_hash
            export_report_csv(aggregate, report_path)
            charts = [chart for chart in (plot_nmse_vs_compression(aggregate, run_dir), plot_nmse_vs_snr(aggregate, run_dir)) if chart is not None]
            markdown = render_markdown_report(aggregate, "PRVNet Sweep Report", charts, failures=manifest.failures)
            (run_dir / "report.md").write_text(markdown, encoding="utf-8")
            if manifest.status == "complete" and manifest.failures:
                manifest.status = "partial"
            manifest.report_paths = [str(report_path)] + [str(chart) for chart in charts]
            manifest.duration_s = time.monotonic() - started
            write_manifest(manifest, run_dir)

        LOGGER.info("=" * 60)
        LOGGER.info(f"✅ Sweep {manifest.status}: {len(results)}/{len(jobs)} run(s)")
        LOGGER.info(f"  📁 Report: {report_path}")
        LOGGER.info("=" * 60)
        return manifest

    @staticmethod
    def _fail(manifest: RunManifest, job: Tuple[str, float], exc: Exception) -> None:
        message = f"{job[0]} gamma={job[1]:.4g}: {type(exc).__name__}: {exc}"
        LOGGER.warning(f"⚠ Run failed: {message}")
        manifest.failures.append(message)

    @staticmethod
    def _aggregate(results: Dict[int, NmseReport]) -> NmseReport:
        aggregate = NmseReport()
        for index in sorted(results):
            aggregate.seed = results[index].seed
            aggregate.extend(results[index])
        hashes = {report.dataset_hash for report in results.values()}
        if len(hashes) == 1:
            aggregate.dataset_hash = hashes.pop()
        by_scenario: Dict[Scenario, List[Tuple[float, float]]] = {}
        for row in aggregate.rows:
            if row.snr_db is None and row.model_id.startswith(CodecMode.VARIATIONAL.value):
                by_scenario.setdefault(row.scenario, []).append((row.gamma, row.nmse_db))
        trends = [is_non_decreasing([nmse for _, nmse in sorted(points, reverse=True)], MONOTONE_TOLERANCE_DB) for points in by_scenario.values()]
        if trends:
            aggregate.monotone = all(trends)
        return aggregate

    def replay(self, manifest: RunManifest) -> Any:
        """Re-execute a recorded run with its stored configuration and arguments."""
        args = manifest.arguments
        if manifest.command == "train":
            return self.train(Path(args["data"]))
        if manifest.command == "eval":
            return self.evaluate(Path(args["checkpoint"]), Path(args["data"]), args["snr_sweep"], args["clean"], args["plots"])
        if manifest.command == "sweep":
            return self.sweep([Path(path) for path in args["data"]], args["gammas"], args["baseline"], args["parallel"])
        raise ContractError(f"manifest command {manifest.command!r} cannot be replayed")
