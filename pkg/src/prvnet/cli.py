"""CLI entry point for PRVNet experiments."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, TypeVar

import orjson
import typer

from .config import ExperimentConfig, build_config, config_from_snapshot
from .errors import PrvnetError
from .models import PAPER_HYPERPARAMS, CodecMode, Scenario
from .pipeline import ExperimentRunner, read_manifest

# Configure logging for console output
logging.basicConfig(
    level=logging.INFO,
    format="%(message)s",
    handlers=[logging.StreamHandler()],
)

app = typer.Typer(help="PRVNet CSI feedback compression CLI.")

T = TypeVar("T")


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Log per-batch progress.")) -> None:
    logging.getLogger().setLevel(logging.DEBUG if verbose else logging.INFO)


def _guard(action: Callable[[], T]) -> T:
    """Run ``action`` and turn domain and I/O failures into exit code 1."""
    try:
        return action()
    except (PrvnetError, OSError) as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(code=1) from exc


def _config(config_file: Optional[Path], overrides: Dict[str, Any]) -> ExperimentConfig:
    return _guard(lambda: build_config(config_file, overrides))


@app.command("gen-data")
def gen_data(
    out: Path = typer.Option(..., "--out", help="Dataset file to write (a .json sidecar is written next to it)."),
    count: Optional[int] = typer.Option(None, "--count", "-n", help="Number of channel realizations."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed."),
    scenario: Optional[Scenario] = typer.Option(None, "--scenario", help="Multipath preset."),
    workers: Optional[int] = typer.Option(None, "--workers", help="Threads used to synthesize channels."),
    config_file: Optional[Path] = typer.Option(None, "--config", help="TOML or JSON experiment config."),
) -> None:
    """Generate a synthetic angular-delay CSI dataset."""
    config = _config(config_file, {"data.count": count, "seed": seed, "scenario": scenario, "data.workers": workers})
    dataset = _guard(lambda: ExperimentRunner(config).generate_data(out))
    train_n, val_n, test_n = dataset.splits
    typer.echo(f"splits train/val/test: {train_n}/{val_n}/{test_n}")


@app.command()
def train(
    data: Path = typer.Option(..., "--data", help="Dataset file from gen-data."),
    gamma: Optional[str] = typer.Option(None, "--gamma", help="Compression ratio, e.g. 1/4 or 0.25."),
    epochs: Optional[int] = typer.Option(None, "--epochs", help="Training epochs per phase."),
    batch_size: Optional[int] = typer.Option(None, "--batch-size", help="Mini-batch size."),
    learning_rate: Optional[float] = typer.Option(None, "--lr", help="Adam learning rate."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed."),
    paper_hyperparams: bool = typer.Option(False, "--paper-hyperparams", help="Adam lr 0.1, 1000 epochs, batch 128."),
    beta_fixed: Optional[float] = typer.Option(None, "--beta-fixed", help="Train once with a constant beta instead of annealing."),
    baseline: Optional[CodecMode] = typer.Option(None, "--baseline", help="Set to point-estimate for the deterministic autoencoder."),
    train_snr: Optional[float] = typer.Option(None, "--train-snr", help="Inject AWGN on codewords during training (dB)."),
    freeze_on_degradation: Optional[bool] = typer.Option(
        None, "--freeze-on-degradation/--no-freeze-on-degradation", help="Hold beta once validation stops improving."
    ),
    config_file: Optional[Path] = typer.Option(None, "--config", help="TOML or JSON experiment config."),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", help="Output root (default: $PRVNET_OUT_DIR or ./runs)."),
    run_name: Optional[str] = typer.Option(None, "--run-name", help="Run directory name under the output root."),
) -> None:
    """Train a PRVNet (anneal to beta*, then retrain) or a fixed-beta / point-estimate model."""
    overrides: Dict[str, Any] = {}
    if paper_hyperparams:
        overrides.update({f"train.{key}": value for key, value in PAPER_HYPERPARAMS.items()})
    overrides.update(
        {
            "gamma": gamma,
            "seed": seed,
            "output_dir": out_dir,
            "train.epochs": epochs,
            "train.batch_size": batch_size,
            "train.learning_rate": learning_rate,
            "train.train_snr_db": train_snr,
            "model.beta_fixed": beta_fixed,
            "model.mode": baseline,
            "anneal.freeze_on_degradation": freeze_on_degradation,
        }
    )
    config = _config(config_file, overrides)
    manifest = _guard(lambda: ExperimentRunner(config, run_name).train(data))
    if manifest.beta_star is not None:
        typer.echo(f"beta*: {manifest.beta_star:.4f}")
    for path in manifest.checkpoint_paths:
        typer.echo(f"checkpoint: {path}")


@app.command("eval")
def evaluate(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Checkpoint written by train."),
    data: Path = typer.Option(..., "--data", help="Dataset file; the test split is evaluated."),
    snr_sweep: bool = typer.Option(False, "--snr-sweep", help="Evaluate across the SNR grid."),
    clean: bool = typer.Option(False, "--clean", help="Evaluate on a noiseless feedback link."),
    snr: Optional[float] = typer.Option(None, "--snr", help="Single feedback-link SNR in dB."),
    snrs: Optional[str] = typer.Option(None, "--snrs", help="Comma-separated SNR grid for --snr-sweep."),
    transmit: Optional[str] = typer.Option(None, "--transmit", help="mean (default) or sample."),
    nmse_reduction: Optional[str] = typer.Option(None, "--nmse-reduction", help="ratio (default) or mean_db."),
    plots: bool = typer.Option(False, "--plots", help="Write SVG figures."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed for channel noise."),
    config_file: Optional[Path] = typer.Option(None, "--config", help="TOML or JSON experiment config."),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", help="Output root."),
    run_name: Optional[str] = typer.Option(None, "--run-name", help="Run directory name under the output root."),
) -> None:
    """Evaluate a checkpoint and print the NMSE summary table."""
    grid = [float(part) for part in snrs.split(",") if part.strip()] if snrs else None
    overrides = {
        "seed": seed,
        "output_dir": out_dir,
        "channel.snr_db": snr,
        "eval.snrs": grid,
        "eval.transmit": transmit,
        "eval.nmse_reduction": nmse_reduction,
    }
    config = _config(config_file, overrides)
    outcome = _guard(lambda: ExperimentRunner(config, run_name).evaluate(checkpoint, data, snr_sweep, clean, plots))
    typer.echo(outcome.summary)
    for note in outcome.report.notes:
        typer.echo(f"note: {note}", err=True)


@app.command()
def sweep(
    data: List[Path] = typer.Option(..., "--data", help="Dataset file; repeat for several scenarios."),
    gammas: Optional[str] = typer.Option(None, "--gammas", help="Comma-separated compression ratios, e.g. 1/4,1/16."),
    baseline: bool = typer.Option(False, "--baseline", help="Pair every ratio with a point-estimate run and sweep SNR."),
    parallel: int = typer.Option(1, "--parallel", min=1, help="Independent runs executed at once."),
    epochs: Optional[int] = typer.Option(None, "--epochs", help="Training epochs per phase."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed."),
    config_file: Optional[Path] = typer.Option(None, "--config", help="TOML or JSON experiment config."),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", help="Output root."),
    run_name: Optional[str] = typer.Option(None, "--run-name", help="Run directory name under the output root."),
) -> None:
    """Train one model per (dataset, ratio) and aggregate the NMSE rows into one report."""
    config = _config(config_file, {"eval.gammas": gammas, "train.epochs": epochs, "seed": seed, "output_dir": out_dir})
    manifest = _guard(lambda: ExperimentRunner(config, run_name).sweep(data, config.eval.gammas, baseline, parallel))
    for path in manifest.report_paths:
        typer.echo(f"report: {path}")
    if manifest.failures:
        typer.echo(f"{len(manifest.failures)} run(s) failed; see the manifest", err=True)
        raise typer.Exit(code=1)


@app.command("show-manifest")
def show_manifest(
    path: Path = typer.Argument(..., help="manifest.json or its run directory."),
    rerun: bool = typer.Option(False, "--rerun", help="Re-execute the recorded run."),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", help="Output root for the re-run (default: the recorded root, as <name>-rerun)."),
) -> None:
    """Print a run manifest, optionally re-running it with its recorded configuration."""
    manifest = _guard(lambda: read_manifest(path))
    typer.echo(orjson.dumps(manifest.model_dump(mode="json"), option=orjson.OPT_INDENT_2).decode("utf-8"))
    if not rerun:
        return
    config = _guard(lambda: config_from_snapshot(manifest.config, {"output_dir": out_dir}))
    original_dir = path.parent if path.is_file() else path
    run_name = original_dir.name
    if (config.output_dir / run_name).resolve() == original_dir.resolve():
        run_name = f"{run_name}-rerun"
    _guard(lambda: ExperimentRunner(config, run_name).replay(manifest))


if __name__ == "__main__":
    app()
