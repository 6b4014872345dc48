"""Feedback-link noise, the NMSE metric and the evaluation sweeps."""

from __future__ import annotations

import logging
import math
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import ChannelDataset
from .errors import ConfigurationError, DimensionError
from .models import AwgnChannelConfig, CodecMode, NmseReport, NmseRow
from .network import PRVNet
from .numerics import Tensor, rng_stream

LOGGER = logging.getLogger(__name__)

PERFECT_NMSE_DB = -300.0
DEFAULT_SNR_GRID: Tuple[float, ...] = (35.0, 32.0, 29.0, 26.0, 23.0)
DEFAULT_GAMMAS: Tuple[float, ...] = (1 / 4, 1 / 16, 1 / 32, 1 / 64)
MONOTONE_TOLERANCE_DB = 0.2
NMSE_REDUCTIONS = ("ratio", "mean_db")

TrainFn = Callable[[ChannelDataset, float, CodecMode], PRVNet]


def awgn_noise(codewords: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise at ``snr_db`` below the batch's mean squared codeword element."""
    if codewords.size == 0:
        raise ConfigurationError("cannot add noise to an empty batch")
    power = float(np.mean(np.square(codewords, dtype=np.float64)))
    if power == 0.0:
        raise ConfigurationError("codeword batch has zero power; SNR is undefined")
    variance = power / 10.0 ** (snr_db / 10.0)
    return rng.normal(0.0, math.sqrt(variance), size=codewords.shape).astype(codewords.dtype)


def add_awgn(codewords: np.ndarray, cfg: AwgnChannelConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    if cfg.clean:
        return codewords.copy()
    rng = rng or rng_stream(cfg.seed, "noise")
    return codewords + awgn_noise(codewords, cfg.snr_db, rng)  # type: ignore[arg-type]


def per_sample_nmse(h: np.ndarray, h_hat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Squared-error ratios per sample and the mask of samples with a non-zero target."""
    if h.shape != h_hat.shape:
        raise DimensionError("target and reconstruction batches differ", h.shape, h_hat.shape)
    h = np.asarray(h, dtype=np.float64).reshape(h.shape[0], -1)
    h_hat = np.asarray(h_hat, dtype=np.float64).reshape(h_hat.shape[0], -1)
    power = np.sum(h * h, axis=1)
    error = np.sum((h - h_hat) ** 2, axis=1)
    valid = power > 0.0
    ratios = np.divide(error, power, out=np.zeros_like(error), where=valid)
    return ratios, valid


def _to_db(value: float) -> float:
    if value <= 0.0:
        return PERFECT_NMSE_DB
    return max(10.0 * math.log10(value), PERFECT_NMSE_DB)


def nmse_db(h: np.ndarray, h_hat: np.ndarray, reduction: str = "ratio") -> float:
    """10 log10 of the mean per-sample error ratio (``mean_db`` averages per-sample dB instead)."""
    if reduction not in NMSE_REDUCTIONS:
        raise ConfigurationError(f"unknown NMSE reduction {reduction!r}; expected one of {NMSE_REDUCTIONS}")
    ratios, valid = per_sample_nmse(h, h_hat)
    excluded = int(np.sum(~valid))
    if excluded:
        LOGGER.warning(f"  ⚠ {excluded} zero-norm sample(s) excluded from NMSE")
    if not valid.any():
        raise ConfigurationError("every target sample has zero norm; NMSE is undefined")
    if reduction == "ratio":
        return _to_db(float(np.mean(ratios[valid])))
    return float(np.mean([_to_db(float(ratio)) for ratio in ratios[valid]]))


def reconstruct(
    model: PRVNet,
    samples: np.ndarray,
    awgn: Optional[AwgnChannelConfig] = None,
    transmit: str = "mean",
    batch_size: int = 256,
    seed: int = 0,
) -> np.ndarray:
    """Normalized reconstructions after encoding, the optional noisy link and decoding."""
    if transmit not in {"mean", "sample"}:
        raise ConfigurationError(f"transmit must be 'mean' or 'sample', got {transmit!r}")
    noisy = awgn is not None and not awgn.clean
    noise_rng = rng_stream(awgn.seed, "noise") if noisy else None  # type: ignore[union-attr]
    sample_rng = rng_stream(seed, "epsilon") if transmit == "sample" else None
    outputs: List[np.ndarray] = []
    for start in range(0, samples.shape[0], batch_size):
        batch = Tensor(samples[start : start + batch_size])
        codewords = model.transmit(batch, sample=transmit == "sample", rng=sample_rng)
        if noisy:
            codewords = add_awgn(codewords, awgn, noise_rng)  # type: ignore[arg-type]
        outputs.append(model.decode(Tensor(codewords)).value.copy())
    return np.concatenate(outputs)


def evaluate(
    model: PRVNet,
    dataset: ChannelDataset,
    awgn: Optional[AwgnChannelConfig] = None,
    split: str = "test",
    transmit: str = "mean",
    reduction: str = "ratio",
    seed: int = 0,
    model_id: Optional[str] = None,
) -> NmseRow:
    samples = dataset.split(split)
    if samples.shape[0] == 0:
        raise ConfigurationError(f"the {split} split is empty")
    if model.architecture.input_shape != samples.shape[1:]:
        raise DimensionError("model input shape does not match the dataset", model.architecture.input_shape, samples.shape[1:])
    recon = reconstruct(model, samples, awgn, transmit=transmit, seed=seed)
    target = dataset.normalizer.denormalize(samples.astype(np.float64))
    estimate = dataset.normalizer.denormalize(recon.astype(np.float64))
    _, valid = per_sample_nmse(target, estimate)
    return NmseRow(
        gamma=model.gamma,
        scenario=dataset.scenario,
        snr_db=None if awgn is None or awgn.clean else awgn.snr_db,
        nmse_db=nmse_db(target, estimate, reduction=reduction),
        n_samples=int(samples.shape[0]),
        model_id=model_id or f"{model.mode.value}-{model.fingerprint()}",
        seed=seed,
        latent_dim=model.latent_dim,
        n_excluded=int(np.sum(~valid)),
    )


def is_non_decreasing(values: Sequence[float], tolerance: float) -> bool:
    return all(later >= earlier - tolerance for earlier, later in zip(values, values[1:]))


def snr_sweep(
    model: PRVNet,
    dataset: ChannelDataset,
    snrs: Iterable[float] = DEFAULT_SNR_GRID,
    include_clean: bool = False,
    seed: int = 0,
    model_id: Optional[str] = None,
    tolerance_db: float = MONOTONE_TOLERANCE_DB,
    **evaluate_kwargs: object,
) -> NmseReport:
    """One row per SNR; checks that NMSE does not improve as the link gets noisier."""
    model_id = model_id or f"{model.mode.value}-{model.fingerprint()}"
    report = NmseReport(seed=seed)
    if include_clean:
        report.rows.append(evaluate(model, dataset, None, seed=seed, model_id=model_id, **evaluate_kwargs))  # type: ignore[arg-type]
    ordered = sorted(snrs, reverse=True)
    noisy_rows = [
        evaluate(model, dataset, AwgnChannelConfig(snr_db=snr, seed=seed), seed=seed, model_id=model_id, **evaluate_kwargs)  # type: ignore[arg-type]
        for snr in ordered
    ]
    report.rows.extend(noisy_rows)
    report.monotone = is_non_decreasing([row.nmse_db for row in noisy_rows], tolerance_db)
    if not report.monotone:
        message = f"NMSE is not monotone in SNR for {model_id}: " + ", ".join(f"{row.snr_label} dB -> {row.nmse_db:.2f}" for row in noisy_rows)
        LOGGER.warning(f"  ⚠ {message}")
        report.notes.append(message)
    if include_clean and noisy_rows:
        clean = report.rows[0].nmse_db
        if any(row.nmse_db < clean - tolerance_db for row in noisy_rows):
            report.notes.append(f"clean NMSE {clean:.2f} dB does not lower-bound every noisy row")
    return report


def cr_sweep(
    train: TrainFn,
    dataset: ChannelDataset,
    gammas: Iterable[float] = DEFAULT_GAMMAS,
    seed: int = 0,
    tolerance_db: float = MONOTONE_TOLERANCE_DB,
    transmit: str = "mean",
    reduction: str = "ratio",
) -> NmseReport:
    """Train one model per compression ratio under a shared budget and evaluate on a clean link."""
    report = NmseReport(seed=seed)
    ordered = sorted(gammas, reverse=True)
    for gamma in ordered:
        LOGGER.info(f"  Compression ratio {gamma:.4g}: training...")
        model = train(dataset, gamma, CodecMode.VARIATIONAL)
        row = evaluate(model, dataset, None, transmit=transmit, reduction=reduction, seed=seed)
        LOGGER.info(f"  ✓ gamma={gamma:.4g} (M={row.latent_dim}): {row.nmse_db:.2f} dB")
        report.rows.append(row)
    report.monotone = is_non_decreasing([row.nmse_db for row in report.rows], tolerance_db)
    if not report.monotone:
        report.notes.append("NMSE improved as the compression ratio shrank")
    return report


def baseline_compare(
    dataset: ChannelDataset,
    train: TrainFn,
    gammas: Iterable[float] = (1 / 4,),
    snrs: Iterable[float] = DEFAULT_SNR_GRID,
    seed: int = 0,
    transmit: str = "mean",
    reduction: str = "ratio",
) -> NmseReport:
    """Paired point-estimate autoencoder vs annealed PRVNet rows for every (gamma, SNR) cell."""
    report = NmseReport(seed=seed)
    snrs = tuple(snrs)
    for gamma in sorted(gammas, reverse=True):
        results = {}
        for mode in (CodecMode.POINT_ESTIMATE, CodecMode.VARIATIONAL):
            LOGGER.info(f"  Training {mode.value} model for gamma={gamma:.4g}...")
            model = train(dataset, gamma, mode)
            sweep = snr_sweep(model, dataset, snrs, include_clean=True, seed=seed, transmit=transmit, reduction=reduction)
            report.extend(sweep)
            results[mode] = sweep.rows
        if snrs:
            worst = min(snrs)
            by_snr = {mode: {row.snr_db: row.nmse_db for row in rows} for mode, rows in results.items()}
            prv, base = by_snr[CodecMode.VARIATIONAL][worst], by_snr[CodecMode.POINT_ESTIMATE][worst]
            LOGGER.info(f"  ✓ gamma={gamma:.4g} at {worst:g} dB: PRVNet {prv:.2f} dB vs point-estimate {base:.2f} dB")
            if prv > base:
                report.notes.append(f"gamma={gamma:.4g}: point-estimate beat PRVNet at {worst:g} dB ({base:.2f} < {prv:.2f})")
    return report
