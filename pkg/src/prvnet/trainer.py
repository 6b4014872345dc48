"""VAE-SGD training loop, KL annealing and the beta* selection / retraining procedure."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

import numpy as np

from . import numerics as nx
from .dataset import ChannelDataset
from .errors import ConfigurationError, ContractError, DimensionError, TrainingDivergedError
from .evaluator import TrainFn, awgn_noise, evaluate
from .models import AnnealSchedule, Architecture, CodecMode, TraceRecord, TrainConfig, TrainTrace
from .network import LossBreakdown, PRVNet, input_dropout, prvnet_loss
from .numerics import AdamState, Tensor, adam_step, rng_stream

LOGGER = logging.getLogger(__name__)

ModelFactory = Callable[[], PRVNet]


@dataclass
class TrainResult:
    model: PRVNet
    trace: TrainTrace
    schedule: AnnealSchedule
    best_state: Dict[str, np.ndarray]
    best_epoch: int
    best_nmse_db: float


@dataclass
class RetrainResult:
    model: PRVNet
    beta_star: float
    beta_star_nmse_db: float
    selection: TrainResult
    retrain: TrainResult


def beta_at(schedule: AnnealSchedule, update_index: int) -> float:
    """Linear ramp from beta_start to beta_end over ``total_updates``, then held."""
    if update_index < 0:
        raise ConfigurationError(f"update_index must be >= 0, got {update_index}")
    progress = min(1.0, update_index / float(schedule.total_updates or 1))
    return schedule.beta_start + (schedule.beta_end - schedule.beta_start) * progress


def select_beta_star(trace: TrainTrace) -> Tuple[float, float]:
    """Beta at the epoch with the lowest validation NMSE; ties go to the smaller beta."""
    if not trace.records:
        raise ContractError("cannot select beta* from an empty trace")
    best = min(trace.records, key=lambda record: (record.val_nmse_db, record.beta))
    return best.beta, best.val_nmse_db


def _check_shapes(model: PRVNet, dataset: ChannelDataset) -> None:
    for name in ("train", "val"):
        if dataset.split(name).shape[0] == 0:
            raise ConfigurationError(f"the {name} split is empty")
    if model.architecture.input_shape != dataset.samples.shape[1:]:
        raise DimensionError("model input shape does not match the dataset", model.architecture.input_shape, dataset.samples.shape[1:])


def _forward(
    model: PRVNet,
    x: Tensor,
    beta: float,
    cfg: TrainConfig,
    snr_db: Optional[float],
    rngs: Mapping[str, np.random.Generator],
) -> LossBreakdown:
    if model.mode is CodecMode.VARIATIONAL:
        distribution = model.encode(x)
        eps = rngs["epsilon"].standard_normal(distribution.mu.shape).astype(distribution.mu.value.dtype)
        z = model.reparameterize(distribution, eps).z
        if snr_db is not None and math.isfinite(snr_db):
            z = nx.add(z, awgn_noise(z.value, snr_db, rngs["noise"]))
        return prvnet_loss(x, model.decode(z), distribution, beta)

    if cfg.input_dropout > 0.0:
        x_in = input_dropout(x, cfg.input_dropout, rngs["dropout"])
    else:
        x_in = x
    codeword, x_hat = model.point_estimate_forward(x_in)
    if snr_db is not None and math.isfinite(snr_db):
        x_hat = model.decode(nx.add(codeword.z, awgn_noise(codeword.z.value, snr_db, rngs["noise"])))
    return prvnet_loss(x, x_hat, None, 0.0)


def train(
    model: PRVNet,
    dataset: ChannelDataset,
    cfg: TrainConfig,
    schedule: AnnealSchedule,
    snr_db: Optional[float] = None,
    phase: str = "train",
) -> TrainResult:
    """Mini-batch Adam on the beta-weighted objective with per-update annealing.

    The trace holds one record per epoch: epoch-mean reconstruction and KL terms, the beta in
    force at the end of the epoch, ``total = recon + beta * kl`` and the validation NMSE.
    """
    _check_shapes(model, dataset)
    train_x = dataset.split("train")
    n_train = train_x.shape[0]
    batches_per_epoch = math.ceil(n_train / cfg.batch_size)
    schedule = schedule.resolved(cfg.epochs * batches_per_epoch)
    state = AdamState(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rngs = {purpose: rng_stream(cfg.seed, purpose) for purpose in ("shuffle", "epsilon", "dropout", "noise")}
    trace = TrainTrace(phase=phase)

    update = 0
    frozen_beta: Optional[float] = None
    best_nmse, best_epoch, since_best = math.inf, 0, 0
    best_state = model.state()
    LOGGER.info(
        f"  [{phase}] {model.mode.value} M={model.latent_dim}, {n_train} samples, {cfg.epochs} epochs, "
        f"beta {schedule.beta_start:g}->{schedule.beta_end:g} over {schedule.total_updates} updates"
    )

    for epoch in range(1, cfg.epochs + 1):
        order = rngs["shuffle"].permutation(n_train)
        recon_sum = kl_sum = 0.0
        beta = schedule.beta_start
        for batch_index, start in enumerate(range(0, n_train, cfg.batch_size)):
            beta = frozen_beta if frozen_beta is not None else beta_at(schedule, update)
            batch = train_x[order[start : start + cfg.batch_size]]
            model.zero_grad()
            loss = _forward(model, Tensor(batch), beta, cfg, snr_db, rngs)
            value = loss.objective.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, batch_index, value)
            loss.objective.backward()
            adam_step(
                {name: param.value for name, param in model.params.items()},
                {name: param.grad for name, param in model.params.items()},
                state,
            )
            update += 1
            recon_sum += loss.recon * batch.shape[0]
            kl_sum += loss.kl * batch.shape[0]
            LOGGER.debug(f"    epoch {epoch} batch {batch_index}: beta={beta:.4f} loss={loss.total:.4f}")

        val_nmse = evaluate(model, dataset, None, split="val", seed=cfg.seed).nmse_db
        recon, kl = recon_sum / n_train, kl_sum / n_train
        trace.append(
            TraceRecord(
                epoch=epoch,
                beta=beta,
                recon_loss=recon,
                kl_loss=kl,
                total_loss=recon + beta * kl,
                val_nmse_db=val_nmse,
                timestamp=time.monotonic(),
            )
        )
        if val_nmse < best_nmse:
            best_nmse, best_epoch, since_best = val_nmse, epoch, 0
            best_state = model.state()
        else:
            since_best += 1
        if schedule.freeze_on_degradation and frozen_beta is None and since_best >= schedule.patience:
            frozen_beta = beta
            LOGGER.info(f"  [{phase}] validation stopped improving; holding beta at {beta:.4f}")
        if epoch == 1 or epoch == cfg.epochs or epoch % cfg.log_every == 0:
            LOGGER.info(f"  [{phase}] epoch {epoch}/{cfg.epochs}: beta={beta:.4f} recon={recon:.4f} kl={kl:.4f} val={val_nmse:.2f} dB")

    LOGGER.info(f"  ✓ [{phase}] best validation NMSE {best_nmse:.2f} dB at epoch {best_epoch}")
    return TrainResult(model, trace, schedule, best_state, best_epoch, best_nmse)


def train_with_channel_noise(model: PRVNet, dataset: ChannelDataset, cfg: TrainConfig, schedule: AnnealSchedule) -> TrainResult:
    """Like :func:`train`, but the sampled codeword crosses an AWGN link at ``cfg.train_snr_db``."""
    if cfg.train_snr_db is None:
        raise ConfigurationError("train_with_channel_noise needs train_snr_db")
    return train(model, dataset, cfg, schedule, snr_db=cfg.train_snr_db, phase="noisy")


def anneal_and_retrain(
    model_factory: ModelFactory,
    dataset: ChannelDataset,
    cfg: TrainConfig,
    schedule: Optional[AnnealSchedule] = None,
) -> RetrainResult:
    """Anneal 0 -> beta_end to find beta*, then retrain a fresh model annealed 0 -> beta* and held."""
    template = schedule or AnnealSchedule()
    snr_db = cfg.train_snr_db

    selection_schedule = template.model_copy(update={"beta_start": 0.0})
    selection = train(model_factory(), dataset, cfg, selection_schedule, snr_db=snr_db, phase="select")
    beta_star, beta_star_nmse = select_beta_star(selection.trace)
    LOGGER.info(f"  ✓ beta* = {beta_star:.4f} (validation {beta_star_nmse:.2f} dB)")

    retrain_schedule = template.model_copy(
        update={
            "beta_start": 0.0,
            "beta_end": beta_star,
            "freeze_on_degradation": False,
            "beta_star": beta_star,
            "beta_star_nmse_db": beta_star_nmse,
        }
    )
    retrain = train(model_factory(), dataset, cfg, retrain_schedule, snr_db=snr_db, phase="retrain")
    return RetrainResult(retrain.model, beta_star, beta_star_nmse, selection, retrain)


def model_trainer(
    cfg: TrainConfig,
    schedule: Optional[AnnealSchedule] = None,
    beta_fixed: Optional[float] = None,
    architecture_overrides: Optional[Dict[str, Any]] = None,
) -> TrainFn:
    """Training callable for the sweeps: ``(dataset, gamma, mode) -> trained model``.

    Point-estimate models train with beta fixed at 0; variational models use the anneal and
    retrain procedure unless ``beta_fixed`` is given.
    """
    overrides = dict(architecture_overrides or {})

    def run(dataset: ChannelDataset, gamma: float, mode: CodecMode) -> PRVNet:
        arch = Architecture.from_gamma(dataset.n_a, dataset.n_t, gamma, **{**overrides, "mode": mode})

        def factory() -> PRVNet:
            return PRVNet.initialize(arch, rng_stream(cfg.seed, "init"))

        if mode is CodecMode.POINT_ESTIMATE:
            return train(factory(), dataset, cfg, AnnealSchedule.fixed(0.0), snr_db=cfg.train_snr_db).model
        if beta_fixed is not None:
            return train(factory(), dataset, cfg, AnnealSchedule.fixed(beta_fixed), snr_db=cfg.train_snr_db).model
        return anneal_and_retrain(factory, dataset, cfg, schedule).model

    return run
