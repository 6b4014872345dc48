from __future__ import annotations

import math

import numpy as np
import pytest
from pytest_mock import MockerFixture

from prvnet.dataset import ChannelDataset
from prvnet.errors import ConfigurationError, ContractError, DimensionError, TrainingDivergedError
from prvnet.evaluator import awgn_noise
from prvnet.models import AnnealSchedule, Architecture, CodecMode, TraceRecord, TrainConfig, TrainTrace
from prvnet.network import LossBreakdown, PRVNet
from prvnet.numerics import Tensor, rng_stream
from prvnet.trainer import (
    anneal_and_retrain,
    beta_at,
    model_trainer,
    select_beta_star,
    train,
    train_with_channel_noise,
)


def _factory(arch: Architecture, seed: int = 0):  # type: ignore[no-untyped-def]
    return lambda: PRVNet.initialize(arch, rng_stream(seed, "init"))


def _record(epoch: int, beta: float, val: float) -> TraceRecord:
    return TraceRecord(epoch=epoch, beta=beta, recon_loss=1.0, kl_loss=1.0, total_loss=1.0 + beta, val_nmse_db=val, timestamp=0.0)


def test_beta_ramp_is_linear_then_held() -> None:
    schedule = AnnealSchedule(beta_start=0.0, beta_end=1.0, total_updates=10)
    assert beta_at(schedule, 0) == 0.0
    assert beta_at(schedule, 5) == pytest.approx(0.5)
    assert beta_at(schedule, 10) == pytest.approx(1.0)
    assert beta_at(schedule, 25) == pytest.approx(1.0)
    assert schedule.increment == pytest.approx(0.1)
    with pytest.raises(ConfigurationError):
        beta_at(schedule, -1)


def test_schedule_resolves_from_run_length() -> None:
    assert AnnealSchedule().resolved(100).total_updates == 50
    assert AnnealSchedule(total_updates=7).resolved(100).total_updates == 7
    assert AnnealSchedule.fixed(0.4).resolved(100).beta_end == 0.4
    with pytest.raises(ValueError):
        AnnealSchedule(beta_start=1.0, beta_end=0.5)


def test_beta_star_prefers_lowest_validation_then_smaller_beta() -> None:
    trace = TrainTrace(records=[_record(1, 0.1, -8.0), _record(2, 0.4, -10.0), _record(3, 0.2, -10.0), _record(4, 0.9, -9.0)])
    assert select_beta_star(trace) == (0.2, -10.0)
    with pytest.raises(ContractError):
        select_beta_star(TrainTrace())


def test_overfits_ten_samples_without_kl(tiny_arch: Architecture, tiny_dataset: ChannelDataset) -> None:
    dataset = tiny_dataset.subset(10, 3, 2)
    arch = tiny_arch.model_copy(update={"mode": CodecMode.POINT_ESTIMATE})
    cfg = TrainConfig(batch_size=10, epochs=500, learning_rate=5e-3, weight_decay=0.0, log_every=100)
    result = train(PRVNet.initialize(arch, rng_stream(0, "init")), dataset, cfg, AnnealSchedule.fixed(0.0))
    initial = result.trace.records[0].recon_loss
    assert result.trace.records[-1].recon_loss < 0.01 * initial


def test_trace_follows_the_annealing_schedule(tiny_arch: Architecture, tiny_dataset: ChannelDataset) -> None:
    cfg = TrainConfig(batch_size=10, epochs=4)
    result = train(_factory(tiny_arch)(), tiny_dataset, cfg, AnnealSchedule())
    assert result.schedule.total_updates == 6
    betas = [record.beta for record in result.trace.records]
    assert betas == pytest.approx([2 / 6, 5 / 6, 1.0, 1.0])
    for record in result.trace.records:
        assert record.total_loss == pytest.approx(record.recon_loss + record.beta * record.kl_loss)
        assert record.kl_loss >= 0.0
    assert result.best_nmse_db == min(record.val_nmse_db for record in result.trace.records)


def test_training_is_deterministic(tiny_arch: Architecture, tiny_dataset: ChannelDataset) -> None:
    cfg = TrainConfig(batch_size=16, epochs=2, seed=3)
    first = train(_factory(tiny_arch, 3)(), tiny_dataset, cfg, AnnealSchedule())
    second = train(_factory(tiny_arch, 3)(), tiny_dataset, cfg, AnnealSchedule())
    assert first.model.fingerprint() == second.model.fingerprint()
    strip = lambda trace: [record.model_dump(exclude={"timestamp"}) for record in trace.records]  # noqa: E731
    assert strip(first.trace) == strip(second.trace)


def test_freeze_holds_beta_after_degradation(mocker: MockerFixture, tiny_arch: Architecture, tiny_dataset: ChannelDataset) -> None:
    scores = [-10.0, -5.0, -4.0, -3.0, -2.0]
    mocker.patch("prvnet.trainer.evaluate", side_effect=[mocker.Mock(nmse_db=score) for score in scores])
    schedule = AnnealSchedule(total_updates=15, freeze_on_degradation=True, patience=1)
    result = train(_factory(tiny_arch)(), tiny_dataset, TrainConfig(batch_size=10, epochs=5), schedule)
    betas = [record.beta for record in result.trace.records]
    assert betas == pytest.approx([2 / 15, 5 / 15, 5 / 15, 5 / 15, 5 / 15])
    assert result.best_epoch == 1


def test_non_finite_loss_aborts(mocker: MockerFixture, tiny_arch: Architecture, tiny_dataset: ChannelDataset) -> None:
    mocker.patch(
        "prvnet.trainer.prvnet_loss",
        return_value=LossBreakdown(objective=Tensor(np.nan), recon=float("nan"), kl=0.0, beta=0.0),
    )
    with pytest.raises(TrainingDivergedError) as excinfo:
        train(_factory(tiny_arch)(), tiny_dataset, TrainConfig(epochs=1), AnnealSchedule.fixed(0.0))
    assert (excinfo.value.epoch, excinfo.value.batch) == (1, 0)


def test_shape_mismatch(tiny_dataset: ChannelDataset) -> None:
    arch = Architecture.from_gamma(4, 8, 0.25, encoder_channels=(2,), decoder_channels=(2,))
    with pytest.raises(DimensionError):
        train(PRVNet.initialize(arch, rng_stream(0, "init")), tiny_dataset, TrainConfig(epochs=1), AnnealSchedule())


def test_anneal_and_retrain_uses_selected_beta(tiny_arch: Architecture, tiny_dataset: ChannelDataset) -> None:
    result = anneal_and_retrain(_factory(tiny_arch), tiny_dataset, TrainConfig(batch_size=16, epochs=3))
    assert result.beta_star == select_beta_star(result.selection.trace)[0]
    assert result.retrain.schedule.beta_end == result.beta_star
    assert result.retrain.schedule.beta_star == result.beta_star
    assert result.selection.trace.phase == "select" and result.retrain.trace.phase == "retrain"
    assert result.model is result.retrain.model
    assert all(record.beta <= result.beta_star + 1e-12 for record in result.retrain.trace.records)


def test_noisy_training(tiny_arch: Architecture, tiny_dataset: ChannelDataset) -> None:
    with pytest.raises(ConfigurationError):
        train_with_channel_noise(_factory(tiny_arch)(), tiny_dataset, TrainConfig(epochs=1), AnnealSchedule())
    cfg = TrainConfig(epochs=1, train_snr_db=10.0)
    result = train_with_channel_noise(_factory(tiny_arch)(), tiny_dataset, cfg, AnnealSchedule.fixed(0.5))
    assert result.trace.phase == "noisy"
    assert len(result.trace) == 1


def test_infinite_snr_training_matches_clean_training(tiny_arch: Architecture, tiny_dataset: ChannelDataset) -> None:
    cfg = TrainConfig(batch_size=16, epochs=2, seed=4)
    clean = train(_factory(tiny_arch, 4)(), tiny_dataset, cfg, AnnealSchedule())
    noisy = train_with_channel_noise(_factory(tiny_arch, 4)(), tiny_dataset, cfg.model_copy(update={"train_snr_db": math.inf}), AnnealSchedule())
    assert noisy.model.fingerprint() == clean.model.fingerprint()
    assert [record.val_nmse_db for record in noisy.trace.records] == [record.val_nmse_db for record in clean.trace.records]


def test_injected_noise_power_tracks_the_training_snr(mocker: MockerFixture, tiny_arch: Architecture, tiny_dataset: ChannelDataset) -> None:
    energies = []

    def measured(codewords: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
        noise = awgn_noise(codewords, snr_db, rng)
        energies.append((float(np.sum(np.square(codewords, dtype=np.float64))), float(np.sum(np.square(noise, dtype=np.float64)))))
        return noise

    mocker.patch("prvnet.trainer.awgn_noise", side_effect=measured)
    cfg = TrainConfig(batch_size=30, epochs=5, train_snr_db=10.0)
    train_with_channel_noise(_factory(tiny_arch)(), tiny_dataset, cfg, AnnealSchedule.fixed(0.5))
    assert len(energies) == 5
    signal, noise = (sum(values) for values in zip(*energies))
    assert noise == pytest.approx(signal / 10.0, rel=0.1)


def test_model_trainer_builds_requested_mode(tiny_dataset: ChannelDataset) -> None:
    run = model_trainer(
        TrainConfig(batch_size=16, epochs=1),
        beta_fixed=0.5,
        architecture_overrides={"encoder_channels": (2,), "decoder_channels": (2,)},
    )
    point = run(tiny_dataset, 1 / 16, CodecMode.POINT_ESTIMATE)
    variational = run(tiny_dataset, 1 / 16, CodecMode.VARIATIONAL)
    assert point.mode is CodecMode.POINT_ESTIMATE and variational.mode is CodecMode.VARIATIONAL
    assert point.latent_dim == variational.latent_dim == 8
