from __future__ import annotations

import math

import numpy as np
import pytest

from prvnet.dataset import ChannelDataset
from prvnet.errors import ConfigurationError
from prvnet.evaluator import (
    PERFECT_NMSE_DB,
    add_awgn,
    awgn_noise,
    baseline_compare,
    cr_sweep,
    evaluate,
    is_non_decreasing,
    nmse_db,
    reconstruct,
    snr_sweep,
)
from prvnet.models import Architecture, AwgnChannelConfig, CodecMode
from prvnet.network import PRVNet
from prvnet.numerics import rng_stream


def _untrained(dataset: ChannelDataset, gamma: float, mode: CodecMode) -> PRVNet:
    arch = Architecture.from_gamma(dataset.n_a, dataset.n_t, gamma, encoder_channels=(2,), decoder_channels=(2,), mode=mode)
    return PRVNet.initialize(arch, rng_stream(0, "init"))


@pytest.mark.parametrize("snr_db", [35.0, 32.0, 29.0, 26.0, 23.0])
def test_awgn_power_matches_snr(snr_db: float) -> None:
    codewords = np.random.default_rng(0).normal(0.3, 2.0, size=(1000, 128))
    noise = awgn_noise(codewords, snr_db, np.random.default_rng(1))
    expected = float(np.mean(codewords**2)) / 10 ** (snr_db / 10)
    assert float(np.mean(noise**2)) == pytest.approx(expected, rel=0.05)


def test_clean_link_and_zero_power() -> None:
    codewords = np.ones((2, 4), dtype=np.float32)
    np.testing.assert_array_equal(add_awgn(codewords, AwgnChannelConfig()), codewords)
    assert not np.array_equal(add_awgn(codewords, AwgnChannelConfig(snr_db=10.0)), codewords)
    with pytest.raises(ConfigurationError):
        awgn_noise(np.zeros((2, 4)), 10.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        AwgnChannelConfig(snr_db=math.inf)


def test_nmse_reference_values() -> None:
    h = np.random.default_rng(2).normal(size=(6, 2, 4, 4))
    assert nmse_db(h, np.zeros_like(h)) == pytest.approx(0.0, abs=1e-12)
    for alpha in (0.1, 0.01):
        assert nmse_db(h, (1 + alpha) * h) == pytest.approx(20 * math.log10(alpha), abs=1e-4)
    assert nmse_db(h, h) == PERFECT_NMSE_DB


def test_nmse_reductions_differ_by_averaging_domain() -> None:
    h = np.ones((2, 3))
    h_hat = h * np.array([[1.1], [1.01]])
    assert nmse_db(h, h_hat) == pytest.approx(10 * math.log10((0.01 + 0.0001) / 2))
    assert nmse_db(h, h_hat, reduction="mean_db") == pytest.approx(-30.0)
    with pytest.raises(ConfigurationError):
        nmse_db(h, h_hat, reduction="median")


def test_zero_norm_samples_are_excluded() -> None:
    h = np.array([[1.0, 1.0], [0.0, 0.0]])
    h_hat = np.array([[1.1, 1.1], [5.0, 5.0]])
    assert nmse_db(h, h_hat) == pytest.approx(-20.0)
    with pytest.raises(ConfigurationError):
        nmse_db(np.zeros((2, 2)), np.ones((2, 2)))


def test_non_decreasing_with_slack() -> None:
    assert is_non_decreasing([-20.0, -19.0, -19.1], tolerance=0.2)
    assert not is_non_decreasing([-20.0, -19.0, -19.5], tolerance=0.2)


def test_evaluate_reports_test_split(tiny_dataset: ChannelDataset) -> None:
    model = _untrained(tiny_dataset, 0.25, CodecMode.VARIATIONAL)
    row = evaluate(model, tiny_dataset, seed=4, model_id="m")
    assert row.n_samples == 6 and row.snr_db is None and row.snr_label == "clean"
    assert row.gamma == pytest.approx(0.25) and row.latent_dim == 32
    noisy = evaluate(model, tiny_dataset, AwgnChannelConfig(snr_db=23.0), seed=4)
    assert noisy.snr_db == 23.0
    assert noisy.model_id.startswith("variational-")


def test_reconstruction_is_seeded(tiny_dataset: ChannelDataset) -> None:
    model = _untrained(tiny_dataset, 0.25, CodecMode.VARIATIONAL)
    samples = tiny_dataset.split("test")
    link = AwgnChannelConfig(snr_db=20.0, seed=3)
    np.testing.assert_array_equal(reconstruct(model, samples, link), reconstruct(model, samples, link))
    sampled = reconstruct(model, samples, None, transmit="sample", seed=1)
    assert sampled.shape == samples.shape
    with pytest.raises(ConfigurationError):
        reconstruct(model, samples, None, transmit="mode")


def test_snr_sweep_rows(tiny_dataset: ChannelDataset) -> None:
    model = _untrained(tiny_dataset, 0.25, CodecMode.POINT_ESTIMATE)
    report = snr_sweep(model, tiny_dataset, [23.0, 35.0, 29.0], include_clean=True, model_id="pe")
    assert [row.snr_label for row in report.rows] == ["clean", "35", "29", "23"]
    assert report.monotone is not None


def test_cr_sweep_trains_one_model_per_ratio(tiny_dataset: ChannelDataset) -> None:
    calls = []

    def fake_train(dataset: ChannelDataset, gamma: float, mode: CodecMode) -> PRVNet:
        calls.append((gamma, mode))
        return _untrained(dataset, gamma, mode)

    report = cr_sweep(fake_train, tiny_dataset, gammas=[1 / 16, 1 / 4])
    assert calls == [(0.25, CodecMode.VARIATIONAL), (1 / 16, CodecMode.VARIATIONAL)]
    assert [row.latent_dim for row in report.rows] == [32, 8]


def test_baseline_compare_pairs_modes(tiny_dataset: ChannelDataset) -> None:
    report = baseline_compare(tiny_dataset, _untrained, gammas=[1 / 4], snrs=[30.0, 20.0])
    assert len(report.rows) == 6
    modes = [row.model_id.rsplit("-", 1)[0] for row in report.rows]
    assert modes == ["point-estimate"] * 3 + ["variational"] * 3


def test_sweeps_honor_transmit_and_reduction(tiny_dataset: ChannelDataset) -> None:
    model = _untrained(tiny_dataset, 0.25, CodecMode.VARIATIONAL)
    expected = evaluate(model, tiny_dataset, None, transmit="sample", reduction="mean_db").nmse_db
    report = cr_sweep(lambda dataset, gamma, mode: model, tiny_dataset, gammas=[0.25], transmit="sample", reduction="mean_db")
    assert report.rows[0].nmse_db == expected
    assert expected != evaluate(model, tiny_dataset, None).nmse_db

    paired = baseline_compare(tiny_dataset, _untrained, gammas=[0.25], snrs=[20.0], reduction="mean_db")
    variational_clean = [row for row in paired.rows if row.model_id.startswith("variational") and row.snr_db is None][0]
    assert variational_clean.nmse_db == evaluate(_untrained(tiny_dataset, 0.25, CodecMode.VARIATIONAL), tiny_dataset, None, reduction="mean_db").nmse_db
