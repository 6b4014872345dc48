"""Synthetic spatial-frequency channels and the angular-delay transform pipeline.

Channels follow an L-path geometric model on a half-wavelength uniform linear array::

    H[n, t] = sum_l g_l * exp(-j 2 pi n tau_l / N_c) * exp(-j pi t sin(theta_l))

The delay axis is taken through the unitary inverse DFT (a tap at delay ``tau`` lands in delay
row ``tau``) and the antenna axis through the unitary inverse DFT (right-multiplication by
``F_a^H``, so a path with ``sin(theta) = 2k / N_t`` lands in angle column ``k``); only the first
``n_a`` delay rows are retained. Real and imaginary parts become the two channels of the network input.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, model_validator

from .errors import ConfigurationError, DimensionError
from .models import MultipathParams, Scenario

LOGGER = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator]


@dataclass
class SpatialFrequencyChannel:
    matrix: np.ndarray
    scenario: Scenario = Scenario.INDOOR

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=np.complex128)
        if self.matrix.ndim != 2:
            raise DimensionError("channel matrix must be [n_c, n_t]", self.matrix.shape)
        if not np.all(np.isfinite(self.matrix)):
            raise ConfigurationError("channel matrix contains non-finite entries")

    @property
    def real(self) -> np.ndarray:
        return self.matrix.real

    @property
    def imag(self) -> np.ndarray:
        return self.matrix.imag

    @property
    def n_c(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_t(self) -> int:
        return self.matrix.shape[1]

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.matrix))


class CsiNormalizer(BaseModel):
    """Affine map of real/imag values onto [0, 1] fitted on the training split."""

    minimum: float
    maximum: float

    @model_validator(mode="after")
    def _non_degenerate(self) -> "CsiNormalizer":
        if not self.minimum < self.maximum:
            raise ValueError(f"normalizer needs minimum < maximum, got {self.minimum} >= {self.maximum}")
        return self

    @classmethod
    def fit(cls, values: np.ndarray) -> "CsiNormalizer":
        if values.size == 0:
            raise ConfigurationError("cannot fit a normalizer on an empty split")
        low, high = float(np.min(values)), float(np.max(values))
        if not low < high:
            raise ConfigurationError(f"degenerate dataset: every value equals {low}; normalization is undefined")
        return cls(minimum=low, maximum=high)

    @property
    def span(self) -> float:
        return self.maximum - self.minimum

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.minimum) / self.span

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.span + self.minimum


@dataclass
class AngularDelayCsi:
    """Truncated angular-delay CSI as a real ``[2, n_a, n_t]`` image."""

    values: np.ndarray
    n_c: int
    scenario: Scenario = Scenario.INDOOR
    normalizer: Optional[CsiNormalizer] = field(default=None)

    def __post_init__(self) -> None:
        if self.values.ndim != 3 or self.values.shape[0] != 2:
            raise DimensionError("angular-delay CSI must be [2, n_a, n_t]", self.values.shape)
        if self.values.shape[1] > self.n_c:
            raise DimensionError("more delay rows than subcarriers", self.values.shape, (self.n_c,))

    @property
    def n_a(self) -> int:
        return self.values.shape[1]

    @property
    def n_t(self) -> int:
        return self.values.shape[2]

    @property
    def flat_dim(self) -> int:
        return int(self.values.size)

    @property
    def is_normalized(self) -> bool:
        return self.normalizer is not None

    def raw_values(self) -> np.ndarray:
        return denormalize(self)


def channel_from_paths(
    params: MultipathParams,
    gains: np.ndarray,
    delays: np.ndarray,
    angles_rad: np.ndarray,
) -> SpatialFrequencyChannel:
    """Superpose explicit paths; ``delays`` are in samples, ``angles_rad`` are departure angles."""
    gains = np.asarray(gains, dtype=np.complex128).reshape(-1)
    delays = np.asarray(delays, dtype=np.float64).reshape(-1)
    angles_rad = np.asarray(angles_rad, dtype=np.float64).reshape(-1)
    if not gains.shape == delays.shape == angles_rad.shape:
        raise DimensionError("paths need one gain, delay and angle each", gains.shape, delays.shape, angles_rad.shape)
    subcarriers = np.arange(params.n_c)[:, None]
    antennas = np.arange(params.n_t)[:, None]
    delay_phase = np.exp(-2j * np.pi * subcarriers * delays[None, :] / params.n_c)
    steering = np.exp(-1j * np.pi * antennas * np.sin(angles_rad)[None, :])
    matrix = (delay_phase * gains[None, :]) @ steering.T
    return SpatialFrequencyChannel(matrix=matrix, scenario=params.scenario)


def generate_channel(params: MultipathParams, seed: SeedLike) -> SpatialFrequencyChannel:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n_paths = params.n_paths
    gains = params.gain_scale * (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)) / np.sqrt(2 * n_paths)
    delays = np.floor(rng.uniform(0.0, params.max_delay, n_paths) / params.delay_resolution) * params.delay_resolution
    low, high = np.deg2rad(params.angle_range_deg)
    angles = rng.uniform(low, high, n_paths)
    return channel_from_paths(params, gains, delays, angles)


def _to_angular_delay_complex(matrix: np.ndarray) -> np.ndarray:
    delay_domain = np.fft.ifft(matrix, axis=0, norm="ortho")
    return np.fft.ifft(delay_domain, axis=1, norm="ortho")


def _from_angular_delay_complex(matrix: np.ndarray) -> np.ndarray:
    delay_domain = np.fft.fft(matrix, axis=1, norm="ortho")
    return np.fft.fft(delay_domain, axis=0, norm="ortho")


def to_angular_delay(h: SpatialFrequencyChannel, n_a: int) -> AngularDelayCsi:
    """Un-normalized truncated angular-delay representation of ``h``."""
    if not 1 <= n_a <= h.n_c:
        raise ConfigurationError(f"n_a must lie in [1, {h.n_c}], got {n_a}")
    truncated = _to_angular_delay_complex(h.matrix)[:n_a]
    values = np.stack([truncated.real, truncated.imag])
    return AngularDelayCsi(values=values, n_c=h.n_c, scenario=h.scenario)


def normalize(csi: AngularDelayCsi, normalizer: CsiNormalizer) -> AngularDelayCsi:
    if csi.is_normalized:
        raise ConfigurationError("CSI is already normalized")
    values = normalizer.normalize(csi.values)
    return AngularDelayCsi(values=values, n_c=csi.n_c, scenario=csi.scenario, normalizer=normalizer)


def denormalize(csi: AngularDelayCsi) -> np.ndarray:
    """Raw angular-delay values; a no-op copy for un-normalized CSI."""
    if csi.normalizer is None:
        return csi.values.copy()
    return csi.normalizer.denormalize(csi.values)


def from_angular_delay(csi: AngularDelayCsi) -> SpatialFrequencyChannel:
    raw = denormalize(csi)
    padded = np.zeros((csi.n_c, csi.n_t), dtype=np.complex128)
    padded[: csi.n_a] = raw[0] + 1j * raw[1]
    return SpatialFrequencyChannel(matrix=_from_angular_delay_complex(padded), scenario=csi.scenario)


def truncation_energy_ratio(h: SpatialFrequencyChannel, n_a: int) -> float:
    """Fraction of the Frobenius energy kept by the first ``n_a`` delay rows."""
    full = _to_angular_delay_complex(h.matrix)
    total = float(np.sum(np.abs(full) ** 2))
    if total == 0.0:
        return 1.0
    return float(np.sum(np.abs(full[:n_a]) ** 2)) / total
