"""Pydantic models for channel geometry, architecture, training, evaluation and run records."""

from __future__ import annotations

import math
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator


class Scenario(str, Enum):
    INDOOR = "indoor"
    OUTDOOR = "outdoor"


class CodecMode(str, Enum):
    VARIATIONAL = "variational"
    POINT_ESTIMATE = "point-estimate"


class MultipathParams(BaseModel):
    """Geometry of the synthetic L-path channel on a half-wavelength ULA."""

    scenario: Scenario = Scenario.INDOOR
    n_paths: int = Field(4, ge=1)
    gain_scale: float = Field(1.0, gt=0)
    angle_range_deg: Tuple[float, float] = (-60.0, 60.0)
    max_delay: float = Field(8.0, gt=0)
    delay_resolution: float = Field(1.0, gt=0)
    n_t: int = Field(32, ge=1)
    n_c: int = Field(256, ge=1)
    n_a: int = Field(32, ge=1)

    @model_validator(mode="after")
    def _check_geometry(self) -> "MultipathParams":
        if self.n_a > self.n_c:
            raise ValueError(f"n_a ({self.n_a}) cannot exceed the subcarrier count n_c ({self.n_c})")
        if self.max_delay > self.n_a:
            raise ValueError(f"max_delay ({self.max_delay}) must stay within the {self.n_a} retained delay rows")
        low, high = self.angle_range_deg
        if not -90.0 <= low <= high <= 90.0:
            raise ValueError(f"angle_range_deg must satisfy -90 <= low <= high <= 90, got {self.angle_range_deg}")
        return self

    @classmethod
    def preset(cls, scenario: Scenario | str, **overrides: Any) -> "MultipathParams":
        """Indoor: few paths with short delays. Outdoor: rich scattering with long delays."""
        scenario = Scenario(scenario)
        if scenario is Scenario.INDOOR:
            base: Dict[str, Any] = {"n_paths": 4, "max_delay": 8.0, "angle_range_deg": (-60.0, 60.0)}
        else:
            base = {"n_paths": 12, "max_delay": 24.0, "angle_range_deg": (-90.0, 90.0)}
        base.update(overrides)
        return cls(scenario=scenario, **base)

    @property
    def flat_dim(self) -> int:
        return 2 * self.n_a * self.n_t


def parse_gamma(value: Any) -> float:
    """Accept ``1/4``, ``0.25`` or a number."""
    if isinstance(value, (int, float)):
        gamma = float(value)
    else:
        try:
            gamma = float(Fraction(str(value).strip()))
        except (ValueError, ZeroDivisionError):
            raise ValueError(f"Cannot parse compression ratio {value!r}") from None
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"Compression ratio must lie in (0, 1], got {gamma}")
    return gamma


def format_gamma(gamma: float) -> str:
    fraction = Fraction(gamma).limit_denominator(4096)
    return f"{fraction.numerator}/{fraction.denominator}"


class Architecture(BaseModel):
    """Layer sizes of the encoder/decoder pair; serialized into every checkpoint."""

    n_a: int = Field(32, ge=1)
    n_t: int = Field(32, ge=1)
    latent_dim: int = Field(512, ge=1)
    encoder_channels: Tuple[int, ...] = (8, 16)
    decoder_channels: Tuple[int, ...] = (8, 16)
    kernel_size: int = 3
    mode: CodecMode = CodecMode.VARIATIONAL

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value < 1 or value % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {value}")
        return value

    @classmethod
    def from_gamma(cls, n_a: int, n_t: int, gamma: Any, **overrides: Any) -> "Architecture":
        flat = 2 * n_a * n_t
        latent = max(1, int(round(parse_gamma(gamma) * flat)))
        return cls(n_a=n_a, n_t=n_t, latent_dim=latent, **overrides)

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (2, self.n_a, self.n_t)

    @property
    def flat_dim(self) -> int:
        return 2 * self.n_a * self.n_t

    @property
    def gamma(self) -> float:
        return self.latent_dim / self.flat_dim


PAPER_HYPERPARAMS: Dict[str, Any] = {"learning_rate": 0.1, "epochs": 1000, "batch_size": 128}


class TrainConfig(BaseModel):
    batch_size: int = Field(128, ge=1)
    epochs: int = Field(200, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    seed: int = 0
    train_snr_db: Optional[float] = None
    gamma: float = 0.25
    input_dropout: float = Field(0.0, ge=0, lt=1)
    log_every: int = Field(10, ge=1)

    @field_validator("gamma", mode="before")
    @classmethod
    def _parse_gamma(cls, value: Any) -> float:
        return parse_gamma(value)

    @field_validator("train_snr_db")
    @classmethod
    def _finite_snr(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and math.isnan(value):
            raise ValueError("train_snr_db must be a number or omitted for clean training")
        return value

    @classmethod
    def paper(cls, **overrides: Any) -> "TrainConfig":
        """Hyperparameters as published: Adam at 0.1 for 1000 epochs, batch 128."""
        return cls(**{**PAPER_HYPERPARAMS, **overrides})


class AnnealSchedule(BaseModel):
    """Linear KL-weight ramp from ``beta_start`` to ``beta_end`` over ``total_updates`` steps."""

    beta_start: float = Field(0.0, ge=0)
    beta_end: float = Field(1.0, ge=0)
    total_updates: Optional[int] = Field(None, ge=1)
    anneal_fraction: float = Field(0.5, gt=0, le=1)
    freeze_on_degradation: bool = False
    patience: int = Field(5, ge=1)
    beta_star: Optional[float] = None
    beta_star_nmse_db: Optional[float] = None

    @model_validator(mode="after")
    def _ordered(self) -> "AnnealSchedule":
        if self.beta_end < self.beta_start:
            raise ValueError(f"beta_end ({self.beta_end}) must be >= beta_start ({self.beta_start})")
        return self

    @classmethod
    def fixed(cls, beta: float) -> "AnnealSchedule":
        return cls(beta_start=beta, beta_end=beta, total_updates=1)

    def resolved(self, updates_in_run: int) -> "AnnealSchedule":
        """Copy with ``total_updates`` filled in from the run length when unset."""
        if self.total_updates is not None:
            return self.model_copy()
        updates = max(1, int(round(self.anneal_fraction * updates_in_run)))
        return self.model_copy(update={"total_updates": updates})

    @property
    def increment(self) -> float:
        return (self.beta_end - self.beta_start) / float(self.total_updates or 1)


class TraceRecord(BaseModel):
    epoch: int
    beta: float
    recon_loss: float
    kl_loss: float
    total_loss: float
    val_nmse_db: float
    timestamp: float


TRACE_COLUMNS: Tuple[str, ...] = ("epoch", "beta", "recon_loss", "kl_loss", "total_loss", "val_nmse_db")


class TrainTrace(BaseModel):
    phase: str = "train"
    records: List[TraceRecord] = Field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final(self) -> Optional[TraceRecord]:
        return self.records[-1] if self.records else None


class AwgnChannelConfig(BaseModel):
    """Feedback-link noise; ``snr_db=None`` means a clean link."""

    snr_db: Optional[float] = None
    power_reference: str = "batch-empirical"
    seed: int = 0

    @field_validator("snr_db")
    @classmethod
    def _finite(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not math.isfinite(value):
            raise ValueError("snr_db must be finite; omit it for a clean channel")
        return value

    @property
    def clean(self) -> bool:
        return self.snr_db is None


REPORT_COLUMNS: Tuple[str, ...] = ("gamma", "scenario", "snr_db", "nmse_db", "n_samples", "model_id", "seed")


class NmseRow(BaseModel):
    gamma: float
    scenario: Scenario
    snr_db: Optional[float] = None
    nmse_db: float
    n_samples: int
    model_id: str
    seed: int
    latent_dim: Optional[int] = None
    n_excluded: int = 0

    @property
    def snr_label(self) -> str:
        return "clean" if self.snr_db is None else f"{self.snr_db:g}"


class NmseReport(BaseModel):
    rows: List[NmseRow] = Field(default_factory=list)
    seed: int = 0
    dataset_hash: Optional[str] = None
    monotone: Optional[bool] = None
    notes: List[str] = Field(default_factory=list)

    def extend(self, other: "NmseReport") -> None:
        self.rows.extend(other.rows)
        self.notes.extend(other.notes)
        if other.monotone is not None:
            self.monotone = other.monotone if self.monotone is None else (self.monotone and other.monotone)


class RunManifest(BaseModel):
    command: str
    config: Dict[str, Any]
    dataset_path: Optional[str] = None
    dataset_hash: Optional[str] = None
    checkpoint_paths: List[str] = Field(default_factory=list)
    trace_paths: List[str] = Field(default_factory=list)
    report_paths: List[str] = Field(default_factory=list)
    beta_star: Optional[float] = None
    beta_star_nmse_db: Optional[float] = None
    tool_version: str = "0.1.0"
    started_at: str
    duration_s: float = 0.0
    status: str = "complete"
    failures: List[str] = Field(default_factory=list)
    arguments: Dict[str, Any] = Field(default_factory=dict)
