"""Experiment configuration: defaults, TOML/JSON files and CLI overrides.

Precedence is flags > file > defaults, resolved per field by a recursive merge before
validation. The top-level ``seed`` is the single source of randomness: it is copied into the
training and channel sections.
"""

from __future__ import annotations

import os
import tomllib
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import orjson
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError
from .evaluator import DEFAULT_GAMMAS, DEFAULT_SNR_GRID
from .models import AnnealSchedule, Architecture, AwgnChannelConfig, CodecMode, MultipathParams, Scenario, TrainConfig, parse_gamma

OUT_DIR_ENV = "PRVNET_OUT_DIR"


def default_output_root() -> Path:
    return Path(os.environ.get(OUT_DIR_ENV, "runs"))


class DataConfig(BaseModel):
    count: int = Field(2000, ge=15)
    workers: int = Field(1, ge=1)
    multipath: Dict[str, Any] = Field(default_factory=dict)


class ModelConfig(BaseModel):
    encoder_channels: Tuple[int, ...] = (8, 16)
    decoder_channels: Tuple[int, ...] = (8, 16)
    kernel_size: int = 3
    mode: CodecMode = CodecMode.VARIATIONAL
    beta_fixed: Optional[float] = Field(None, ge=0)


class EvalConfig(BaseModel):
    transmit: str = "mean"
    nmse_reduction: str = "ratio"
    snrs: List[float] = Field(default_factory=lambda: list(DEFAULT_SNR_GRID))
    gammas: List[float] = Field(default_factory=lambda: list(DEFAULT_GAMMAS))

    @field_validator("gammas", mode="before")
    @classmethod
    def _parse_gammas(cls, value: Any) -> List[float]:
        if isinstance(value, str):
            value = [part for part in value.split(",") if part.strip()]
        return [parse_gamma(item) for item in value]


class ExperimentConfig(BaseModel):
    scenario: Scenario = Scenario.INDOOR
    seed: int = 0
    gamma: float = 0.25
    output_dir: Path = Field(default_factory=default_output_root)
    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    anneal: AnnealSchedule = Field(default_factory=AnnealSchedule)
    channel: AwgnChannelConfig = Field(default_factory=AwgnChannelConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @field_validator("gamma", mode="before")
    @classmethod
    def _parse_gamma(cls, value: Any) -> float:
        return parse_gamma(value)

    @model_validator(mode="after")
    def _propagate_seed(self) -> "ExperimentConfig":
        self.train = self.train.model_copy(update={"seed": self.seed, "gamma": self.gamma})
        self.channel = self.channel.model_copy(update={"seed": self.seed})
        return self

    def multipath_params(self) -> MultipathParams:
        try:
            return MultipathParams.preset(self.scenario, **self.data.multipath)
        except ValidationError as exc:
            raise ConfigurationError(f"invalid multipath parameters: {exc}") from exc

    def architecture(self, n_a: int, n_t: int, gamma: Optional[float] = None, mode: Optional[CodecMode] = None) -> Architecture:
        return Architecture.from_gamma(
            n_a,
            n_t,
            self.gamma if gamma is None else gamma,
            encoder_channels=self.model.encoder_channels,
            decoder_channels=self.model.decoder_channels,
            kernel_size=self.model.kernel_size,
            mode=mode or self.model.mode,
        )

    def architecture_overrides(self) -> Dict[str, Any]:
        return {
            "encoder_channels": self.model.encoder_channels,
            "decoder_channels": self.model.decoder_channels,
            "kernel_size": self.model.kernel_size,
        }

    def snapshot(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def read_config_file(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        if path.suffix.lower() == ".json":
            return orjson.loads(path.read_bytes())
        return tomllib.loads(path.read_text(encoding="utf-8"))
    except (tomllib.TOMLDecodeError, orjson.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc


def nest(flat: Mapping[str, Any]) -> Dict[str, Any]:
    """``{"train.epochs": 5}`` -> ``{"train": {"epochs": 5}}``; ``None`` values are dropped."""
    nested: Dict[str, Any] = {}
    for dotted, value in flat.items():
        if value is None:
            continue
        node = nested
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return nested


def merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def config_from_snapshot(snapshot: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Validate a nested config dict (a file or a recorded snapshot) with dotted overrides on top."""
    values = merge(snapshot, nest(overrides or {}))
    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from exc


def build_config(config_file: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    values: Dict[str, Any] = {}
    if config_file is not None:
        values = read_config_file(config_file)
    return config_from_snapshot(values, overrides)
