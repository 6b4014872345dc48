"""PRVNet package exports."""

from .channel import AngularDelayCsi, CsiNormalizer, SpatialFrequencyChannel  # noqa: F401
from .config import ExperimentConfig, build_config  # noqa: F401
from .dataset import ChannelDataset, build_dataset  # noqa: F401
from .models import (  # noqa: F401
    AnnealSchedule,
    Architecture,
    AwgnChannelConfig,
    CodecMode,
    MultipathParams,
    NmseReport,
    RunManifest,
    Scenario,
    TrainConfig,
)
from .network import PRVNet, load_checkpoint, save_checkpoint  # noqa: F401
from .pipeline import ExperimentRunner  # noqa: F401

__all__ = [
    "AngularDelayCsi",
    "CsiNormalizer",
    "SpatialFrequencyChannel",
    "ExperimentConfig",
    "build_config",
    "ChannelDataset",
    "build_dataset",
    "AnnealSchedule",
    "Architecture",
    "AwgnChannelConfig",
    "CodecMode",
    "MultipathParams",
    "NmseReport",
    "RunManifest",
    "Scenario",
    "TrainConfig",
    "PRVNet",
    "load_checkpoint",
    "save_checkpoint",
    "ExperimentRunner",
]
