from __future__ import annotations

from pathlib import Path
from typing import Iterator

import numpy as np
import pytest

from prvnet import numerics as nx
from prvnet.dataset import ChannelDataset, build_dataset
from prvnet.models import Architecture, MultipathParams, Scenario

TINY_MULTIPATH = {"n_t": 8, "n_c": 32, "n_a": 8, "max_delay": 4.0}

TINY_CONFIG_TOML = """
seed = 5

[data]
count = 45

[data.multipath]
n_t = 8
n_c = 32
n_a = 8
max_delay = 4.0

[model]
encoder_channels = [4]
decoder_channels = [4]

[train]
epochs = 2
batch_size = 16
"""


@pytest.fixture
def float64() -> Iterator[None]:
    with nx.default_dtype(np.float64):
        yield


@pytest.fixture(scope="session")
def tiny_params() -> MultipathParams:
    return MultipathParams.preset(Scenario.INDOOR, **TINY_MULTIPATH)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_params: MultipathParams) -> ChannelDataset:
    # 30 / 9 / 6 split
    return build_dataset(tiny_params, 45, seed=11)


@pytest.fixture
def tiny_arch() -> Architecture:
    return Architecture.from_gamma(8, 8, "1/4", encoder_channels=(4,), decoder_channels=(4,))


@pytest.fixture
def tiny_config_file(tmp_path: Path) -> Path:
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_CONFIG_TOML, encoding="utf-8")
    return path
