"""Channel datasets: generation, 10:3:2 splitting, normalization and the binary file format.

File layout (little-endian)::

    magic "PRVC" | version u32 | count u32 | n_a u32 | n_t u32 |
    train u32 | val u32 | test u32 | min f32 | max f32 |
    count x (2 * n_a * n_t) f32 normalized records

A JSON sidecar (``<file>.json``) records the generation parameters and master seed.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import orjson

from .channel import AngularDelayCsi, CsiNormalizer, generate_channel, to_angular_delay
from .errors import ArtifactError, ConfigurationError
from .models import MultipathParams, Scenario
from .numerics import rng_stream

LOGGER = logging.getLogger(__name__)

MAGIC = b"PRVC"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIIIIIIff")
SPLIT_RATIO = (10, 3, 2)
SPLIT_NAMES = ("train", "val", "test")
MIN_COUNT = sum(SPLIT_RATIO)


def split_sizes(count: int) -> Tuple[int, int, int]:
    if count < MIN_COUNT:
        raise ConfigurationError(f"need at least {MIN_COUNT} channels for a 10:3:2 split, got {count}")
    total = sum(SPLIT_RATIO)
    val = int(round(count * SPLIT_RATIO[1] / total))
    test = int(round(count * SPLIT_RATIO[2] / total))
    return count - val - test, val, test


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


@dataclass
class ChannelDataset:
    samples: np.ndarray
    splits: Tuple[int, int, int]
    normalizer: CsiNormalizer
    params: MultipathParams
    seed: int

    def __post_init__(self) -> None:
        if sum(self.splits) != self.samples.shape[0]:
            raise ConfigurationError(f"split sizes {self.splits} do not cover {self.samples.shape[0]} samples")

    @property
    def count(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_a(self) -> int:
        return int(self.samples.shape[2])

    @property
    def n_t(self) -> int:
        return int(self.samples.shape[3])

    @property
    def n_c(self) -> int:
        return self.params.n_c

    @property
    def scenario(self) -> Scenario:
        return self.params.scenario

    def split_bounds(self) -> Dict[str, Tuple[int, int]]:
        train, val, _ = self.splits
        return {
            "train": (0, train),
            "val": (train, train + val),
            "test": (train + val, self.count),
        }

    def split(self, name: str) -> np.ndarray:
        try:
            start, stop = self.split_bounds()[name]
        except KeyError:
            raise ConfigurationError(f"unknown split {name!r}; expected one of {SPLIT_NAMES}") from None
        return self.samples[start:stop]

    def subset(self, train: int, val: int, test: int) -> "ChannelDataset":
        """Leading samples of each split, e.g. for quick experiments on a large file."""
        parts = [self.split(name)[:size] for name, size in zip(SPLIT_NAMES, (train, val, test))]
        sizes = tuple(part.shape[0] for part in parts)
        return ChannelDataset(np.concatenate(parts), sizes, self.normalizer, self.params, self.seed)  # type: ignore[arg-type]

    def csi(self, index: int) -> AngularDelayCsi:
        return AngularDelayCsi(
            values=self.samples[index].astype(np.float64),
            n_c=self.n_c,
            scenario=self.scenario,
            normalizer=self.normalizer,
        )

    def to_bytes(self) -> bytes:
        header = HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            self.count,
            self.n_a,
            self.n_t,
            *self.splits,
            self.normalizer.minimum,
            self.normalizer.maximum,
        )
        return header + np.ascontiguousarray(self.samples, dtype="<f4").tobytes()

    def sidecar(self) -> Dict[str, object]:
        return {
            "format_version": FORMAT_VERSION,
            "count": self.count,
            "seed": self.seed,
            "splits": dict(zip(SPLIT_NAMES, self.splits)),
            "normalizer": self.normalizer.model_dump(),
            "params": self.params.model_dump(mode="json"),
        }

    def save(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        sidecar_path(path).write_bytes(orjson.dumps(self.sidecar(), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
        return path

    @classmethod
    def load(cls, path: Path) -> "ChannelDataset":
        if not path.exists():
            raise FileNotFoundError(f"dataset file not found: {path}")
        payload = path.read_bytes()
        if len(payload) < HEADER.size:
            raise ArtifactError(f"{path} is too short to be a dataset file")
        magic, version, count, n_a, n_t, train, val, test, minimum, maximum = HEADER.unpack_from(payload)
        if magic != MAGIC:
            raise ArtifactError(f"{path} is not a PRVC dataset (magic {magic!r})")
        if version != FORMAT_VERSION:
            raise ArtifactError(f"{path} has unsupported dataset version {version}")
        expected = count * 2 * n_a * n_t * 4
        body = payload[HEADER.size :]
        if len(body) != expected:
            raise ArtifactError(f"{path} holds {len(body)} record bytes, expected {expected}")
        samples = np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(count, 2, n_a, n_t)

        side = sidecar_path(path)
        if not side.exists():
            raise ArtifactError(f"dataset sidecar not found: {side}")
        meta = orjson.loads(side.read_bytes())
        params = MultipathParams(**meta["params"])
        # header floats are the authoritative f32 copies
        normalizer = CsiNormalizer(minimum=float(minimum), maximum=float(maximum))
        return cls(samples, (train, val, test), normalizer, params, int(meta["seed"]))


def dataset_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _raw_sample(params: MultipathParams, seed: int, index: int) -> np.ndarray:
    channel = generate_channel(params, rng_stream(seed, "dataset", index))
    return to_angular_delay(channel, params.n_a).values


def build_dataset(params: MultipathParams, count: int, seed: int, workers: int = 1) -> ChannelDataset:
    """Generate ``count`` independent channels; sample ``i`` depends only on ``(params, seed, i)``."""
    splits = split_sizes(count)
    LOGGER.info(f"  Generating {count} {params.scenario.value} channels (seed {seed})...")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(lambda index: _raw_sample(params, seed, index), range(count)))
    else:
        raw = [_raw_sample(params, seed, index) for index in range(count)]
    stacked = np.stack(raw)

    # min/max come from the training split only
    normalizer_f64 = CsiNormalizer.fit(stacked[: splits[0]])
    normalizer = CsiNormalizer(
        minimum=float(np.float32(normalizer_f64.minimum)),
        maximum=float(np.float32(normalizer_f64.maximum)),
    )
    samples = normalizer.normalize(stacked).astype(np.float32)
    held_out = samples[splits[0] :]
    outside = int(np.sum((held_out < 0.0) | (held_out > 1.0)))
    if outside:
        LOGGER.debug(f"  {outside} held-out values fall outside [0, 1] (left unclamped)")
    return ChannelDataset(samples, splits, normalizer, params, seed)
