"""PRVNet encoder/decoder, Gaussian latent, partially regularized loss and checkpoint files.

Encoder: conv blocks (leaky-ReLU) -> flatten -> dense heads for mu and log sigma (``2M`` outputs).
Decoder: dense ``M -> 2 n_a n_t`` -> reshape -> conv refinement blocks (leaky-ReLU) -> conv to two
channels -> sigmoid. In point-estimate mode the log sigma head is absent and the codeword is the
mu head output.

Checkpoint layout (little-endian)::

    magic "PRVW" | version u32 | descriptor length u32 | descriptor JSON |
    latent_dim u32 | mode flag u32 (0 variational, 1 point-estimate) |
    f32 parameter arrays in ``parameter_shapes`` order
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import orjson

from . import numerics as nx
from .errors import ArtifactError, ConfigurationError, ContractError, DimensionError
from .models import Architecture, CodecMode
from .numerics import Tensor

LOGGER = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PRVW"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<4sII")
_TRAILER = struct.Struct("<II")
_MODE_FLAGS = {CodecMode.VARIATIONAL: 0, CodecMode.POINT_ESTIMATE: 1}


@dataclass
class CodewordDistribution:
    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self) -> None:
        if self.mu.shape != self.log_sigma.shape:
            raise DimensionError("mu and log_sigma must share a shape", self.mu.shape, self.log_sigma.shape)

    @property
    def latent_dim(self) -> int:
        return self.mu.shape[-1]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.value)


@dataclass
class Codeword:
    z: Tensor
    gamma: float

    @property
    def latent_dim(self) -> int:
        return self.z.shape[-1]


@dataclass
class LossBreakdown:
    """Batch-mean loss terms; ``objective`` is the differentiable total."""

    objective: Tensor
    recon: float
    kl: float
    beta: float

    @property
    def total(self) -> float:
        return self.recon + self.beta * self.kl


def parameter_shapes(arch: Architecture) -> Dict[str, Tuple[int, ...]]:
    """Canonical parameter order and shapes for an architecture."""
    k = arch.kernel_size
    shapes: Dict[str, Tuple[int, ...]] = {}
    channels = 2
    for index, width in enumerate(arch.encoder_channels):
        shapes[f"enc_conv{index}_w"] = (width, channels, k, k)
        shapes[f"enc_conv{index}_b"] = (width,)
        channels = width
    features = channels * arch.n_a * arch.n_t
    shapes["enc_mu_w"] = (features, arch.latent_dim)
    shapes["enc_mu_b"] = (arch.latent_dim,)
    if arch.mode is CodecMode.VARIATIONAL:
        shapes["enc_logsig_w"] = (features, arch.latent_dim)
        shapes["enc_logsig_b"] = (arch.latent_dim,)
    shapes["dec_dense_w"] = (arch.latent_dim, arch.flat_dim)
    shapes["dec_dense_b"] = (arch.flat_dim,)
    channels = 2
    for index, width in enumerate(arch.decoder_channels):
        shapes[f"dec_conv{index}_w"] = (width, channels, k, k)
        shapes[f"dec_conv{index}_b"] = (width,)
        channels = width
    shapes["dec_out_w"] = (2, channels, k, k)
    shapes["dec_out_b"] = (2,)
    return shapes


def _fan_in(shape: Tuple[int, ...]) -> int:
    if len(shape) == 4:
        return shape[1] * shape[2] * shape[3]
    return shape[0]


def input_dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout on the network input."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.value.dtype) / (1.0 - rate)
    return nx.mul(x, keep)


class PRVNet:
    def __init__(self, architecture: Architecture, params: Dict[str, Tensor]) -> None:
        expected = parameter_shapes(architecture)
        if list(params) != list(expected):
            raise ContractError(f"parameter set {list(params)} does not match architecture {list(expected)}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise DimensionError(f"parameter {name!r} has the wrong shape", params[name].shape, shape)
        self.architecture = architecture
        self.params = params

    @classmethod
    def initialize(cls, architecture: Architecture, rng: np.random.Generator) -> "PRVNet":
        params: Dict[str, Tensor] = {}
        for name, shape in parameter_shapes(architecture).items():
            if name.endswith("_b"):
                data = np.zeros(shape, dtype=nx.get_default_dtype())
            else:
                data = nx.he_init(shape, _fan_in(shape), rng)
            params[name] = nx.parameter(data, name=name)
        return cls(architecture, params)

    @property
    def mode(self) -> CodecMode:
        return self.architecture.mode

    @property
    def latent_dim(self) -> int:
        return self.architecture.latent_dim

    @property
    def gamma(self) -> float:
        return self.architecture.gamma

    def parameter_count(self) -> int:
        return sum(param.size for param in self.params.values())

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def state(self) -> Dict[str, np.ndarray]:
        return {name: param.value.copy() for name, param in self.params.items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        for name, param in self.params.items():
            if state[name].shape != param.shape:
                raise DimensionError(f"state for {name!r} has the wrong shape", state[name].shape, param.shape)
            param.value[...] = state[name]

    def fingerprint(self) -> str:
        digest = hashlib.sha256(self.architecture.model_dump_json().encode("utf-8"))
        for param in self.params.values():
            digest.update(np.ascontiguousarray(param.value, dtype="<f4").tobytes())
        return digest.hexdigest()[:12]

    def _check_input(self, x: Tensor) -> Tensor:
        expected = self.architecture.input_shape
        if x.value.ndim == 3:
            x = nx.reshape(x, (1,) + x.shape)
        if x.value.ndim != 4 or x.shape[1:] != expected:
            raise DimensionError("encoder input does not match the architecture", x.shape, (None,) + expected)  # type: ignore[arg-type]
        return x

    def _features(self, x: Tensor) -> Tensor:
        x = self._check_input(x)
        h = x
        for index in range(len(self.architecture.encoder_channels)):
            h = nx.leaky_relu(nx.conv2d(h, self.params[f"enc_conv{index}_w"], self.params[f"enc_conv{index}_b"]))
        return nx.reshape(h, (h.shape[0], -1))

    def _dense(self, h: Tensor, prefix: str) -> Tensor:
        return nx.add(nx.matmul(h, self.params[f"{prefix}_w"]), self.params[f"{prefix}_b"])

    def encode(self, x: Tensor) -> CodewordDistribution:
        """Variational parameters (mu, log sigma) of q(z | x)."""
        if self.mode is not CodecMode.VARIATIONAL:
            raise ContractError("encode() needs a variational model; use point_estimate_forward()")
        features = self._features(x)
        return CodewordDistribution(mu=self._dense(features, "enc_mu"), log_sigma=self._dense(features, "enc_logsig"))

    def reparameterize(self, distribution: CodewordDistribution, eps: np.ndarray) -> Codeword:
        return reparameterize(distribution, eps, self.gamma)

    def decode(self, z: Union[Codeword, Tensor]) -> Tensor:
        latent = z.z if isinstance(z, Codeword) else z
        if latent.value.ndim == 1:
            latent = nx.reshape(latent, (1, latent.shape[0]))
        if latent.value.ndim != 2 or latent.shape[1] != self.latent_dim:
            raise DimensionError("codeword length does not match the decoder", latent.shape, (self.latent_dim,))
        arch = self.architecture
        h = nx.reshape(self._dense(latent, "dec_dense"), (latent.shape[0],) + arch.input_shape)
        for index in range(len(arch.decoder_channels)):
            h = nx.leaky_relu(nx.conv2d(h, self.params[f"dec_conv{index}_w"], self.params[f"dec_conv{index}_b"]))
        return nx.sigmoid(nx.conv2d(h, self.params["dec_out_w"], self.params["dec_out_b"]))

    def point_estimate_forward(
        self,
        x: Tensor,
        dropout_rate: float = 0.0,
        rng: Optional[np.random.Generator] = None,
        training: bool = False,
    ) -> Tuple[Codeword, Tensor]:
        """Deterministic codeword ``g(x)`` and its reconstruction; dropout only while training."""
        if self.mode is not CodecMode.POINT_ESTIMATE:
            raise ContractError("point_estimate_forward() needs a point-estimate model")
        if training and dropout_rate > 0.0:
            if rng is None:
                raise ContractError("input dropout needs a random generator")
            x = input_dropout(self._check_input(x), dropout_rate, rng)
        codeword = Codeword(z=self._dense(self._features(x), "enc_mu"), gamma=self.gamma)
        return codeword, self.decode(codeword)

    def transmit(self, x: Tensor, sample: bool = False, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Codewords sent over the feedback link: mu by default, a fresh sample on request."""
        if self.mode is CodecMode.POINT_ESTIMATE:
            codeword, _ = self.point_estimate_forward(x)
            return codeword.z.value.copy()
        distribution = self.encode(x)
        if not sample:
            return distribution.mu.value.copy()
        if rng is None:
            raise ContractError("sampled transmission needs a random generator")
        eps = rng.standard_normal(distribution.mu.shape).astype(distribution.mu.value.dtype)
        return self.reparameterize(distribution, eps).z.value.copy()

    def generate(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Ancestral samples: decode z ~ N(0, I)."""
        z = rng.standard_normal((count, self.latent_dim)).astype(nx.get_default_dtype())
        return self.decode(Tensor(z)).value.copy()


def reparameterize(distribution: CodewordDistribution, eps: np.ndarray, gamma: float = 0.0) -> Codeword:
    """z = mu + eps * exp(log_sigma), differentiable in mu and log sigma."""
    eps = np.asarray(eps)
    if eps.shape != distribution.mu.shape:
        raise DimensionError("eps must match the latent shape", eps.shape, distribution.mu.shape)
    z = nx.add(distribution.mu, nx.mul(nx.exp(distribution.log_sigma), eps))
    return Codeword(z=z, gamma=gamma)


def kl_term(distribution: CodewordDistribution) -> Tensor:
    """Closed-form KL to the standard normal prior, one value per sample."""
    return nx.gaussian_kl(distribution.mu, distribution.log_sigma)


def prvnet_loss(x: Tensor, x_hat: Tensor, distribution: Optional[CodewordDistribution], beta: float) -> LossBreakdown:
    """Sum-of-squares reconstruction plus beta-weighted KL, averaged over the batch.

    ``distribution=None`` is the point-estimate case (no KL term).
    """
    if x.shape != x_hat.shape:
        raise DimensionError("target and reconstruction differ in shape", x.shape, x_hat.shape)
    if beta < 0:
        raise ConfigurationError(f"beta must be non-negative, got {beta}")
    if x.value.ndim == 3:
        x, x_hat = nx.reshape(x, (1,) + x.shape), nx.reshape(x_hat, (1,) + x_hat.shape)
    batch = x.shape[0]
    recon = nx.reduce_sum(nx.square(nx.sub(x_hat, x)), axis=tuple(range(1, x.value.ndim)))
    per_sample = recon
    kl_mean = 0.0
    if distribution is not None:
        kl = kl_term(distribution)
        kl_mean = float(np.mean(kl.value, dtype=np.float64))
        if beta != 0.0:
            per_sample = nx.add(recon, nx.mul(kl, beta))
    objective = nx.mul(nx.reduce_sum(per_sample), 1.0 / batch)
    return LossBreakdown(
        objective=objective,
        recon=float(np.mean(recon.value, dtype=np.float64)),
        kl=kl_mean,
        beta=float(beta),
    )


def save_checkpoint(model: PRVNet, path: Path) -> Path:
    descriptor = orjson.dumps(model.architecture.model_dump(mode="json"), option=orjson.OPT_SORT_KEYS)
    chunks = [
        _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(descriptor)),
        descriptor,
        _TRAILER.pack(model.latent_dim, _MODE_FLAGS[model.mode]),
    ]
    chunks.extend(np.ascontiguousarray(param.value, dtype="<f4").tobytes() for param in model.params.values())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path: Path) -> PRVNet:
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = path.read_bytes()
    try:
        magic, version, descriptor_len = _PREFIX.unpack_from(payload)
    except struct.error:
        raise ArtifactError(f"{path} is too short to be a checkpoint") from None
    if magic != CHECKPOINT_MAGIC:
        raise ArtifactError(f"{path} is not a PRVW checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise ArtifactError(f"{path} has unsupported checkpoint version {version}")
    offset = _PREFIX.size
    architecture = Architecture(**orjson.loads(payload[offset : offset + descriptor_len]))
    offset += descriptor_len
    latent_dim, mode_flag = _TRAILER.unpack_from(payload, offset)
    offset += _TRAILER.size
    if latent_dim != architecture.latent_dim or mode_flag != _MODE_FLAGS[architecture.mode]:
        raise ArtifactError(f"{path} header disagrees with its architecture descriptor")

    params: Dict[str, Tensor] = {}
    for name, shape in parameter_shapes(architecture).items():
        size = int(np.prod(shape))
        end = offset + size * 4
        if end > len(payload):
            raise ArtifactError(f"{path} is truncated inside parameter {name!r}")
        data = np.frombuffer(payload[offset:end], dtype="<f4").reshape(shape)
        params[name] = nx.parameter(data, name=name)
        offset = end
    if offset != len(payload):
        raise ArtifactError(f"{path} has {len(payload) - offset} unexpected trailing bytes")
    return PRVNet(architecture, params)
