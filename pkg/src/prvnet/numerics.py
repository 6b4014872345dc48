"""Dense tensors with reverse-mode automatic differentiation, the layer ops, Adam and He init.

Every differentiable op returns a new :class:`Tensor` whose ``backward_rule`` closure pushes the
incoming gradient into its parents. ``Tensor.backward`` walks the graph in reverse topological
order. Values are numpy arrays in the default dtype (float32 unless switched with
:func:`default_dtype`, which the finite-difference checks use to run in float64).
"""

from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ContractError, DimensionError

LOGGER = logging.getLogger(__name__)

LEAKY_RELU_SLOPE = 0.3
RNG_STREAMS: Tuple[str, ...] = ("dataset", "init", "shuffle", "epsilon", "dropout", "noise")

_DTYPE: np.dtype = np.dtype(np.float32)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
BackwardRule = Callable[[np.ndarray], None]


def get_default_dtype() -> np.dtype:
    return _DTYPE


@contextmanager
def default_dtype(dtype: Union[str, type, np.dtype]) -> Iterator[None]:
    """Temporarily change the dtype new tensors are created in."""
    global _DTYPE
    previous = _DTYPE
    _DTYPE = np.dtype(dtype)
    try:
        yield
    finally:
        _DTYPE = previous


class Tensor:
    """A node of the computation graph: a value, its gradient and how to propagate it."""

    def __init__(
        self,
        data: ArrayLike,
        parents: Sequence["Tensor"] = (),
        backward_rule: Optional[BackwardRule] = None,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        self.value = np.array(data, dtype=_DTYPE)
        if self.value.ndim == 0:
            self.value = self.value.reshape(1)
        self.parents: Tuple[Tensor, ...] = tuple(parents)
        self.requires_grad = requires_grad or any(parent.requires_grad for parent in self.parents)
        self.grad = np.zeros_like(self.value)
        self.backward_rule = backward_rule
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def size(self) -> int:
        return int(self.value.size)

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def backward(self) -> None:
        """Populate ``grad`` on every node reachable from this scalar.

        Leaf gradients accumulate across calls; intermediate gradients are recomputed.
        """
        if self.value.size != 1:
            raise ContractError(f"backward() requires a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        for node in order:
            if node.parents:
                node.grad = np.zeros_like(node.value)
        self.grad = self.grad + np.ones_like(self.value)
        for node in reversed(order):
            if node.backward_rule is not None and node.requires_grad:
                node.backward_rule(node.grad)

    def __add__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(data: Union[Tensor, ArrayLike]) -> Tensor:
    if isinstance(data, Tensor):
        return data
    return Tensor(data)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError:
        raise DimensionError(f"{op} operands do not broadcast", a.shape, b.shape) from None


def add(a: Union[Tensor, ArrayLike], b: Union[Tensor, ArrayLike]) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def rule(grad: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(grad, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(grad, b.shape)

    return Tensor(a.value + b.value, (a, b), rule)


def sub(a: Union[Tensor, ArrayLike], b: Union[Tensor, ArrayLike]) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def rule(grad: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(grad, a.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(grad, b.shape)

    return Tensor(a.value - b.value, (a, b), rule)


def mul(a: Union[Tensor, ArrayLike], b: Union[Tensor, ArrayLike]) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def rule(grad: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(grad * b.value, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(grad * a.value, b.shape)

    return Tensor(a.value * b.value, (a, b), rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of ``[m, k]`` and ``[k, n]`` tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul inner dimensions disagree", a.shape, b.shape)

    def rule(grad: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += grad @ b.value.T
        if b.requires_grad:
            b.grad += a.value.T @ grad

    return Tensor(a.value @ b.value, (a, b), rule)


def exp(x: Tensor) -> Tensor:
    out_value = np.exp(x.value)

    def rule(grad: np.ndarray) -> None:
        x.grad += grad * out_value

    return Tensor(out_value, (x,), rule)


def square(x: Tensor) -> Tensor:
    def rule(grad: np.ndarray) -> None:
        x.grad += 2.0 * grad * x.value

    return Tensor(x.value * x.value, (x,), rule)


def reduce_sum(x: Tensor, axis: Union[None, int, Tuple[int, ...]] = None) -> Tensor:
    if axis is None:
        axes: Tuple[int, ...] = tuple(range(x.value.ndim))
    elif isinstance(axis, int):
        axes = (axis,)
    else:
        axes = tuple(axis)
    axes = tuple(a % x.value.ndim for a in axes)

    def rule(grad: np.ndarray) -> None:
        expanded = grad.reshape([1 if i in axes else d for i, d in enumerate(x.shape)])
        x.grad += np.broadcast_to(expanded, x.shape)

    return Tensor(x.value.sum(axis=axes), (x,), rule)


def mean(x: Tensor) -> Tensor:
    return mul(reduce_sum(x), 1.0 / x.size)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out_value = x.value.reshape(tuple(shape))
    except ValueError:
        raise DimensionError("cannot reshape", x.shape, tuple(shape)) from None

    def rule(grad: np.ndarray) -> None:
        x.grad += grad.reshape(x.shape)

    return Tensor(out_value, (x,), rule)


def _windows(values: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = kh // 2, kw // 2
    padded = np.pad(values, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    return sliding_window_view(padded, (kh, kw), axis=(2, 3))


def conv2d(x: Tensor, kernels: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Stride-1, same-padded cross-correlation.

    ``x`` is ``[B, C_in, H, W]`` (or a single ``[C_in, H, W]`` image), ``kernels`` is
    ``[C_out, C_in, kh, kw]`` with odd ``kh``/``kw``, ``bias`` is ``[C_out]``.
    """
    if x.value.ndim == 3:
        batched = conv2d(reshape(x, (1,) + x.shape), kernels, bias)
        return reshape(batched, batched.shape[1:])
    if x.value.ndim != 4 or kernels.value.ndim != 4:
        raise DimensionError("conv2d expects [B, C, H, W] input and 4-D kernels", x.shape, kernels.shape)
    c_out, c_in, kh, kw = kernels.shape
    if x.shape[1] != c_in:
        raise DimensionError("conv2d channel mismatch", x.shape, kernels.shape)
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError("conv2d same-padding needs odd kernel sizes", kernels.shape)
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError("conv2d bias must have one entry per output channel", bias.shape, (c_out,))

    windows = _windows(x.value, kh, kw)
    out_value = np.einsum("bchwij,ocij->bohw", windows, kernels.value, optimize=True)
    if bias is not None:
        out_value = out_value + bias.value[None, :, None, None]
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def rule(grad: np.ndarray) -> None:
        if kernels.requires_grad:
            kernels.grad += np.einsum("bchwij,bohw->ocij", windows, grad, optimize=True)
        if bias is not None and bias.requires_grad:
            bias.grad += grad.sum(axis=(0, 2, 3))
        if x.requires_grad:
            flipped = kernels.value[:, :, ::-1, ::-1]
            x.grad += np.einsum("bohwij,ocij->bchw", _windows(grad, kh, kw), flipped, optimize=True)

    return Tensor(out_value, parents, rule)


def leaky_relu(x: Tensor, slope: float = LEAKY_RELU_SLOPE) -> Tensor:
    positive = x.value > 0
    scale = np.where(positive, 1.0, slope).astype(x.value.dtype)

    def rule(grad: np.ndarray) -> None:
        x.grad += grad * scale

    return Tensor(x.value * scale, (x,), rule)


def sigmoid(x: Tensor) -> Tensor:
    info = np.finfo(x.value.dtype)
    # tanh form is overflow free; the clip keeps the output strictly inside (0, 1)
    out_value = np.clip(0.5 * (1.0 + np.tanh(0.5 * x.value)), info.tiny, 1.0 - info.epsneg)

    def rule(grad: np.ndarray) -> None:
        x.grad += grad * out_value * (1.0 - out_value)

    return Tensor(out_value, (x,), rule)


def tanh(x: Tensor) -> Tensor:
    out_value = np.tanh(x.value)

    def rule(grad: np.ndarray) -> None:
        x.grad += grad * (1.0 - out_value * out_value)

    return Tensor(out_value, (x,), rule)


ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "leaky-relu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return ACTIVATIONS[kind](x)
    except KeyError:
        raise ConfigurationError(f"Unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}") from None


def gaussian_kl(mu: Tensor, log_sigma: Tensor) -> Tensor:
    """Per-row KL(N(mu, diag sigma^2) || N(0, I)), summed over the last axis."""
    if mu.shape != log_sigma.shape:
        raise DimensionError("mu and log_sigma must share a shape", mu.shape, log_sigma.shape)
    two_s = 2.0 * log_sigma.value
    # expm1(2s) - 2s >= 0 analytically; the clamp absorbs rounding below zero
    spread = np.maximum(np.expm1(two_s) - two_s, 0.0)
    out_value = 0.5 * (mu.value * mu.value + spread).sum(axis=-1)

    def rule(grad: np.ndarray) -> None:
        upstream = grad.reshape(mu.shape[:-1] + (1,))
        if mu.requires_grad:
            mu.grad += upstream * mu.value
        if log_sigma.requires_grad:
            log_sigma.grad += upstream * np.expm1(two_s)

    return Tensor(out_value, (mu, log_sigma), rule)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam with decoupled weight decay, applied to ``params`` in place."""
    state.step += 1
    step = state.step
    lr = state.learning_rate
    correction1 = 1.0 - state.beta1**step
    correction2 = 1.0 - state.beta2**step
    for name, value in params.items():
        grad = grads[name]
        if grad.shape != value.shape:
            raise DimensionError(f"gradient for {name!r} does not match its parameter", grad.shape, value.shape)
        first = state.first_moment.setdefault(name, np.zeros_like(value))
        second = state.second_moment.setdefault(name, np.zeros_like(value))
        if first.shape != value.shape:
            raise DimensionError(f"Adam moments for {name!r} do not match the parameter", first.shape, value.shape)
        if state.weight_decay:
            value -= lr * state.weight_decay * value
        first *= state.beta1
        first += (1.0 - state.beta1) * grad
        second *= state.beta2
        second += (1.0 - state.beta2) * grad * grad
        value -= lr * (first / correction1) / (np.sqrt(second / correction2) + state.epsilon)


def he_init(shape: Sequence[int], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    if fan_in < 1:
        raise ConfigurationError(f"fan_in must be >= 1, got {fan_in}")
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=tuple(shape)).astype(_DTYPE)


def rng_stream(seed: int, purpose: str, *key: int) -> np.random.Generator:
    """Independent generator for one purpose (and optional sub-key such as a sample index)."""
    if purpose not in RNG_STREAMS:
        raise ConfigurationError(f"Unknown RNG stream {purpose!r}; expected one of {RNG_STREAMS}")
    sequence = np.random.SeedSequence(seed, spawn_key=(RNG_STREAMS.index(purpose), *key))
    return np.random.default_rng(sequence)


def finite_difference_gradient(fn: Callable[[], float], array: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central differences of ``fn`` w.r.t. every element of ``array`` (perturbed in place)."""
    estimate = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + step
        upper = fn()
        flat[index] = original - step
        lower = fn()
        flat[index] = original
        estimate.reshape(-1)[index] = (upper - lower) / (2.0 * step)
    return estimate
