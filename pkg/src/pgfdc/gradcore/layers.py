"""Layer primitives and a small Module base class."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

RELU_GAIN = float(np.sqrt(2.0))


def orthogonal(shape: Sequence[int], gain: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal init over (fan_out, fan_in) with the given gain."""
    rows = shape[0]
    cols = int(np.prod(shape[1:]))
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols]).reshape(shape)


class Module:
    """Container that discovers parameters from attributes.

    Parameters are :class:`Tensor` attributes with ``requires_grad``; child
    modules are walked recursively and names are dotted paths.
    """

    input_shape: tuple[int, ...] | None = None

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{k}: expected {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def check_input(self, x: np.ndarray | Tensor) -> Tensor:
        """Validate a batched input against ``input_shape`` and finiteness."""
        x = T.as_tensor(x)
        if self.input_shape is not None and tuple(x.shape[1:]) != tuple(self.input_shape):
            raise ShapeError(
                f"{type(self).__name__} expects (N, {', '.join(map(str, self.input_shape))}), got {x.shape}"
            )
        if not np.all(np.isfinite(x.data)):
            raise ValueError(f"{type(self).__name__} received non-finite input")
        return x


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 1.0):
        self.weight = Tensor(orthogonal((n_out, n_in), gain, rng).T.copy(), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)
        self.input_shape = (n_in,)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.weight.shape[0]:
            raise ShapeError(f"Dense expects (N, {self.weight.shape[0]}), got {x.shape}")
        return T.matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: np.random.Generator,
        gain: float = 1.0,
        padding: int = 0,
    ):
        self.weight = Tensor(orthogonal((c_out, c_in, kernel, kernel), gain, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.padding)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.matmul(x, w) + b


relu = T.relu
tanh = T.tanh
elu = T.elu
sigmoid = T.sigmoid
softmax = T.softmax
log_softmax = T.log_softmax
flatten = T.flatten
concat = T.concat
maxpool2x2 = T.maxpool2x2
conv2d = T.conv2d


def mse(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over all elements."""
    d = pred - T.as_tensor(target)
    return (d * d).mean()


def cross_entropy(probs: Tensor, target) -> Tensor:
    """Mean of ``-log p[target]`` over the batch; ``probs`` is (N, K)."""
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    return -T.log(T.take_rows(probs, target)).mean()


def cross_entropy_logits(logits: Tensor, target) -> Tensor:
    """Numerically stable cross entropy from unnormalised scores."""
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    return -T.take_rows(T.log_softmax(logits), target).mean()


def one_hot(idx, n: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"action index out of range [0, {n}): {idx}")
    out = np.zeros((idx.size, n))
    out[np.arange(idx.size), idx] = 1.0
    return out
