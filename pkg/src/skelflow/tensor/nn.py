"""Parameter containers and layers built on the op set."""

from __future__ import annotations

from typing import Iterator, Optional, Sequence

import numpy as np

from ..errors import InvalidArgumentError
from . import ops
from .core import Tensor


class Parameter(Tensor):
    """A trainable tensor. ``kind`` is one of conv, bias, dense, norm."""

    __slots__ = ("kind",)

    def __init__(self, values, kind: str, name: Optional[str] = None) -> None:
        super().__init__(values, requires_grad=True, name=name)
        self.kind = kind


class Module:
    """Minimal container: parameters and buffers are discovered from attributes."""

    training: bool = True

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key in getattr(self, "_buffers", ()):
            yield prefix + key, getattr(self, key)
        for key, child in self.children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.values for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = dict(self.state_dict())
        missing = sorted(set(expected) - set(state))
        unexpected = sorted(set(state) - set(expected))
        if missing or unexpected:
            raise InvalidArgumentError(
                f"state mismatch: missing {missing}, unexpected {unexpected}"
            )
        for name, p in self.named_parameters():
            if state[name].shape != p.shape:
                raise InvalidArgumentError(
                    f"{name}: checkpoint shape {state[name].shape} != {p.shape}"
                )
            p.values = np.array(state[name], dtype=np.float64)
        for name, _ in list(self.named_buffers()):
            owner, attr = self._resolve(name)
            setattr(owner, attr, np.array(state[name], dtype=np.float64))

    def _resolve(self, dotted: str) -> tuple["Module", str]:
        parts = dotted.split(".")
        node = self
        for part in parts[:-1]:
            node = node[int(part)] if isinstance(node, (list, tuple)) else getattr(node, part)
        return node, parts[-1]  # type: ignore[return-value]


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = ops.glorot_limit(fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_weights(kind: str, rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    if kind == "glorot":
        return glorot_uniform(rng, shape, fan_in, fan_out)
    if kind == "he":
        return he_uniform(rng, shape, fan_in)
    raise InvalidArgumentError(f"unknown weight init {kind!r}")


class Conv1d(Module):
    """Temporal convolution with weights (C_out, f, C_in)."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        filter_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: str = "same",
    ) -> None:
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(
            glorot_uniform(
                rng, (c_out, filter_size, c_in), filter_size * c_in, filter_size * c_out
            ),
            "conv",
        )
        self.bias = Parameter(np.zeros(c_out), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1d_temporal(x, self.weight, self.bias, self.stride, self.padding)


class Conv3d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        rng: np.random.Generator,
        kernel: Sequence[int] = (3, 3, 3),
        stride=1,
        padding: str = "same",
        init: str = "glorot",
    ) -> None:
        kernel = tuple(kernel)
        field = int(np.prod(kernel))
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(
            init_weights(init, rng, (c_out, c_in) + kernel, c_in * field, c_out * field), "conv"
        )
        self.bias = Parameter(np.zeros(c_out), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, init: str = "glorot") -> None:
        self.weight = Parameter(init_weights(init, rng, (n_in, n_out), n_in, n_out), "dense")
        self.bias = Parameter(np.zeros(n_out), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch normalization with running averages for inference.

    Args:
        affine_shape: shape of gamma/beta, broadcastable against the input.
        stat_shape: shape of the running statistics (keepdims layout).
        axes: axes reduced when computing batch statistics.
    """

    _buffers = ("running_mean", "running_var")

    def __init__(
        self,
        affine_shape: Sequence[int],
        stat_shape: Sequence[int],
        axes: Sequence[int],
        eps: float = 1e-5,
        momentum: float = 0.99,
    ) -> None:
        self.axes = tuple(axes)
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(affine_shape), "norm")
        self.beta = Parameter(np.zeros(affine_shape), "norm")
        self.running_mean = np.zeros(stat_shape)
        self.running_var = np.ones(stat_shape)

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training:
            return ops.batchnorm_eval(
                x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps
            )
        out, mu, var = ops.batchnorm_train(x, self.gamma, self.beta, self.axes, self.eps)
        m = self.momentum
        self.running_mean = m * self.running_mean + (1.0 - m) * mu
        self.running_var = m * self.running_var + (1.0 - m) * var
        return out
