"""Small layer toolkit on top of :mod:`timeformer.tensor`."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError
from .tensor import Tensor


def make_rng(seed: int) -> np.random.Generator:
    """The one generator type used everywhere (PCG64, seedable, reproducible)."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Parameter container with a training flag.

    Parameters are the gradient-tracking :class:`Tensor` attributes; buffers
    are plain arrays registered through :meth:`register_buffer`. Traversal
    follows attribute insertion order, so names are stable across runs.
    """

    def __init__(self):
        self.training = True
        self._buffers: list[str] = []

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        setattr(self, name, value)
        self._buffers.append(name)

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_") or name == "training":
                continue
            yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield f"{prefix}{name}", getattr(self, name)
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, buf in self.named_buffers():
            state[name] = np.array(buf, dtype=np.float64, copy=True)
        return state

    def load_state_dict(self, state) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        unexpected = set(state) - expected
        if missing or unexpected:
            raise ConfigurationError(
                f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(unexpected)[:5]}"
            )
        for name, value in state.items():
            target = params[name].data if name in params else buffers[name]
            if target.shape != np.shape(value):
                raise DimensionError(f"{name}: expected shape {target.shape}, got {np.shape(value)}")
            target[...] = value

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """``y = x @ weight + bias`` with ``weight`` of shape ``[in, out]``."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = uniform_init(rng, (in_features, out_features), in_features)
        self.bias = zeros_param((out_features,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise DimensionError(f"Linear expects last dim {self.in_features}, got shape {x.shape}")
        y = T.matmul(x, self.weight) if x.ndim >= 2 else T.matmul(x.reshape(1, -1), self.weight).reshape(-1)
        return y + self.bias if self.bias is not None else y


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        if kernel < 1 or kernel % 2 == 0:
            raise ConfigurationError(f"conv kernel must be odd and positive, got {kernel}")
        self.weight = uniform_init(rng, (kernel, in_channels, out_channels), kernel * in_channels)
        self.bias = zeros_param((out_channels,))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias)


class BatchNorm(Module):
    """Per-feature batch normalization over the trailing axis."""

    def __init__(self, features: int, momentum: float = 0.1, eps: float = 1e-6):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = Tensor(np.ones(features), requires_grad=True)
        self.bias = zeros_param((features,))
        self.register_buffer("running_mean", np.zeros(features))
        self.register_buffer("running_var", np.ones(features))

    def forward(self, x: Tensor) -> Tensor:
        return T.batchnorm(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class FeedForward(Module):
    """Two-layer perceptron: Linear -> activation -> Linear."""

    def __init__(self, in_features: int, hidden: int, out_features: int, rng: np.random.Generator,
                 activation: str = "relu"):
        super().__init__()
        if activation not in T.ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}; choose from {sorted(T.ACTIVATIONS)}")
        self.activation = activation
        self.fc1 = Linear(in_features, hidden, rng)
        self.fc2 = Linear(hidden, out_features, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.ACTIVATIONS[self.activation](self.fc1(x)))


class Adam:
    """Adam with bias correction. Gradients are zeroed after every step."""

    def __init__(self, params, lr: float = 0.005, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise ContractError(
                f"{len(missing)} parameter(s) have no gradient (first index {missing[0]}); call backward() first"
            )
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
        self.zero_grad()


def clip_grad_norm(params, max_norm: Optional[float]) -> float:
    total = float(np.sqrt(sum(float((p.grad**2).sum()) for p in params if p.grad is not None)))
    if max_norm is not None and total > max_norm > 0:
        factor = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return total
