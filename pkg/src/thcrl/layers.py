"""Parameter containers built on :mod:`thcrl.tensor`."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype, gain: float = 2.0) -> Tensor:
    """Uniform fan-in init with variance ``gain / fan_in``.

    ``gain=2`` suits layers feeding a ReLU; ``gain=1`` preserves variance
    through purely linear layers.
    """
    bound = np.sqrt(3.0 * gain / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Module:
    """Tiny module base: recursive parameter discovery and train/eval flag."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator[Module]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"state is missing parameters: {missing[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float64):
        self.weight = kaiming_uniform(rng, (n_in, n_out), n_in, dtype)
        self.bias = zeros_param((n_out,), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 padding: int = 0, stride: int = 1, dtype=np.float64, gain: float = 2.0):
        self.weight = kaiming_uniform(rng, (c_out, c_in, kernel), c_in * kernel, dtype, gain)
        self.bias = zeros_param((c_out,), dtype)
        self.padding = padding
        self.stride = stride

    def forward(self, x: Tensor, channels_last: bool = False) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding,
                        channels_last=channels_last)


class ConvTranspose1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, rng: np.random.Generator,
                 dtype=np.float64, gain: float = 2.0):
        self.weight = kaiming_uniform(rng, (c_in, c_out, kernel), c_in * kernel // stride, dtype, gain)
        self.bias = zeros_param((c_out,), dtype)
        self.stride = stride

    def forward(self, x: Tensor, channels_last: bool = False) -> Tensor:
        return T.conv1d_transposed(x, self.weight, self.bias, stride=self.stride, channels_last=channels_last)


class MLP(Module):
    """Stack of Linear layers with ReLU (+ optional dropout) between them.

    No activation follows the last layer.
    """

    def __init__(self, dims: Sequence[int], rng: np.random.Generator, dropout: float = 0.0, dtype=np.float64):
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.dims = list(dims)
        self.layers = [Linear(a, b, rng, dtype) for a, b in zip(dims[:-1], dims[1:])]
        self.dropout = dropout

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last:
                x = T.relu(x)
                x = T.dropout(x, self.dropout, self.training, rng)
        return x
