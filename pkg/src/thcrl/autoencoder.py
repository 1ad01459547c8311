"""Per-view autoencoders and the summed reconstruction loss."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .layers import MLP, Module
from .tensor import Tensor

DEFAULT_HIDDEN = (500, 500, 2000)


class ViewAutoencoder(Module):
    """Encoder MLP D_m -> hidden -> d_psi and its mirrored decoder.

    ReLU and dropout follow every hidden layer; the latent and the
    reconstruction are linear.
    """

    def __init__(self, view_index: int, input_dim: int, d_psi: int = 512,
                 hidden: Sequence[int] = DEFAULT_HIDDEN, dropout: float = 0.1,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(view_index)
        self.view_index = view_index
        self.input_dim = input_dim
        self.d_psi = d_psi
        hidden = list(hidden)
        self.encoder = MLP([input_dim, *hidden, d_psi], rng, dropout, dtype)
        self.decoder = MLP([d_psi, *reversed(hidden), input_dim], rng, dropout, dtype)

    def encode(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f"view {self.view_index}: expected width {self.input_dim}, got {x.shape}")
        return self.encoder(x, rng)

    def decode(self, z: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.d_psi:
            raise DimensionError(f"view {self.view_index}: expected latent width {self.d_psi}, got {z.shape}")
        return self.decoder(z, rng)

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        z = self.encode(x, rng)
        return z, self.decode(z, rng)


def encode(ae: ViewAutoencoder, x: Tensor) -> Tensor:
    return ae.encode(x)


def decode(ae: ViewAutoencoder, z: Tensor) -> Tensor:
    return ae.decode(z)


def squared_error(x: Tensor, x_hat: Tensor) -> Tensor:
    if x.shape != x_hat.shape:
        raise DimensionError(f"reconstruction shape {x_hat.shape} does not match input {x.shape}")
    diff = T.sub(x, x_hat)
    return T.sum_(T.mul(diff, diff))


def reconstruction_error(xs: Sequence[Tensor], x_hats: Sequence[Tensor]) -> Tensor:
    """Sum over views and samples of squared reconstruction error (not a mean)."""
    if len(xs) != len(x_hats):
        raise DimensionError(f"{len(xs)} views but {len(x_hats)} reconstructions")
    total = squared_error(xs[0], x_hats[0])
    for x, xh in zip(xs[1:], x_hats[1:]):
        total = T.add(total, squared_error(x, xh))
    return total


def reconstruction_loss(xs: Sequence[Tensor], aes: Sequence[ViewAutoencoder],
                        rng: np.random.Generator | None = None) -> Tensor:
    if len(xs) != len(aes):
        raise DimensionError(f"{len(xs)} views but {len(aes)} autoencoders")
    return reconstruction_error(xs, [ae(x, rng)[1] for ae, x in zip(aes, xs)])
