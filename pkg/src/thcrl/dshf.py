"""Symmetric hierarchical fusion of per-view latents (1-D UNet over view channels).

The M view latents of one sample are stacked into an M x d_psi signal, one
channel per view.  The network re-weights views, lifts to ``base_channels``
with a 1x1 convolution, runs ``depth`` encoder stages (residual conv block +
max-pool), a bottleneck block, ``depth`` decoder stages (transposed conv,
concatenation with the matching encoder output, residual conv block) and
projects back to M channels.  The result is flattened to length M * d_psi.

All forward passes are vectorised over a leading batch axis.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .layers import Conv1d, ConvTranspose1d, Linear, Module
from .tensor import Tensor


class ChannelAttention(Module):
    """Gate each channel by an MLP of its length-averaged activation.

    ``gate="sigmoid"`` bounds the scaling vector to (0, 1); ``gate="linear"``
    leaves the MLP output unconstrained.
    """

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4,
                 min_hidden: int = 4, gate: str = "sigmoid", dtype=np.float64):
        if gate not in ("sigmoid", "linear"):
            raise ConfigError(f"unknown channel-attention gate {gate!r}")
        hidden = max(channels // reduction, min_hidden)
        self.channels = channels
        self.fc1 = Linear(channels, hidden, rng, dtype)
        self.fc2 = Linear(hidden, channels, rng, dtype)
        self.gate = gate

    def scaling(self, q: Tensor, channels_last: bool = False) -> Tensor:
        """Scaling vector (B, C) for a batched input."""
        pooled = T.mean(q, axis=1 if channels_last else 2)
        s = self.fc2(T.relu(self.fc1(pooled)))
        return T.sigmoid(s) if self.gate == "sigmoid" else s

    def forward(self, q: Tensor, channels_last: bool = False) -> Tensor:
        single = q.ndim == 2
        if single:
            q = T.reshape(q, (1,) + q.shape)
        c = q.shape[2] if channels_last else q.shape[1]
        if q.ndim != 3 or c != self.channels:
            raise DimensionError(f"channel attention built for {self.channels} channels, got {q.shape}")
        s = self.scaling(q, channels_last)
        gate = T.reshape(s, (s.shape[0], 1, c) if channels_last else s.shape + (1,))
        out = T.mul(q, gate)
        return T.reshape(out, out.shape[1:]) if single else out


def channel_attention(can: ChannelAttention, q: Tensor) -> Tensor:
    """Apply ``can`` to a single (C, L) or batched (B, C, L) input."""
    return can(q)


class RcBlock(Module):
    """conv(k3) -> conv(k3) -> channel attention, plus a 1x1-conv shortcut."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, gate: str = "sigmoid",
                 activation: str = "none", dtype=np.float64):
        if activation not in ("none", "relu"):
            raise ConfigError(f"unknown block activation {activation!r}")
        self.c_in = c_in
        self.c_out = c_out
        # the block is linear apart from the gate unless activation="relu",
        # so the convolutions use the variance-preserving linear gain
        self.conv_a = Conv1d(c_in, c_out, 3, rng, padding=1, dtype=dtype,
                             gain=2.0 if activation == "relu" else 1.0)
        self.conv_b = Conv1d(c_out, c_out, 3, rng, padding=1, dtype=dtype, gain=1.0)
        self.can = ChannelAttention(c_out, rng, gate=gate, dtype=dtype)
        self.shortcut = Conv1d(c_in, c_out, 1, rng, dtype=dtype, gain=1.0)
        self.activation = activation

    def forward(self, o: Tensor, channels_last: bool = False) -> Tensor:
        c = o.shape[-1] if channels_last else o.shape[-2]
        if c != self.c_in:
            raise DimensionError(f"RcBlock expects {self.c_in} input channels, got shape {o.shape}")
        h = self.conv_a(o, channels_last)
        if self.activation == "relu":
            h = T.relu(h)
        h = self.conv_b(h, channels_last)
        return T.add(self.can(h, channels_last), self.shortcut(o, channels_last))


def rcblock(block: RcBlock, o: Tensor) -> Tensor:
    return block(o)


def channel_plan(depth: int, base_channels: int) -> dict[str, list[int]]:
    """Channel counts of every stage.

    ``encoder[u]`` is C_u = 2^u C_0 (u = 0..U), ``decoder[u]`` is
    C'_u = 2^(U-u) C_0 and ``concat[u]`` is C''_u = C'_u + C_(U-u+1)
    for u = 1..U (index 0 unused).
    """
    U, c0 = depth, base_channels
    enc = [2**u * c0 for u in range(U + 1)]
    dec = [2 ** (U - u) * c0 for u in range(U + 1)]
    cat = [0] + [2 ** (U - u) * c0 + 2 ** (U - u + 1) * c0 for u in range(1, U + 1)]
    return {"encoder": enc, "decoder": dec, "concat": cat}


class DshfNetwork(Module):
    def __init__(self, n_views: int, d_psi: int, depth: int = 4, base_channels: int = 32,
                 rng: np.random.Generator | None = None, gate: str = "sigmoid",
                 block_activation: str = "none", dtype=np.float64):
        if n_views < 1:
            raise ConfigError("need at least one view")
        if depth < 1:
            raise ConfigError(f"depth U must be >= 1, got {depth}")
        if base_channels < 1:
            raise ConfigError(f"base channel count must be >= 1, got {base_channels}")
        if d_psi % (2**depth):
            raise ConfigError(
                f"d_psi={d_psi} is not divisible by 2**U={2**depth}; adjust d_psi or the depth U"
            )
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_views = n_views
        self.d_psi = d_psi
        self.depth = depth
        self.base_channels = base_channels
        plan = channel_plan(depth, base_channels)
        self.plan = plan
        enc, dec, cat = plan["encoder"], plan["decoder"], plan["concat"]
        blk = dict(rng=rng, gate=gate, activation=block_activation, dtype=dtype)

        # all-ones start: fusion begins unweighted
        self.view_weights = Tensor(np.ones(n_views, dtype=dtype), requires_grad=True)
        self.initial_proj = Conv1d(n_views, base_channels, 1, rng, dtype=dtype, gain=1.0)
        self.encoder_blocks = [RcBlock(enc[u], enc[u + 1], **blk) for u in range(depth)]
        self.bottleneck = RcBlock(enc[depth], enc[depth], **blk)
        self.up_convs = [ConvTranspose1d(dec[u], dec[u + 1], 2, 2, rng, dtype=dtype, gain=1.0) for u in range(depth)]
        self.decoder_blocks = [RcBlock(cat[u + 1], dec[u + 1], **blk) for u in range(depth)]
        self.final_proj = Conv1d(base_channels, n_views, 1, rng, dtype=dtype, gain=1.0)

    def view_attention(self, z: Tensor) -> Tensor:
        """Scale view row m of an (M, d) or (B, M, d) stack by ``view_weights[m]``."""
        if z.shape[-2] != self.n_views:
            raise DimensionError(f"expected {self.n_views} view rows, got shape {z.shape}")
        w = T.reshape(self.view_weights, (self.n_views, 1))
        return T.mul(z, w)

    def _check_views(self, z_views: Sequence[Tensor]) -> None:
        if len(z_views) != self.n_views:
            raise DimensionError(f"expected {self.n_views} views, got {len(z_views)}")
        for m, z in enumerate(z_views):
            if z.ndim != 2 or z.shape[1] != self.d_psi:
                raise DimensionError(f"view {m}: expected (batch, {self.d_psi}), got {z.shape}")

    def forward(self, z_views: Sequence[Tensor], trace: list | None = None,
                drop_skips: Sequence[int] = ()) -> Tensor:
        """Fuse M tensors of shape (B, d_psi) into one (B, M * d_psi) tensor.

        ``trace``, if given, receives ``(stage, channels, length)`` tuples.
        ``drop_skips`` lists encoder outputs p^(u) (1-based) to replace with
        zeros before concatenation; used to probe the skip wiring.
        """
        self._check_views(z_views)
        rec = trace.append if trace is not None else (lambda item: None)
        B, M, d = z_views[0].shape[0], self.n_views, self.d_psi

        # activations are (B, L, C) from here on; weight of view m hits channel m
        z = T.stack(z_views, axis=2)
        rec(("input", M, d))
        za = T.mul(z, self.view_weights)
        z0 = self.initial_proj(za, True)
        rec(("initial_proj", z0.shape[2], z0.shape[1]))

        skips: list[Tensor] = []
        h = z0
        for u, block in enumerate(self.encoder_blocks):
            p = block(h, True)
            skips.append(p)
            rec((f"enc{u + 1}.skip", p.shape[2], p.shape[1]))
            h = T.maxpool1d(p, 2, channels_last=True)
            rec((f"enc{u + 1}.pool", h.shape[2], h.shape[1]))
        h = self.bottleneck(h, True)
        rec(("bottleneck", h.shape[2], h.shape[1]))

        for u in range(self.depth):
            e = self.up_convs[u](h, True)
            rec((f"dec{u + 1}.up", e.shape[2], e.shape[1]))
            level = self.depth - u  # p^(U-u)
            skip = skips[level - 1]
            if level in drop_skips:
                skip = Tensor(np.zeros_like(skip.data))
            xi = T.concat([e, skip], axis=2)
            rec((f"dec{u + 1}.concat", xi.shape[2], xi.shape[1]))
            h = self.decoder_blocks[u](xi, True)
            rec((f"dec{u + 1}.out", h.shape[2], h.shape[1]))

        zhat = self.final_proj(T.add(z0, h), True)
        rec(("final_proj", zhat.shape[2], zhat.shape[1]))
        # flatten view-major: row m of the M x d output occupies [m*d, (m+1)*d)
        fused = T.reshape(T.transpose(zhat, (0, 2, 1)), (B, M * d))
        rec(("flatten", 1, fused.shape[1]))
        return fused


def dshf_forward(net: DshfNetwork, z_views: Sequence[Tensor]) -> tuple[Tensor, list[tuple[str, int, int]]]:
    trace: list[tuple[str, int, int]] = []
    fused = net(z_views, trace=trace)
    return fused, trace


def format_trace(trace: Sequence[tuple[str, int, int]]) -> str:
    """One ``stage CxL`` line per recorded stage."""
    return "\n".join(f"{name} {c}x{l}" for name, c, l in trace) + "\n"


def concat_fallback(z_views: Sequence[Tensor]) -> Tensor:
    """Plain concatenation of view latents; stands in for the fusion network in ablations."""
    widths = {z.shape[1] for z in z_views}
    if len(widths) != 1:
        raise DimensionError(f"views must share one latent width, got {sorted(widths)}")
    return T.concat(list(z_views), axis=1)
