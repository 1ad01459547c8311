"""Minimal dense tensor with reverse-mode automatic differentiation.

Every op takes :class:`Tensor` inputs, computes its output eagerly with numpy
and, when any input requires a gradient, records a backward rule on the
output.  :func:`backward` walks the recorded graph in reverse topological
order and accumulates gradients into the leaves.

Only the operations needed by the clustering pipeline are provided.  Arrays
keep the dtype they were created with; tests run in float64, training may run
in float32.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        raise TypeError("only division by a scalar is supported")

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ----------------------------------------------------------------------
# graph traversal
# ----------------------------------------------------------------------


def tape(loss: Tensor) -> list[Tensor]:
    """Nodes reachable from ``loss`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    The graph is released afterwards, so a second call on the same loss
    raises :class:`ContractError`.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise ContractError("backward() already ran on this graph; rebuild the forward pass")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor with requires_grad=True")

    nodes = tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in nodes:
        if not node.is_leaf:
            node._parents = ()
            node._backward = None
            node._consumed = True


# ----------------------------------------------------------------------
# elementwise and reductions
# ----------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product; ``b`` may broadcast against ``a``."""

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw)


hadamard = mul


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so large |x| never overflows exp
    xd = x.data
    e = np.exp(-np.abs(xd))
    s = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return _make(e, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    keep = x.data >= floor
    return _make(np.maximum(x.data, floor), (x,), lambda g: (g * keep,))


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. Returns ``x`` itself when not training or ``p == 0``."""
    if not train or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum_(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    out = np.transpose(x.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(out, (x,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat along axis {axis}: {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return tuple(parts)

    return _make(out, tensors, bw)


def take_rows(x: Tensor, idx) -> Tensor:
    """Rows ``x[idx]`` of a 2-D tensor; repeated indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(x.data[idx], (x,), bw)


def pick(x: Tensor, rows, cols) -> Tensor:
    """Elements ``x[rows[i], cols[i]]`` of a 2-D tensor as a 1-D tensor."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, cols), g)
        return (gx,)

    return _make(x.data[rows, cols], (x,), bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# ----------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` for ``x`` of shape (n, in) and ``weight`` (in, out)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _make(out, parents, bw)


def cosine_rows(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise cosine similarity of two (n, d) tensors, shape (n,).

    Each norm is floored at ``eps`` so an all-zero row yields 0, not NaN.
    """
    if a.shape != b.shape:
        raise DimensionError(f"cosine_rows: shapes differ {a.shape} vs {b.shape}")
    return sum_(mul(normalize_rows(a, eps), normalize_rows(b, eps)), axis=-1)


def normalize_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row to unit Euclidean norm (norm floored at ``eps``)."""
    ad = a.data
    norm = np.sqrt((ad * ad).sum(axis=-1, keepdims=True))
    floored = norm < eps
    denom = np.where(floored, eps, norm)
    u = ad / denom

    def bw(g):
        # d(a/|a|) = (g - u <u, g>) / |a|; constant denominator where floored
        proj = (g * u).sum(axis=-1, keepdims=True)
        ga = np.where(floored, g / denom, (g - u * proj) / denom)
        return (ga,)

    return _make(u, (a,), bw)


# ----------------------------------------------------------------------
# 1-D convolution family
#
# Kernels work channels-last, (B, L, C), so every kernel tap is one GEMM on
# contiguous rows.  Channels-first callers, (C, L) or (B, C, L), go through
# transpose wrappers.  Weights keep the conventional layouts:
# conv (C_out, C_in, k), transposed conv (C_in, C_out, k).
# ----------------------------------------------------------------------


def _check_nlc(x: Tensor, op: str) -> None:
    if x.ndim != 3:
        raise DimensionError(f"{op}: expected channels-last (B, L, C) input, got {x.shape}")


def _to_nlc(x: Tensor, op: str) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return reshape(transpose(x), (1, x.shape[1], x.shape[0])), True
    if x.ndim == 3:
        return transpose(x, (0, 2, 1)), False
    raise DimensionError(f"{op}: expected (C, L) or (B, C, L) input, got {x.shape}")


def _from_nlc(y: Tensor, single: bool) -> Tensor:
    if single:
        return transpose(reshape(y, y.shape[1:]))
    return transpose(y, (0, 2, 1))


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, channels_last: bool = False) -> Tensor:
    """Cross-correlation (no kernel flip) of ``x`` with ``weight`` (C_out, C_in, k).

    ``x`` is (C_in, L) or (B, C_in, L); with ``channels_last`` it is
    (B, L, C_in) and the result is (B, L_out, C_out).
    L_out = (L + 2 * padding - k) // stride + 1.
    """
    if channels_last:
        return _conv1d_nlc(x, weight, bias, stride, padding)
    xt, single = _to_nlc(x, "conv1d")
    return _from_nlc(_conv1d_nlc(xt, weight, bias, stride, padding), single)


def _tap_ranges(L: int, l_out: int, k: int, stride: int, padding: int):
    """For each tap j: output slice [lo, hi) reading input rows lo*stride + j - padding onward."""
    ranges = []
    for j in range(k):
        lo = max(0, -(-(padding - j) // stride))
        hi = min(l_out, (L - 1 + padding - j) // stride + 1)
        if hi > lo:
            ranges.append((j, lo, hi, lo * stride + j - padding))
    return ranges


def _conv1d_nlc(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int, padding: int) -> Tensor:
    _check_nlc(x, "conv1d")
    B, L, c_in = x.shape
    if weight.ndim != 3 or weight.shape[1] != c_in:
        raise DimensionError(f"conv1d: input with {c_in} channels does not match weight {weight.shape}")
    if stride < 1:
        raise DimensionError(f"conv1d: stride must be >= 1, got {stride}")
    c_out, _, k = weight.shape
    if L + 2 * padding < k:
        raise DimensionError(f"conv1d: kernel {k} larger than padded input length {L + 2 * padding}")
    l_out = (L + 2 * padding - k) // stride + 1
    if stride == 1:
        return _conv1d_nlc_flat(x, weight, bias, padding)
    x2 = x.data.reshape(B * L, c_in)
    # one GEMM per tap on contiguous rows, then shift-and-add the tap outputs
    w_taps = [np.ascontiguousarray(weight.data[:, :, j].T) for j in range(k)]
    taps = _tap_ranges(L, l_out, k, stride, padding)
    out = np.zeros((B, l_out, c_out), dtype=np.result_type(x.data, weight.data))
    for j, lo, hi, i0 in taps:
        yj = (x2 @ w_taps[j]).reshape(B, L, c_out)
        if lo == 0 and hi == l_out == L and i0 == 0 and stride == 1:
            out += yj
        else:
            out[:, lo:hi, :] += yj[:, i0 : i0 + (hi - lo - 1) * stride + 1 : stride, :]
    if bias is not None:
        out += bias.data

    def bw(g):
        g2 = g.reshape(B * l_out, c_out)
        gx = np.zeros((B, L, c_in), dtype=g.dtype) if x.requires_grad else None
        gw = np.zeros(weight.shape, dtype=g.dtype) if weight.requires_grad else None
        for j, lo, hi, i0 in taps:
            rows = slice(i0, i0 + (hi - lo - 1) * stride + 1, stride)
            whole = lo == 0 and hi == l_out == L and i0 == 0 and stride == 1
            if gx is not None:
                gxj = (g2 @ w_taps[j].T).reshape(B, l_out, c_in)
                if whole:
                    gx += gxj
                else:
                    gx[:, rows, :] += gxj[:, lo:hi, :]
            if gw is not None:
                if whole:
                    gw[:, :, j] = (x2.T @ g2).T
                else:
                    xs = np.ascontiguousarray(x.data[:, rows, :]).reshape(-1, c_in)
                    gs = np.ascontiguousarray(g[:, lo:hi, :]).reshape(-1, c_out)
                    gw[:, :, j] = (gs.T @ xs)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


def _conv1d_nlc_flat(x: Tensor, weight: Tensor, bias: Tensor | None, padding: int) -> Tensor:
    """Stride-1 convolution on the batch viewed as one long padded sequence.

    With every sample padded to Lp = L + 2 * padding rows, tap j of output row
    r reads padded row r + j, so each tap is a contiguous row slice of the
    flattened batch.  Rows that straddle two samples only feed output rows
    l >= L_out, which are cut away (and receive zero gradient).
    """
    B, L, c_in = x.shape
    c_out, _, k = weight.shape
    Lp = L + 2 * padding
    l_out = Lp - k + 1
    R = B * Lp - (k - 1)
    if padding:
        xpad = np.zeros((B, Lp, c_in), dtype=x.data.dtype)
        xpad[:, padding : padding + L, :] = x.data
    else:
        xpad = x.data
    xp2 = xpad.reshape(B * Lp, c_in)
    w_taps = [np.ascontiguousarray(weight.data[:, :, j].T) for j in range(k)]
    full = np.zeros((B * Lp, c_out), dtype=np.result_type(x.data, weight.data))
    for j in range(k):
        full[:R] += xp2[j : j + R] @ w_taps[j]
    out = np.ascontiguousarray(full.reshape(B, Lp, c_out)[:, :l_out, :])
    if bias is not None:
        out += bias.data

    def bw(g):
        gpad = np.zeros((B, Lp, c_out), dtype=g.dtype)
        gpad[:, :l_out, :] = g
        G = gpad.reshape(B * Lp, c_out)[:R]
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros((B * Lp, c_in), dtype=g.dtype)
            for j in range(k):
                gxp[j : j + R] += G @ w_taps[j].T
            gx = np.ascontiguousarray(gxp.reshape(B, Lp, c_in)[:, padding : padding + L, :])
        if weight.requires_grad:
            gw = np.empty(weight.shape, dtype=g.dtype)
            for j in range(k):
                gw[:, :, j] = G.T @ xp2[j : j + R]
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, c_out).sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


def conv1d_transposed(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2,
                      channels_last: bool = False) -> Tensor:
    """Transposed convolution with ``weight`` (C_in, C_out, k).

    L_out = (L - 1) * stride + k, so k == stride == 2 doubles the length.
    Layout conventions follow :func:`conv1d`.
    """
    if channels_last:
        return _conv1d_transposed_nlc(x, weight, bias, stride)
    xt, single = _to_nlc(x, "conv1d_transposed")
    return _from_nlc(_conv1d_transposed_nlc(xt, weight, bias, stride), single)


def _conv1d_transposed_nlc(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int) -> Tensor:
    _check_nlc(x, "conv1d_transposed")
    B, L, c_in = x.shape
    if weight.ndim != 3 or weight.shape[0] != c_in:
        raise DimensionError(f"conv1d_transposed: input with {c_in} channels does not match weight {weight.shape}")
    if stride < 1:
        raise DimensionError(f"conv1d_transposed: stride must be >= 1, got {stride}")
    _, c_out, k = weight.shape
    l_out = (L - 1) * stride + k
    span = (L - 1) * stride + 1
    x2 = x.data.reshape(B * L, c_in)
    w2 = weight.data.transpose(0, 2, 1).reshape(c_in, k * c_out)
    # contrib[b, l, j] lands at output position l * stride + j
    contrib = (x2 @ w2).reshape(B, L, k, c_out)
    if k == stride:
        out = contrib.reshape(B, l_out, c_out)
    else:
        out = np.zeros((B, l_out, c_out), dtype=contrib.dtype)
        for j in range(k):
            out[:, j : j + span : stride, :] += contrib[:, :, j, :]
    if bias is not None:
        out += bias.data

    def bw(g):
        if k == stride:
            gwin = g.reshape(B * L, k * c_out)
        else:
            gwin = np.stack([g[:, j : j + span : stride, :] for j in range(k)], axis=2).reshape(B * L, k * c_out)
        gx = (gwin @ w2.T).reshape(B, L, c_in) if x.requires_grad else None
        gw = (x2.T @ gwin).reshape(c_in, k, c_out).transpose(0, 2, 1) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, gwin.reshape(B * L * k, c_out).sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


def maxpool1d(x: Tensor, window: int = 2, channels_last: bool = False) -> Tensor:
    """Non-overlapping max pooling; the gradient goes to the first maximum of each window."""
    if channels_last:
        return _maxpool1d_nlc(x, window)
    xt, single = _to_nlc(x, "maxpool1d")
    return _from_nlc(_maxpool1d_nlc(xt, window), single)


def _maxpool1d_nlc(x: Tensor, window: int) -> Tensor:
    _check_nlc(x, "maxpool1d")
    B, L, C = x.shape
    if L % window:
        raise DimensionError(
            f"maxpool1d: length {L} is not divisible by window {window}; "
            "choose d_psi divisible by 2**U or reduce the depth U"
        )
    win = x.data.reshape(B, L // window, window, C)
    if window == 2:
        # first element wins ties, matching argmax
        first = win[:, :, 0, :] >= win[:, :, 1, :]
        out = np.where(first, win[:, :, 0, :], win[:, :, 1, :])

        def bw(g):
            gx = np.zeros((B, L // window, window, C), dtype=g.dtype)
            gx[:, :, 0, :] = np.where(first, g, 0.0)
            gx[:, :, 1, :] = np.where(first, 0.0, g)
            return (gx.reshape(B, L, C),)

        return _make(out, (x,), bw)
    arg = win.argmax(axis=2)[:, :, None, :]
    out = np.take_along_axis(win, arg, axis=2)[:, :, 0, :]

    def bw(g):
        gx = np.zeros((B, L // window, window, C), dtype=g.dtype)
        np.put_along_axis(gx, arg, g[:, :, None, :], axis=2)
        return (gx.reshape(B, L, C),)

    return _make(out, (x,), bw)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
