"""Averaged k-nearest-neighbour graph and the graph-weighted contrastive loss."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import ConfigError, DimensionError
from .layers import Linear, Module
from .tensor import Tensor

log = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-8


def _squared_distances_from(Z: np.ndarray, i: int, cand: np.ndarray) -> np.ndarray:
    diff = Z[cand] - Z[i]
    return (diff * diff).sum(axis=1)


def knn_adjacency(Z, K: int, chunk_rows: int = 512) -> np.ndarray:
    """Indices of the K nearest other rows of ``Z``, shape (N, K), nearest first.

    Distances are squared Euclidean; equal distances go to the smaller
    index.  A row never lists itself.  The relation is directed (not
    symmetrised).
    """
    Z = np.asarray(Z.data if isinstance(Z, Tensor) else Z, dtype=np.float64)
    if Z.ndim != 2:
        raise DimensionError(f"knn_adjacency expects an (N, d) matrix, got {Z.shape}")
    N = Z.shape[0]
    if K < 1 or K >= N:
        raise ConfigError(f"need 1 <= K < N for a KNN graph, got K={K}, N={N}")
    sq = (Z * Z).sum(axis=1)
    # GEMM-based distances only shortlist candidates; the final order uses
    # exact differences, so rounding in the expansion cannot reorder ties.
    tol = 1e-9 * (sq.max() + 1.0) * max(Z.shape[1], 1)
    out = np.empty((N, K), dtype=np.int64)
    for start in range(0, N, chunk_rows):
        stop = min(N, start + chunk_rows)
        approx = sq[start:stop, None] + sq[None, :] - 2.0 * (Z[start:stop] @ Z.T)
        rows = np.arange(start, stop)
        approx[rows - start, rows] = np.inf
        kth = np.partition(approx, K - 1, axis=1)[:, K - 1]
        for r, i in enumerate(rows):
            cand = np.flatnonzero(approx[r] <= kth[r] + tol)
            exact = _squared_distances_from(Z, i, cand)
            order = np.lexsort((cand, exact))
            out[i] = cand[order[:K]]
    return out


@dataclass
class NeighborGraph:
    """Averaged adjacency S stored as CSR; entries are multiples of 1/M."""

    n: int
    k: int
    n_views: int
    matrix: sp.csr_matrix

    def batch(self, idx, cols=None) -> np.ndarray:
        """Dense S restricted to rows ``idx`` and columns ``cols`` (default ``idx``)."""
        idx = np.asarray(idx)
        cols = idx if cols is None else np.asarray(cols)
        return self.matrix[idx][:, cols].toarray()

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def to_text(self) -> str:
        """Diagnostic dump: one ``i j s_ij`` line per nonzero entry."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return "".join(f"{coo.row[t]} {coo.col[t]} {coo.data[t]:.6g}\n" for t in order)

    def write_text(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def average_graph(adjacencies: Sequence[np.ndarray], n_views: int | None = None) -> NeighborGraph:
    """Mean of per-view directed KNN adjacencies given as (N, K) index arrays."""
    M = len(adjacencies) if n_views is None else n_views
    if M != len(adjacencies) or M == 0:
        raise DimensionError(f"expected {M} adjacency lists, got {len(adjacencies)}")
    N, K = adjacencies[0].shape
    for m, a in enumerate(adjacencies):
        if a.shape != (N, K):
            raise DimensionError(f"view {m}: adjacency shape {a.shape} differs from {(N, K)}")
    rows = np.concatenate([np.repeat(np.arange(N), K) for _ in adjacencies])
    cols = np.concatenate([a.ravel() for a in adjacencies])
    counts = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(N, N))
    counts.sum_duplicates()
    return NeighborGraph(n=N, k=K, n_views=M, matrix=(counts / M).tocsr())


def build_graph(latents: Sequence, K: int) -> NeighborGraph:
    """KNN graph of every view's latent matrix, averaged over views."""
    return average_graph([knn_adjacency(z, K) for z in latents])


class ProjectionHeads(Module):
    """Linear maps of the fused vector and of each view latent to width d_phi."""

    def __init__(self, n_views: int, d_psi: int, d_phi: int = 128,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_phi = d_phi
        self.fused = Linear(n_views * d_psi, d_phi, rng, dtype)
        self.views = [Linear(d_psi, d_phi, rng, dtype) for _ in range(n_views)]

    def project_fused(self, z_fused: Tensor) -> Tensor:
        return self.fused(z_fused)

    def project_views(self, z_views: Sequence[Tensor]) -> list[Tensor]:
        if len(z_views) != len(self.views):
            raise DimensionError(f"expected {len(self.views)} views, got {len(z_views)}")
        return [head(z) for head, z in zip(self.views, z_views)]


@dataclass
class ClampMonitor:
    """Counts loss rows whose contrastive denominator hit the floor."""

    clamped: int = 0
    evaluated: int = 0
    history: list = field(default_factory=list)

    def record(self, n_clamped: int, n_rows: int) -> None:
        self.clamped += n_clamped
        self.evaluated += n_rows
        if n_clamped:
            self.history.append(n_clamped)


def akcl_loss(h_hat: Tensor, h_views: Sequence[Tensor], s_batch, tau: float,
              positives=None, floor: float = DENOMINATOR_FLOOR,
              monitor: ClampMonitor | None = None) -> Tensor:
    """Graph-weighted contrastive loss between fused and per-view embeddings.

    For each row i and view m::

        -log( e^{cos(h_i, v_{p(i)})/tau}
              / (sum_j e^{(1 - S_ij) cos(h_i, v_j)/tau} - e^{1/tau}) )

    averaged as ``1 / (2 * rows)`` times the sum over rows and views.
    ``h_hat`` is (b, d); each ``h_views[m]`` is (n, d) with ``n == b`` for
    the batch-local form; ``positives[i]`` is the column of row i's own
    sample (default ``i``); ``s_batch`` is the (b, n) slice of the averaged
    graph.  Denominators below ``floor`` are clamped and counted.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    b = h_hat.shape[0]
    S = np.asarray(s_batch, dtype=h_hat.dtype)
    n = h_views[0].shape[0]
    if S.shape != (b, n):
        raise DimensionError(f"graph slice shape {S.shape} does not match ({b}, {n})")
    pos = np.arange(b) if positives is None else np.asarray(positives, dtype=np.int64)
    if positives is None and n != b:
        raise DimensionError("positives must be given when column and row sets differ")
    weight = Tensor((1.0 - S) / tau)
    u_hat = T.normalize_rows(h_hat)
    shift = math.exp(1.0 / tau)
    rows = np.arange(b)
    total = None
    for h in h_views:
        if h.shape != (n, h_hat.shape[1]):
            raise DimensionError(f"view embedding shape {h.shape} does not match ({n}, {h_hat.shape[1]})")
        sim = T.matmul(u_hat, T.transpose(T.normalize_rows(h)))
        denom = T.sub(T.sum_(T.exp(T.mul(sim, weight)), axis=1), Tensor(np.asarray(shift, dtype=sim.dtype)))
        low = int((denom.data < floor).sum())
        if monitor is not None:
            monitor.record(low, b)
        if low:
            log.warning("contrastive denominator clamped for %d of %d rows", low, b)
            denom = T.clamp_min(denom, floor)
        term = T.sub(T.sum_(T.log(denom)), T.scale(T.sum_(T.pick(sim, rows, pos)), 1.0 / tau))
        total = term if total is None else T.add(total, term)
    return T.scale(total, 1.0 / (2 * b))


def total_loss(l_rec: Tensor, l_akc: Tensor | None, lam: float) -> Tensor:
    """Reconstruction plus ``lam`` times the contrastive term."""
    if lam < 0:
        raise ConfigError(f"loss balance must be >= 0, got {lam}")
    if l_akc is None or lam == 0:
        return l_rec
    return T.add(l_rec, T.scale(l_akc, lam))
