"""K-Means on fused embeddings and the ACC / NMI / PUR clustering metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, ContractError


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: list[float] = field(default_factory=list)


def _sq_dist_to_centers(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] + (C * C).sum(1)[None, :] - 2.0 * X @ C.T
    return np.maximum(d, 0.0)


def _inertia(X: np.ndarray, C: np.ndarray, labels: np.ndarray) -> float:
    diff = X - C[labels]
    return float((diff * diff).sum())


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    N = X.shape[0]
    idx = [int(rng.integers(N))]
    closest = _sq_dist_to_centers(X, X[idx]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(N, p=closest / total))
        else:
            # every point coincides with a chosen center
            nxt = int(rng.integers(N))
        idx.append(nxt)
        closest = np.minimum(closest, _sq_dist_to_centers(X, X[nxt : nxt + 1]).ravel())
    return X[idx].copy()


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int) -> ClusterResult:
    k = centers.shape[0]
    labels = None
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = _sq_dist_to_centers(X, centers).argmin(axis=1)
        history.append(_inertia(X, centers, new))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        for c in range(k):
            if counts[c]:
                centers[c] = sums[c] / counts[c]
        for c in np.flatnonzero(counts == 0):
            # re-seed an empty cluster at the point farthest from its center
            far = int(np.argmax(((X - centers[labels]) ** 2).sum(1)))
            centers[c] = X[far]
            labels = labels.copy()
            labels[far] = c
    labels = _sq_dist_to_centers(X, centers).argmin(axis=1)
    return ClusterResult(labels, centers, _inertia(X, centers, labels), n_iter, history)


def kmeans(H, k: int, seed: int = 0, max_iter: int = 300, n_restarts: int = 10) -> ClusterResult:
    """k-means++ seeded Lloyd iterations, best inertia over ``n_restarts``."""
    X = np.asarray(getattr(H, "data", H), dtype=np.float64)
    if X.ndim != 2:
        raise ConfigError(f"kmeans expects an (N, d) matrix, got shape {X.shape}")
    N = X.shape[0]
    if k < 1 or k > N:
        raise ConfigError(f"need 1 <= k <= N, got k={k}, N={N}")
    best = None
    for r in range(max(1, n_restarts)):
        rng = np.random.default_rng([seed, r])
        res = _lloyd(X, _kmeans_pp(X, k, rng), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


# ----------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------


def contingency(pred, truth) -> np.ndarray:
    """Count matrix, rows = predicted clusters, columns = true classes."""
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ContractError(f"label vectors differ in length: {pred.size} vs {truth.size}")
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max(initial=-1) + 1, t.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def accuracy(pred, truth) -> float:
    """Matched fraction under the best one-to-one cluster-to-class mapping."""
    table = contingency(pred, truth)
    if table.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / table.sum())


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth, average: str = "geometric") -> float:
    """Normalised mutual information (natural log).

    ``average`` selects the normaliser: ``"geometric"`` divides by
    sqrt(H(pred) H(truth)), ``"arithmetic"`` by their mean.
    """
    table = contingency(pred, truth)
    n = int(table.sum())
    if n == 0:
        return 0.0
    h_pred = _entropy(table.sum(1), n)
    h_true = _entropy(table.sum(0), n)
    if h_pred == 0.0 or h_true == 0.0:
        return 1.0 if h_pred == h_true else 0.0
    nz = table > 0
    pij = table[nz] / n
    outer = np.outer(table.sum(1), table.sum(0))[nz] / (n * n)
    mi = float((pij * np.log(pij / outer)).sum())
    if average == "geometric":
        norm = np.sqrt(h_pred * h_true)
    elif average == "arithmetic":
        norm = 0.5 * (h_pred + h_true)
    else:
        raise ConfigError(f"unknown NMI normalisation {average!r}")
    return float(min(max(mi / norm, 0.0), 1.0))


def purity(pred, truth) -> float:
    table = contingency(pred, truth)
    if table.size == 0:
        return 0.0
    return float(table.max(axis=1).sum() / table.sum())


@dataclass
class MetricReport:
    acc: float
    nmi: float
    pur: float

    def to_text(self) -> str:
        return f"acc={self.acc:.4f} nmi={self.nmi:.4f} pur={self.pur:.4f}"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def evaluate_labels(pred, truth, nmi_average: str = "geometric") -> MetricReport:
    return MetricReport(accuracy(pred, truth), nmi(pred, truth, nmi_average), purity(pred, truth))
