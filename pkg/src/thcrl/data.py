"""Multi-view dataset container, on-disk format, normalisation and batching."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, LoadError

MANIFEST = "manifest.json"
LABELS_FILE = "labels.i64"


@dataclass
class MultiViewDataset:
    """N samples seen through M views; row i of every view is the same instance."""

    views: list[np.ndarray]
    labels: np.ndarray | None = None

    def __post_init__(self):
        if not self.views:
            raise ConfigError("a dataset needs at least one view")
        self.views = [np.asarray(v) for v in self.views]
        n = self.views[0].shape[0]
        for m, v in enumerate(self.views):
            if v.ndim != 2 or v.shape[0] != n:
                raise ConfigError(f"view {m + 1}: expected {n} rows, got shape {v.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ConfigError(f"labels: expected shape ({n},), got {self.labels.shape}")
            if self.labels.size and self.labels.min() < 0:
                raise ConfigError("labels must be non-negative")

    @property
    def n_samples(self) -> int:
        return self.views[0].shape[0]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def view_dims(self) -> list[int]:
        return [v.shape[1] for v in self.views]

    @property
    def n_clusters(self) -> int | None:
        if self.labels is None:
            return None
        return int(np.unique(self.labels).size)

    def concatenated(self) -> np.ndarray:
        return np.concatenate(self.views, axis=1)


def save_dataset(ds: MultiViewDataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "n_samples": ds.n_samples,
        "view_dims": ds.view_dims,
        "has_labels": ds.labels is not None,
        "dtype": "f32",
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    for m, v in enumerate(ds.views, start=1):
        np.ascontiguousarray(v, dtype="<f4").tofile(path / f"view_{m}.f32")
    if ds.labels is not None:
        np.ascontiguousarray(ds.labels, dtype="<i8").tofile(path / LABELS_FILE)


def load_dataset(path) -> MultiViewDataset:
    """Read a dataset directory (manifest.json, view_{m}.f32, optional labels.i64)."""
    path = Path(path)
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise LoadError(f"{mpath}: manifest not found")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        n = int(manifest["n_samples"])
        dims = [int(d) for d in manifest["view_dims"]]
        has_labels = bool(manifest.get("has_labels", False))
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"{mpath}: malformed manifest ({exc})") from exc
    if manifest.get("dtype", "f32") != "f32":
        raise LoadError(f"{mpath}: unsupported dtype {manifest['dtype']!r}")

    views = []
    for m, d in enumerate(dims, start=1):
        vpath = path / f"view_{m}.f32"
        if not vpath.is_file():
            raise LoadError(f"view {m}: file {vpath.name} not found")
        raw = np.fromfile(vpath, dtype="<f4")
        if raw.size != n * d:
            raise LoadError(f"view {m}: manifest says {n}x{d} = {n * d} floats, file holds {raw.size}")
        if not np.isfinite(raw).all():
            raise LoadError(f"view {m}: contains NaN or infinite values")
        views.append(raw.reshape(n, d).astype(np.float64))

    labels = None
    if has_labels:
        lpath = path / LABELS_FILE
        if not lpath.is_file():
            raise LoadError(f"labels: file {LABELS_FILE} not found")
        labels = np.fromfile(lpath, dtype="<i8")
        if labels.size != n:
            raise LoadError(f"labels: expected {n} entries, file holds {labels.size}")
    try:
        return MultiViewDataset(views, labels)
    except ConfigError as exc:
        raise LoadError(str(exc)) from exc


def min_max_normalize(ds: MultiViewDataset) -> MultiViewDataset:
    """Scale every column of every view to [0, 1]; constant columns become 0."""
    out = []
    for v in ds.views:
        v = np.asarray(v, dtype=np.float64)
        lo = v.min(axis=0)
        span = v.max(axis=0) - lo
        safe = np.where(span > 0, span, 1.0)
        out.append(np.where(span > 0, (v - lo) / safe, 0.0))
    return MultiViewDataset(out, None if ds.labels is None else ds.labels.copy())


def _separated_means(rng: np.random.Generator, k: int, dim: int, min_gap: float,
                     max_tries: int = 1000) -> np.ndarray:
    for _ in range(max_tries):
        means = rng.standard_normal((k, dim))
        gaps = np.sqrt(((means[:, None] - means[None]) ** 2).sum(-1))
        if gaps[np.triu_indices(k, 1)].min() >= min_gap:
            return means
    raise ConfigError(f"could not place {k} means at distance >= {min_gap} in {dim} dimensions")


def _nuisance_direction(means: np.ndarray) -> np.ndarray:
    k, d = means.shape
    if d < k:
        raise ConfigError(f"elongation needs view dimension >= n_clusters ({d} < {k})")
    # the last left-singular vector of the centred means is orthogonal to all mean differences
    u, _, _ = np.linalg.svd((means - means.mean(0)).T, full_matrices=True)
    return u[:, -1]


def make_synthetic(n_samples: int = 600, n_clusters: int = 3, view_dims: Sequence[int] = (3, 3, 3),
                   noise_sigmas: Sequence[float] = (0.1, 0.1, 0.1), seed: int = 0,
                   min_gap: float = 1.0, elongation: float = 0.0) -> MultiViewDataset:
    """Gaussian blobs seen through several views.

    Each cluster gets its own standard-normal mean in every view (redrawn
    until all pairwise gaps are at least ``min_gap``); samples add isotropic
    noise with the view's sigma.  Cluster sizes are as equal as possible.

    ``elongation`` > 0 stretches every cluster along one unit direction per
    view, chosen orthogonal to the span of that view's centred means, with
    standard deviation ``elongation * sigma``.  The stretch carries no class
    information (the clusters stay exactly as separable) but it misleads
    Euclidean K-Means on the raw features.  It needs ``dim >= n_clusters``.
    """
    if n_clusters < 2:
        raise ConfigError("need at least 2 clusters")
    if len(noise_sigmas) != len(view_dims):
        raise ConfigError("one noise sigma per view is required")
    if any(d < 2 for d in view_dims):
        raise ConfigError("every view needs dimension >= 2")
    rng = np.random.default_rng(seed)
    labels = np.arange(n_samples) % n_clusters
    rng.shuffle(labels)
    views = []
    for d, sigma in zip(view_dims, noise_sigmas):
        means = _separated_means(rng, n_clusters, d, min_gap)
        x = means[labels] + sigma * rng.standard_normal((n_samples, d))
        if elongation > 0:
            x += elongation * sigma * rng.standard_normal((n_samples, 1)) * _nuisance_direction(means)[None, :]
        views.append(x)
    return MultiViewDataset(views, labels)


@dataclass
class BatchPlan:
    seed: int
    batch_size: int
    order: np.ndarray

    @property
    def batches(self) -> list[np.ndarray]:
        b = self.batch_size
        return [self.order[i : i + b] for i in range(0, self.order.size, b)]

    @property
    def ranges(self) -> list[tuple[int, int]]:
        n = self.order.size
        return [(i, min(i + self.batch_size, n)) for i in range(0, n, self.batch_size)]


def plan_batches(n: int, batch_size: int, seed) -> BatchPlan:
    """Shuffled partition of range(n); the last batch may be short."""
    if batch_size < 2:
        raise ConfigError(f"batch size must be >= 2, got {batch_size}")
    order = np.random.default_rng(seed).permutation(n)
    return BatchPlan(seed=seed, batch_size=batch_size, order=order)
