"""Two-phase training (reconstruction pretraining, then contrastive fine-tuning),
evaluation, and hyperparameter sweeps."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .akcl import ClampMonitor, NeighborGraph, ProjectionHeads, akcl_loss, build_graph, total_loss
from .autoencoder import DEFAULT_HIDDEN, ViewAutoencoder, reconstruction_error
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .cluster import MetricReport, evaluate_labels, kmeans
from .data import MultiViewDataset, plan_batches
from .dshf import DshfNetwork, concat_fallback
from .errors import ConfigError, DivergenceError
from .layers import Module
from .optim import Adam
from .tensor import Tensor

log = logging.getLogger(__name__)

RUNLOG_HEADER = ["epoch", "phase", "loss_rec", "loss_akc", "loss_total", "acc", "nmi", "pur", "wall_ms"]
_PHASE_IDS = {"pretrain": 1, "finetune": 2}


@dataclass
class RunConfig:
    batch_size: int = 256
    pretrain_epochs: int = 200
    finetune_epochs: int = 200
    tau: float = 0.5
    d_psi: int = 512
    d_phi: int = 128
    depth_u: int = 4
    knn_k: int = 10
    lr: float = 3e-4
    lam: float = 1.0
    dropout: float = 0.1
    base_channels: int = 4
    seed: int = 0
    no_dshf: bool = False
    no_akcl: bool = False
    graph_refresh_epochs: int = 0
    denominator_scope: str = "batch"
    ae_hidden: tuple = DEFAULT_HIDDEN
    can_gate: str = "sigmoid"
    block_activation: str = "none"
    nmi_average: str = "geometric"
    eval_every: int = 10
    kmeans_restarts: int = 10
    kmeans_max_iter: int = 300
    precision: str = "f64"
    normalize: bool = True

    def __post_init__(self):
        self.ae_hidden = tuple(int(h) for h in self.ae_hidden)
        self.validate()

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    @property
    def effective_lambda(self) -> float:
        return 0.0 if self.no_akcl else self.lam

    def validate(self, n_samples: int | None = None) -> None:
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.depth_u < 1 or self.d_psi % (2**self.depth_u):
            raise ConfigError(f"d_psi={self.d_psi} must be divisible by 2**U with U={self.depth_u} >= 1")
        if self.batch_size < 2:
            raise ConfigError(f"batch size must be >= 2, got {self.batch_size}")
        if self.denominator_scope not in ("batch", "full"):
            raise ConfigError(f"denominator_scope must be 'batch' or 'full', got {self.denominator_scope!r}")
        if min(self.pretrain_epochs, self.finetune_epochs, self.graph_refresh_epochs) < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.knn_k < 1:
            raise ConfigError(f"K must be >= 1, got {self.knn_k}")
        if n_samples is not None and self.knn_k >= n_samples:
            raise ConfigError(f"K={self.knn_k} must be smaller than the number of samples {n_samples}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ae_hidden"] = list(self.ae_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config fields: {unknown}")
        return cls(**d)

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


class ThcrlModel(Module):
    """Autoencoders, fusion network and projection heads of one run.

    Each component draws its initial weights from its own child seed, so
    toggling an ablation never shifts another component's initialisation.
    """

    def __init__(self, view_dims: Sequence[int], cfg: RunConfig):
        M = len(view_dims)
        children = np.random.SeedSequence(cfg.seed).spawn(M + 2)
        dt = cfg.dtype
        self.view_dims = list(view_dims)
        self.autoencoders = [
            ViewAutoencoder(m, d, cfg.d_psi, cfg.ae_hidden, cfg.dropout, np.random.default_rng(children[m]), dt)
            for m, d in enumerate(view_dims)
        ]
        self.dshf = DshfNetwork(M, cfg.d_psi, cfg.depth_u, cfg.base_channels, np.random.default_rng(children[M]),
                                gate=cfg.can_gate, block_activation=cfg.block_activation, dtype=dt)
        self.heads = ProjectionHeads(M, cfg.d_psi, cfg.d_phi, np.random.default_rng(children[M + 1]), dt)
        self.no_dshf = cfg.no_dshf

    def encode(self, xs: Sequence[Tensor], rng=None) -> list[Tensor]:
        return [ae.encode(x, rng) for ae, x in zip(self.autoencoders, xs)]

    def fuse(self, zs: Sequence[Tensor]) -> Tensor:
        return concat_fallback(zs) if self.no_dshf else self.dshf(zs)

    def embed(self, zs: Sequence[Tensor]) -> Tensor:
        return self.heads.project_fused(self.fuse(zs))

    def autoencoder_parameters(self) -> list[Tensor]:
        return [p for ae in self.autoencoders for p in ae.parameters()]


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    loss_rec: float
    loss_akc: float
    loss_total: float
    acc: float | None = None
    nmi: float | None = None
    pur: float | None = None
    wall_ms: float = 0.0


@dataclass
class RunLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        if self.records:
            prev = [r for r in self.records if r.phase == rec.phase]
            if prev and rec.epoch <= prev[-1].epoch:
                raise ValueError(f"{rec.phase}: epoch {rec.epoch} does not follow {prev[-1].epoch}")
        self.records.append(rec)

    def phase(self, name: str) -> list[EpochRecord]:
        return [r for r in self.records if r.phase == name]

    def to_csv(self) -> str:
        def fmt(v):
            if v is None:
                return ""
            return format(float(v), ".17g")

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RUNLOG_HEADER)
        for r in self.records:
            w.writerow([r.epoch, r.phase, fmt(r.loss_rec), fmt(r.loss_akc), fmt(r.loss_total),
                        fmt(r.acc), fmt(r.nmi), fmt(r.pur), f"{r.wall_ms:.1f}"])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def _as_tensors(ds: MultiViewDataset, idx, dtype) -> list[Tensor]:
    return [Tensor(v[idx], dtype=dtype) for v in ds.views]


def _checkpoint(model: ThcrlModel, cfg: RunConfig, phase: str) -> Checkpoint:
    return Checkpoint(model.state_dict(), {"config": cfg.to_dict(), "view_dims": model.view_dims, "phase": phase})


def build_model(view_dims: Sequence[int], cfg: RunConfig, ckpt: Checkpoint | None = None) -> ThcrlModel:
    model = ThcrlModel(view_dims, cfg)
    if ckpt is not None:
        if list(ckpt.meta.get("view_dims", view_dims)) != list(view_dims):
            raise ConfigError(f"checkpoint was trained on views {ckpt.meta['view_dims']}, data has {list(view_dims)}")
        model.load_state_dict(ckpt.state)
    return model


def latents(model: ThcrlModel, ds: MultiViewDataset, cfg: RunConfig) -> list[np.ndarray]:
    """Eval-mode view latents of the whole dataset."""
    model.eval()
    out = [[] for _ in range(ds.n_views)]
    with T.no_grad():
        for lo in range(0, ds.n_samples, cfg.batch_size):
            idx = np.arange(lo, min(lo + cfg.batch_size, ds.n_samples))
            for m, z in enumerate(model.encode(_as_tensors(ds, idx, cfg.dtype))):
                out[m].append(z.data)
    return [np.concatenate(parts) for parts in out]


def embeddings(model: ThcrlModel, ds: MultiViewDataset, cfg: RunConfig) -> np.ndarray:
    """Eval-mode fused embeddings (N, d_phi) of the whole dataset."""
    model.eval()
    parts = []
    with T.no_grad():
        for lo in range(0, ds.n_samples, cfg.batch_size):
            idx = np.arange(lo, min(lo + cfg.batch_size, ds.n_samples))
            parts.append(model.embed(model.encode(_as_tensors(ds, idx, cfg.dtype))).data)
    return np.concatenate(parts)


def cluster_metrics(H: np.ndarray, ds: MultiViewDataset, cfg: RunConfig) -> tuple[MetricReport | None, np.ndarray | None]:
    if ds.labels is None:
        return None, None
    res = kmeans(H, ds.n_clusters, seed=cfg.seed, max_iter=cfg.kmeans_max_iter, n_restarts=cfg.kmeans_restarts)
    return evaluate_labels(res.assignments, ds.labels, cfg.nmi_average), res.assignments


def _check_finite(value: float, phase: str, epoch: int) -> None:
    if not math.isfinite(value):
        raise DivergenceError(phase, epoch, value)


def _maybe_metrics(model, ds, cfg, epoch, total_epochs) -> MetricReport | None:
    if ds.labels is None or cfg.eval_every <= 0:
        return None
    if epoch % cfg.eval_every and epoch != total_epochs:
        return None
    report, _ = cluster_metrics(embeddings(model, ds, cfg), ds, cfg)
    return report


def pretrain(ds: MultiViewDataset, cfg: RunConfig, runlog: RunLog | None = None,
             out_dir=None) -> Checkpoint:
    """Minimise the reconstruction loss alone for ``cfg.pretrain_epochs`` epochs."""
    cfg.validate(ds.n_samples)
    runlog = runlog if runlog is not None else RunLog()
    model = build_model(ds.view_dims, cfg)
    opt = Adam(model.autoencoder_parameters(), lr=cfg.lr)
    drop_rng = np.random.default_rng([cfg.seed, _PHASE_IDS["pretrain"], 0])
    for epoch in range(1, cfg.pretrain_epochs + 1):
        t0 = time.perf_counter()
        model.train()
        plan = plan_batches(ds.n_samples, cfg.batch_size, [cfg.seed, _PHASE_IDS["pretrain"], epoch])
        epoch_rec = 0.0
        for idx in plan.batches:
            xs = _as_tensors(ds, idx, cfg.dtype)
            xhats = [ae(x, drop_rng)[1] for ae, x in zip(model.autoencoders, xs)]
            loss = reconstruction_error(xs, xhats)
            _check_finite(loss.item(), "pretrain", epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_rec += loss.item()
        report = _maybe_metrics(model, ds, cfg, epoch, cfg.pretrain_epochs)
        runlog.append(EpochRecord(epoch, "pretrain", epoch_rec, 0.0, epoch_rec,
                                  *(_report_tuple(report)), wall_ms=1000 * (time.perf_counter() - t0)))
        log.info("pretrain epoch %d: loss_rec=%.6g", epoch, epoch_rec)
    ckpt = _checkpoint(model, cfg, "pretrain")
    if out_dir is not None:
        save_checkpoint(ckpt, out_dir, cfg.precision)
    return ckpt


def _report_tuple(report: MetricReport | None):
    if report is None:
        return (None, None, None)
    return (report.acc, report.nmi, report.pur)


def _contrastive_term(model: ThcrlModel, zs: list[Tensor], idx: np.ndarray, graph: NeighborGraph,
                      cfg: RunConfig, monitor: ClampMonitor, all_zs: list[Tensor] | None = None) -> Tensor:
    h_hat = model.embed(zs)
    if all_zs is None:
        h_views = model.heads.project_views(zs)
        return akcl_loss(h_hat, h_views, graph.batch(idx), cfg.tau, monitor=monitor)
    cols = np.arange(graph.n)
    h_views = model.heads.project_views(all_zs)
    return akcl_loss(h_hat, h_views, graph.batch(idx, cols), cfg.tau, positives=idx, monitor=monitor)


def finetune(ds: MultiViewDataset, ckpt: Checkpoint, cfg: RunConfig, runlog: RunLog | None = None,
             out_dir=None, monitor: ClampMonitor | None = None) -> tuple[Checkpoint, RunLog]:
    """Minimise reconstruction + lambda * contrastive loss for ``cfg.finetune_epochs`` epochs.

    The neighbour graph is built once from the incoming latents and, when
    ``graph_refresh_epochs`` is positive, rebuilt every that many epochs.
    """
    cfg.validate(ds.n_samples)
    runlog = runlog if runlog is not None else RunLog()
    monitor = monitor if monitor is not None else ClampMonitor()
    model = build_model(ds.view_dims, cfg, ckpt)
    lam = cfg.effective_lambda
    use_akcl = lam > 0
    params = model.autoencoder_parameters()
    if use_akcl:
        params += model.heads.parameters()
        if not cfg.no_dshf:
            params += model.dshf.parameters()
    opt = Adam(params, lr=cfg.lr)
    drop_rng = np.random.default_rng([cfg.seed, _PHASE_IDS["finetune"], 0])
    graph = build_graph(latents(model, ds, cfg), cfg.knn_k) if use_akcl else None
    full_scope = cfg.denominator_scope == "full"

    for epoch in range(1, cfg.finetune_epochs + 1):
        t0 = time.perf_counter()
        if use_akcl and cfg.graph_refresh_epochs and epoch > 1 and (epoch - 1) % cfg.graph_refresh_epochs == 0:
            graph = build_graph(latents(model, ds, cfg), cfg.knn_k)
        model.train()
        plan = plan_batches(ds.n_samples, cfg.batch_size, [cfg.seed, _PHASE_IDS["finetune"], epoch])
        sums = np.zeros(3)
        for idx in plan.batches:
            if full_scope and use_akcl:
                all_x = _as_tensors(ds, np.arange(ds.n_samples), cfg.dtype)
                all_z = model.encode(all_x, drop_rng)
                zs = [T.take_rows(z, idx) for z in all_z]
                xs = [T.take_rows(x, idx) for x in all_x]
            else:
                all_z = None
                xs = _as_tensors(ds, idx, cfg.dtype)
                zs = model.encode(xs, drop_rng)
            xhats = [ae.decode(z, drop_rng) for ae, z in zip(model.autoencoders, zs)]
            l_rec = reconstruction_error(xs, xhats)
            l_akc = _contrastive_term(model, zs, idx, graph, cfg, monitor, all_z) if use_akcl else None
            loss = total_loss(l_rec, l_akc, lam)
            _check_finite(loss.item(), "finetune", epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums += (l_rec.item(), 0.0 if l_akc is None else l_akc.item(), loss.item())
        report = _maybe_metrics(model, ds, cfg, epoch, cfg.finetune_epochs)
        runlog.append(EpochRecord(epoch, "finetune", *sums, *(_report_tuple(report)),
                                  wall_ms=1000 * (time.perf_counter() - t0)))
        log.info("finetune epoch %d: loss_rec=%.6g loss_akc=%.6g total=%.6g%s", epoch, *sums,
                 f" [{report.to_text()}]" if report else "")
    out = _checkpoint(model, cfg, "finetune")
    if out_dir is not None:
        save_checkpoint(out, out_dir, cfg.precision)
    return out, runlog


@dataclass
class EvalResult:
    report: MetricReport | None
    embeddings: np.ndarray
    assignments: np.ndarray | None


def evaluate(ds: MultiViewDataset, ckpt: Checkpoint, cfg: RunConfig, out_dir=None) -> EvalResult:
    """Eval-mode embeddings of every sample, then K-Means with the true class count."""
    model = build_model(ds.view_dims, cfg, ckpt)
    H = embeddings(model, ds, cfg)
    report, assignments = cluster_metrics(H, ds, cfg)
    if report is None:
        log.warning("dataset has no labels; skipping metrics and exporting embeddings only")
    if out_dir is not None:
        write_outputs(out_dir, H, report)
    return EvalResult(report, H, assignments)


def write_outputs(out_dir, H: np.ndarray, report: MetricReport | None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(H, dtype="<f4").tofile(out / "embeddings.f32")
    (out / "embeddings.shape.json").write_text(
        json.dumps({"shape": list(H.shape), "dtype": "f32", "order": "row-major", "endianness": "little"}),
        encoding="utf-8")
    if report is not None:
        (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")


@dataclass
class RunResult:
    pretrained: Checkpoint
    finetuned: Checkpoint
    runlog: RunLog
    evaluation: EvalResult
    monitor: ClampMonitor


def run(ds: MultiViewDataset, cfg: RunConfig, out_dir=None, pretrained: Checkpoint | None = None) -> RunResult:
    """Pretrain (unless a checkpoint is supplied), fine-tune and evaluate."""
    out = Path(out_dir) if out_dir is not None else None
    runlog = RunLog()
    if pretrained is None:
        pretrained = pretrain(ds, cfg, runlog, None if out is None else out / "pretrained")
    monitor = ClampMonitor()
    finetuned, runlog = finetune(ds, pretrained, cfg, runlog, None if out is None else out / "finetuned", monitor)
    evaluation = evaluate(ds, finetuned, cfg, out)
    if out is not None:
        runlog.write_csv(out / "runlog.csv")
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2), encoding="utf-8")
    return RunResult(pretrained, finetuned, runlog, evaluation, monitor)


def concat_baseline(ds: MultiViewDataset, cfg: RunConfig) -> MetricReport:
    """K-Means on the plain concatenation of all views (no learning)."""
    report, _ = cluster_metrics(ds.concatenated(), ds, cfg)
    return report


def sweep(ds: MultiViewDataset, cfg: RunConfig, lambdas: Sequence[float], taus: Sequence[float],
          out_dir=None) -> list[dict]:
    """One fine-tune + evaluation per (lambda, tau) grid point from a shared pretraining."""
    if not lambdas or not taus:
        raise ConfigError("sweep grids must be nonempty")
    pretrained = pretrain(ds, cfg)
    rows = []
    for lam in lambdas:
        for tau in taus:
            point = cfg.replace(lam=float(lam), tau=float(tau))
            res = run(ds, point, pretrained=pretrained)
            rep = res.evaluation.report
            rows.append({"lambda": float(lam), "tau": float(tau),
                         "acc": None if rep is None else rep.acc,
                         "nmi": None if rep is None else rep.nmi,
                         "pur": None if rep is None else rep.pur})
            log.info("sweep lambda=%g tau=%g: %s", lam, tau, rep.to_text() if rep else "no labels")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["lambda", "tau", "acc", "nmi", "pur"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return rows


def load_run_checkpoint(path) -> tuple[Checkpoint, RunConfig]:
    ckpt = load_checkpoint(path)
    return ckpt, RunConfig.from_dict(ckpt.meta["config"])
