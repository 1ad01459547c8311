"""Command-line entry point: ``thcrl {gen,pretrain,finetune,eval,sweep,run}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import trainer
from .checkpoint import load_checkpoint
from .data import load_dataset, make_synthetic, min_max_normalize, save_dataset
from .errors import ConfigError, DivergenceError, LoadError

log = logging.getLogger("thcrl")

# flag dest -> RunConfig field
_CONFIG_FLAGS = {
    "batch_size": "batch_size",
    "pretrain_epochs": "pretrain_epochs",
    "finetune_epochs": "finetune_epochs",
    "tau": "tau",
    "lam": "lam",
    "lr": "lr",
    "d_psi": "d_psi",
    "d_phi": "d_phi",
    "depth_u": "depth_u",
    "knn_k": "knn_k",
    "base_channels": "base_channels",
    "dropout": "dropout",
    "graph_refresh_epochs": "graph_refresh_epochs",
    "denominator_scope": "denominator_scope",
    "eval_every": "eval_every",
    "seed": "seed",
    "precision": "precision",
    "no_dshf": "no_dshf",
    "no_akcl": "no_akcl",
}


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    g.add_argument("--batch-size", type=int)
    g.add_argument("--pretrain-epochs", type=int)
    g.add_argument("--finetune-epochs", type=int)
    g.add_argument("--tau", type=float)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--lr", type=float)
    g.add_argument("--d-psi", type=int)
    g.add_argument("--d-phi", type=int)
    g.add_argument("--depth-u", type=int)
    g.add_argument("--knn-k", type=int)
    g.add_argument("--base-channels", type=int)
    g.add_argument("--dropout", type=float)
    g.add_argument("--graph-refresh-epochs", type=int)
    g.add_argument("--denominator-scope", choices=["batch", "full"])
    g.add_argument("--eval-every", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--precision", choices=["f32", "f64"])
    g.add_argument("--no-dshf", action="store_true", default=None)
    g.add_argument("--no-akcl", action="store_true", default=None)


def resolve_config(args: argparse.Namespace, base: dict | None = None) -> trainer.RunConfig:
    """Defaults, then ``base`` (e.g. a checkpoint's config), then --config, then flags."""
    fields = dict(base or {})
    if getattr(args, "config", None) is not None:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.config}: cannot read config ({exc})") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        if "lambda" in loaded:
            loaded["lam"] = loaded.pop("lambda")
        fields.update(loaded)
    for dest, name in _CONFIG_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            fields[name] = value
    return trainer.RunConfig.from_dict(fields)


def _load(args, cfg: trainer.RunConfig):
    ds = load_dataset(args.data)
    return min_max_normalize(ds) if cfg.normalize else ds


def cmd_gen(args) -> int:
    dims = args.view_dims
    sigmas = args.noise_sigmas if args.noise_sigmas else [args.sigma] * len(dims)
    ds = make_synthetic(args.n_samples, args.n_clusters, dims, sigmas, args.seed, args.min_gap, args.elongation)
    save_dataset(ds, args.out)
    print(f"wrote {ds.n_samples} samples, views {ds.view_dims}, {ds.n_clusters} clusters to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args)
    ds = _load(args, cfg)
    runlog = trainer.RunLog()
    out = Path(args.out)
    trainer.pretrain(ds, cfg, runlog, out)
    runlog.write_csv(out / "runlog.csv")
    print(f"pretrained checkpoint written to {out}")
    return 0


def _checkpoint_and_config(args):
    ckpt = load_checkpoint(args.checkpoint)
    return ckpt, resolve_config(args, ckpt.meta.get("config"))


def cmd_finetune(args) -> int:
    ckpt, cfg = _checkpoint_and_config(args)
    ds = _load(args, cfg)
    out = Path(args.out)
    _, runlog = trainer.finetune(ds, ckpt, cfg, None, out)
    runlog.write_csv(out / "runlog.csv")
    print(f"fine-tuned checkpoint written to {out}")
    return 0


def _print_report(report) -> None:
    if report is None:
        print("notice: dataset has no labels; metrics skipped, embeddings exported")
    else:
        print(report.to_text())


def cmd_eval(args) -> int:
    ckpt, cfg = _checkpoint_and_config(args)
    ds = _load(args, cfg)
    res = trainer.evaluate(ds, ckpt, cfg, args.out)
    _print_report(res.report)
    return 0


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    ds = _load(args, cfg)
    res = trainer.run(ds, cfg, args.out)
    _print_report(res.evaluation.report)
    if res.monitor.clamped:
        print(f"warning: contrastive denominator clamped {res.monitor.clamped} times", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    ds = _load(args, cfg)
    rows = trainer.sweep(ds, cfg, args.lambdas, args.taus, args.out)
    for row in rows:
        metrics = "no labels" if row["acc"] is None else f"acc={row['acc']:.4f} nmi={row['nmi']:.4f} pur={row['pur']:.4f}"
        print(f"lambda={row['lambda']:g} tau={row['tau']:g} {metrics}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thcrl", description="Deep multi-view clustering")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic multi-view dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-samples", type=int, default=600)
    p.add_argument("--n-clusters", type=int, default=3)
    p.add_argument("--view-dims", type=_ints, default=[3, 3, 3])
    p.add_argument("--sigma", type=float, default=0.4, help="noise sigma shared by all views")
    p.add_argument("--noise-sigmas", type=_floats, help="per-view noise sigmas (overrides --sigma)")
    p.add_argument("--elongation", type=float, default=10.0)
    p.add_argument("--min-gap", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=4)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pretrain", help="reconstruction pretraining")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="contrastive fine-tuning from a checkpoint")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="embed, cluster and score a checkpoint")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid over lambda and tau")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--lambdas", type=_floats, default=[1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3])
    p.add_argument("--taus", type=_floats, default=[0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("run", help="pretrain, fine-tune and evaluate")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, LoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
