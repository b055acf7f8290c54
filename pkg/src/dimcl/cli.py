"""Command line entry point.

    dimcl train <config>
    dimcl sweep <config> --param lambda --values 0,0.1,0.5
    dimcl eval <checkpoint> <dataset>
    dimcl verify

Exit codes: 0 success, 1 failed verification, 2 config error, 3 divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .data import Dataset, load_cifar, load_synthetic, split_per_class
from .experiment import load_datasets, model_config, make_augmenter, run_experiment, sweep
from .frameworks import build_state, embed, load_checkpoint, load_state_tensors
from .metrics import EmbeddingSet, knn_accuracy, linear_probe
from .numcore.rng import Rng
from .verify import run_all

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4


def _with_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out_dir is not None:
        kw["out_dir"] = args.out_dir
    if getattr(args, "workers", None) is not None:
        kw["workers"] = args.workers
    return cfg.replace(**kw) if kw else cfg


def _cmd_train(args) -> int:
    cfg = _with_overrides(load_config(args.config), args)
    report = run_experiment(cfg)
    for row in report.rows:
        extra = "" if row.probe_acc is None else f"  probe {row.probe_acc:.2f}  knn {row.knn_acc:.2f}"
        print(f"epoch {row.epoch:4d}  total {row.total_loss:.5f}  diversity {row.feature_diversity:.4f}{extra}")
    if report.status != "ok":
        print(f"error: {report.error}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"wrote {cfg.out_dir}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _with_overrides(load_config(args.config), args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    result = sweep(cfg, args.param, values)
    code = EXIT_OK
    for value, rep in zip(result.values, result.reports):
        f = rep.final
        print(f"{args.param}={value}: status {rep.status}  diversity {f.feature_diversity:.4f}  "
              f"probe {f.probe_acc}  knn {f.knn_acc}")
        if rep.status != "ok":
            code = EXIT_DIVERGED
    print(f"wrote {Path(cfg.out_dir) / 'sweep.csv'}")
    return code


def _load_eval_dataset(path: Path, cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """A CIFAR directory keeps its train/test split; single files are split 80/20 per class."""
    variant = cfg.dataset if cfg.dataset in ("cifar10", "cifar100") else "cifar10"
    if path.is_dir():
        return load_datasets(cfg.replace(dataset=variant, data_path=str(path)))
    with open(path, "rb") as fh:
        is_synth = fh.read(7) == b"DCLSYN1"
    ds = load_synthetic(path) if is_synth else load_cifar(path, variant)
    return split_per_class(ds, int(0.8 * np.bincount(ds.labels).min()))


def _cmd_eval(args) -> int:
    kind, config_text, tensors = load_checkpoint(args.checkpoint)
    cfg = parse_config(config_text)
    cfg = _with_overrides(cfg, args)
    train, test = _load_eval_dataset(Path(args.dataset), cfg)
    state = build_state(model_config(cfg, train.x.shape[1:], max(train.n_classes, 2)), Rng(cfg.seed),
                        make_augmenter(cfg, train.kind))
    if state.kind != kind:
        raise ConfigError(f"checkpoint kind {kind!r} does not match its config")
    load_state_tensors(state, tensors)
    tr = EmbeddingSet(embed(state, train.x), train.labels)
    te = EmbeddingSet(embed(state, test.x), test.labels)
    result = {
        "framework": kind,
        "knn_acc": knn_accuracy(tr, te, k=min(cfg.knn_k, len(tr))),
        "probe_acc": linear_probe(tr, te, epochs=cfg.probe_epochs, lr=cfg.probe_lr, seed=cfg.seed),
        "train_examples": len(train),
        "test_examples": len(test),
    }
    text = json.dumps(result, indent=2)
    print(text)
    if args.out_dir is not None:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "eval.json").write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_verify(args) -> int:
    results = run_all(seed=args.seed or 0)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", help="override the output directory")
    common.add_argument("--workers", type=int, help="parallel runs for sweeps")

    parser = argparse.ArgumentParser(prog="dimcl", description="DimCL experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", parents=[common], help="train one configuration")
    p.add_argument("config")
    p.set_defaults(func=_cmd_train)
    p = sub.add_parser("sweep", parents=[common], help="sweep lambda, tau or dim")
    p.add_argument("config")
    p.add_argument("--param", required=True, choices=["lambda", "tau", "dim"])
    p.add_argument("--values", required=True, help="comma separated list")
    p.set_defaults(func=_cmd_sweep)
    p = sub.add_parser("eval", parents=[common], help="probe and KNN accuracy of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("dataset", help="DCLSYN1 file, CIFAR batch file or CIFAR directory")
    p.set_defaults(func=_cmd_eval)
    p = sub.add_parser("verify", parents=[common], help="check losses and gradients against oracles")
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        # malformed data files surface as ValueError from the parsers
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
