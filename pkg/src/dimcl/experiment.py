"""Training orchestration, evaluation cadence, run reports and sweeps."""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import losses
from .config import SWEEPABLE, ConfigError, ExperimentConfig, field_name, serialize_config, set_value
from .data import (
    AugmentPolicy,
    Augmenter,
    Dataset,
    batch_order,
    load_cifar,
    load_synthetic,
    split_per_class,
    synth_clusters,
)
from .frameworks import (
    DivergenceError,
    FrameworkState,
    ModelConfig,
    build_state,
    embed,
    project_pair,
    save_checkpoint,
    symmetric_losses,
    training_step,
    warmup_cosine_lr,
)
from .losses import EmbeddingPair, LossMixConfig
from .metrics import EmbeddingSet, feature_diversity, knn_accuracy, linear_probe
from .numcore.rng import Rng

METRICS_SCHEMA = "dimcl-metrics-v1"
SWEEP_SCHEMA = "dimcl-sweep-v1"
COLUMNS = ("epoch", "base_loss", "dimcl_loss", "total_loss", "feature_diversity", "probe_acc", "knn_acc")


@dataclass
class EpochRow:
    epoch: int
    base_loss: float
    dimcl_loss: float
    total_loss: float
    feature_diversity: float
    probe_acc: Optional[float] = None
    knn_acc: Optional[float] = None

    def cells(self) -> list[str]:
        out = []
        for name in COLUMNS:
            v = getattr(self, name)
            if v is None:
                out.append("")
            elif isinstance(v, float):
                if not math.isfinite(v):
                    raise ValueError(f"refusing to serialize non-finite {name}")
                out.append(repr(v))
            else:
                out.append(str(v))
        return out


@dataclass
class RunReport:
    rows: list
    config_text: str
    status: str = "ok"
    error: str = ""
    wall_clock: float = 0.0
    steps: int = 0
    out_dir: str = ""

    @property
    def final(self) -> EpochRow:
        return self.rows[-1]

    def metrics_csv(self) -> str:
        lines = [f"# {METRICS_SCHEMA}", ",".join(COLUMNS)]
        lines += [",".join(r.cells()) for r in self.rows]
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        last_eval = next((r for r in reversed(self.rows) if r.probe_acc is not None), None)
        return {
            "schema": "dimcl-summary-v1",
            "status": self.status,
            "error": self.error,
            "epochs_completed": self.rows[-1].epoch if self.rows else 0,
            "steps": self.steps,
            "final": asdict(self.rows[-1]) if self.rows else None,
            "last_eval": asdict(last_eval) if last_eval else None,
            "wall_clock_seconds": self.wall_clock,
            "config": self.config_text,
        }


def read_metrics_csv(text: str) -> list[EpochRow]:
    lines = text.splitlines()
    if not lines or lines[0] != f"# {METRICS_SCHEMA}":
        raise ValueError("missing metrics schema line")
    if lines[1] != ",".join(COLUMNS):
        raise ValueError("unexpected metrics header")
    rows = []
    for line in lines[2:]:
        cells = line.split(",")
        if len(cells) != len(COLUMNS):
            raise ValueError(f"bad metrics row: {line!r}")
        vals = [int(cells[0])] + [float(c) if c else None for c in cells[1:]]
        rows.append(EpochRow(*vals))
    return rows


# --- data ----------------------------------------------------------------------


def _take_per_class(ds: Dataset, k: int) -> Dataset:
    return ds if k <= 0 else split_per_class(ds, k)[0]


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "synthetic":
        ds = synth_clusters(cfg.synth_classes, cfg.synth_dim, cfg.per_class + cfg.test_per_class,
                            cfg.synth_sigma, seed=cfg.seed)
        return split_per_class(ds, cfg.per_class)
    if cfg.dataset == "synthfile":
        ds = load_synthetic(cfg.data_path)
        k = cfg.per_class or int(0.8 * np.bincount(ds.labels).min())
        return split_per_class(ds, k)
    path = Path(cfg.data_path)
    if path.is_dir():
        if cfg.dataset == "cifar10":
            train_files = sorted(path.glob("data_batch_*.bin"))
            test_files = [path / "test_batch.bin"]
        else:
            train_files, test_files = [path / "train.bin"], [path / "test.bin"]
        if not train_files:
            raise FileNotFoundError(f"no CIFAR training batches under {path}")
        train = load_cifar(train_files, cfg.dataset)
        test = load_cifar(test_files, cfg.dataset)
        return _take_per_class(train, cfg.per_class), _take_per_class(test, cfg.test_per_class)
    ds = load_cifar(path, cfg.dataset)
    k = cfg.per_class or int(0.8 * np.bincount(ds.labels).min())
    train, test = split_per_class(ds, k)
    return train, _take_per_class(test, cfg.test_per_class)


def make_augmenter(cfg: ExperimentConfig, kind: str) -> Augmenter:
    if kind == "vector":
        return Augmenter("vector", noise_sigma=cfg.aug_sigma)
    policy = AugmentPolicy(
        crop_scale=(cfg.crop_min, 1.0), flip_prob=cfg.flip_prob, jitter_prob=cfg.jitter_prob,
        grayscale_prob=cfg.grayscale_prob, blur_prob=cfg.blur_prob, solarize_prob=cfg.solarize_prob,
    )
    return Augmenter("image", policy)


def model_config(cfg: ExperimentConfig, input_shape: tuple, n_classes: int) -> ModelConfig:
    return ModelConfig(
        kind=cfg.framework, input_shape=tuple(input_shape), dim=cfg.dim, rep_dim=cfg.rep_dim,
        encoder_hidden=cfg.encoder_hidden, conv_channels=tuple(cfg.conv_channels),
        projector_hidden=cfg.projector_hidden, predictor_hidden=cfg.predictor_hidden,
        n_classes=n_classes, lam=cfg.lam, tau=cfg.tau, base_tau=cfg.base_tau,
        regularizer=cfg.regularizer, dimcl_on=cfg.dimcl_on, center=cfg.center, symmetric=cfg.symmetric,
        ema=cfg.ema, momentum=cfg.momentum, weight_decay=cfg.weight_decay, dtype=cfg.precision,
    )


# --- evaluation -------------------------------------------------------------------


def evaluate(state: FrameworkState, train: Dataset, test: Dataset, cfg: ExperimentConfig) -> tuple[float, float]:
    """(probe accuracy, knn accuracy) on frozen backbone features, both in percent."""
    tr = EmbeddingSet(embed(state, train.x), train.labels)
    te = EmbeddingSet(embed(state, test.x), test.labels)
    knn = knn_accuracy(tr, te, k=min(cfg.knn_k, len(tr)))
    probe = linear_probe(tr, te, epochs=cfg.probe_epochs, lr=cfg.probe_lr, seed=cfg.seed)
    return probe, knn


def _eval_views(cfg: ExperimentConfig, train: Dataset, augmenter: Augmenter):
    """Two fixed augmented views of a seeded random subset, reused at every epoch."""
    gen = Rng(cfg.seed).stream("eval").generator()
    idx = np.sort(gen.permutation(len(train))[: min(cfg.eval_samples, len(train))])
    return (*augmenter(train.x[idx], gen), idx)


def loss_only_pair(cfg: ExperimentConfig) -> EmbeddingPair:
    """The fixed (za, zb) used by loss-only runs: zb is a noisy copy of za."""
    gen = Rng(cfg.seed).stream("pair").generator()
    za = gen.normal(size=(cfg.batch_size, cfg.dim))
    return EmbeddingPair(za, za + 0.5 * gen.normal(size=za.shape))


def _loss_only_row(cfg: ExperimentConfig) -> EpochRow:
    pair = loss_only_pair(cfg)
    base = losses.batch_infonce(pair, cfg.base_tau).value
    reg = losses.abscl_loss if cfg.regularizer == "abscl" else losses.dimcl_loss
    dim = reg(pair, cfg.tau, center=cfg.center).value
    total = base if cfg.regularizer == "none" else losses.combined_loss(base, dim, LossMixConfig(cfg.lam, cfg.tau))
    return EpochRow(0, base, dim, total, feature_diversity(pair))


# --- runs -------------------------------------------------------------------------


def _write_outputs(report: RunReport, state: Optional[FrameworkState], cfg: ExperimentConfig):
    out = Path(report.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.metrics_csv(), encoding="utf-8")
    (out / "config.txt").write_text(report.config_text, encoding="utf-8")
    (out / "summary.json").write_text(json.dumps(report.summary(), indent=2) + "\n", encoding="utf-8")
    if state is not None and cfg.save_checkpoint:
        save_checkpoint(out / "checkpoint.bin", state, report.config_text)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> RunReport:
    """Train per ``cfg``; one metrics row per completed epoch plus the initial row (epoch 0)."""
    t0 = time.perf_counter()
    report = RunReport(rows=[], config_text=serialize_config(cfg), out_dir=cfg.out_dir)
    if cfg.mode == "loss_only":
        report.rows.append(_loss_only_row(cfg))
        report.wall_clock = time.perf_counter() - t0
        if write:
            _write_outputs(report, None, cfg)
        return report

    train, test = load_datasets(cfg)
    if cfg.batch_size > len(train):
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds the training set size {len(train)}")
    augmenter = make_augmenter(cfg, train.kind)
    root = Rng(cfg.seed)
    state = build_state(model_config(cfg, train.x.shape[1:], train.n_classes), root, augmenter)
    data_rng, aug_rng = root.stream("data"), root.stream("augment")
    view_a, view_b, eval_idx = _eval_views(cfg, train, augmenter)
    use_dim = cfg.regularizer != "none"

    def diversity() -> float:
        return feature_diversity(project_pair(state, view_a, view_b))

    base, dim, _ = symmetric_losses(state, view_a, view_b, train.labels[eval_idx])
    b0, d0 = float(base.value), float(dim.value)
    total0 = losses.combined_loss(b0, d0, state.mix) if use_dim else b0
    probe, knn = evaluate(state, train, test, cfg)
    report.rows.append(EpochRow(0, b0, d0, total0, diversity(), probe, knn))

    steps_per_epoch = len(train) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    warmup = cfg.warmup_epochs * steps_per_epoch
    try:
        for epoch in range(1, cfg.epochs + 1):
            sums = np.zeros(3)
            for idx in batch_order(len(train), cfg.batch_size, data_rng, epoch):
                lr = warmup_cosine_lr(state.step, total_steps, warmup, cfg.lr)
                r = training_step(state, train.x[idx], aug_rng.stream(state.step).generator(), lr,
                                  labels=train.labels[idx])
                sums += (r.base_loss, r.dimcl_loss, r.total)
            check = [p for p in state.online_params().values() if not np.all(np.isfinite(p))]
            if check:
                raise DivergenceError(state.step, float("nan"))
            row = EpochRow(epoch, *(float(v) for v in sums / steps_per_epoch), diversity())
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                row.probe_acc, row.knn_acc = evaluate(state, train, test, cfg)
            report.rows.append(row)
    except DivergenceError as e:
        report.status, report.error = "diverged", str(e)
    report.steps = state.step
    report.wall_clock = time.perf_counter() - t0
    if write:
        _write_outputs(report, state if report.status == "ok" else None, cfg)
    return report


# --- sweeps -----------------------------------------------------------------------


@dataclass
class SweepResult:
    param: str
    values: list
    reports: list = field(default_factory=list)

    def long_csv(self) -> str:
        lines = [f"# {SWEEP_SCHEMA} param={self.param}", "param_value,metric,epoch,value"]
        for value, rep in zip(self.values, self.reports):
            for row in rep.rows:
                for metric in COLUMNS[1:]:
                    v = getattr(row, metric)
                    if v is not None:
                        lines.append(f"{value!r},{metric},{row.epoch},{v!r}")
        return "\n".join(lines) + "\n"


def sweep_configs(base: ExperimentConfig, param: str, values: list) -> list[ExperimentConfig]:
    if param not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {param!r}; choose one of {SWEEPABLE}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = []
    for v in values:
        cfg = set_value(base, param, v)
        typed = getattr(cfg, field_name(param))
        out.append(cfg.replace(out_dir=os.path.join(base.out_dir, f"{param}={typed}")))
    return out


def sweep(base: ExperimentConfig, param: str, values: list, workers: Optional[int] = None,
          write: bool = True) -> SweepResult:
    """One run per value with every other setting fixed; runs in parallel up to ``workers``."""
    cfgs = sweep_configs(base, param, values)
    workers = workers or base.workers
    if workers > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cfgs))) as pool:
            reports = list(pool.map(run_experiment, cfgs, [write] * len(cfgs)))
    else:
        reports = [run_experiment(c, write) for c in cfgs]
    typed = [getattr(c, field_name(param)) for c in cfgs]
    result = SweepResult(param, typed, reports)
    if write:
        Path(base.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(base.out_dir) / "sweep.csv").write_text(result.long_csv(), encoding="utf-8")
    return result
