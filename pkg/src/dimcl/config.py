"""Experiment configuration: a flat ``key = value`` document.

Grammar: one ``key = value`` per line; ``#`` starts a comment; blank lines
are ignored. Booleans are ``true``/``false``; tuples are comma lists.
Unknown keys are errors. Missing keys take the defaults below.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields

from . import losses


class ConfigError(ValueError):
    pass


DATASETS = ("synthetic", "synthfile", "cifar10", "cifar100")
FRAMEWORKS = ("simclr", "byol", "simsiam", "supervised")
REGULARIZERS = ("dimcl", "abscl", "none")
SWEEPABLE = ("lambda", "tau", "dim")


@dataclass
class ExperimentConfig:
    # data
    dataset: str = "synthetic"
    data_path: str = ""
    synth_classes: int = 3
    synth_dim: int = 32
    synth_sigma: float = 0.1
    per_class: int = 300
    test_per_class: int = 100
    aug_sigma: float = 0.1
    crop_min: float = 0.2
    flip_prob: float = 0.5
    jitter_prob: float = 0.8
    grayscale_prob: float = 0.2
    blur_prob: float = 0.0
    solarize_prob: float = 0.0
    # model and loss
    framework: str = "simsiam"
    regularizer: str = "dimcl"
    dim: int = 256
    lam: float = losses.DEFAULT_LAMBDA
    tau: float = losses.DEFAULT_TAU
    base_tau: float = 0.1
    center: bool = False
    dimcl_on: str = "projector"
    symmetric: bool = True
    rep_dim: int = 128
    encoder_hidden: int = 128
    conv_channels: tuple = (32, 64, 128, 256)
    projector_hidden: int = 512
    predictor_hidden: int = 128
    ema: float = 0.99
    # optimization
    epochs: int = 30
    batch_size: int = 256
    base_lr: float = 0.1
    warmup_epochs: int = 10
    momentum: float = 0.9
    weight_decay: float = 1e-5
    seed: int = 0
    precision: str = "float64"
    # evaluation and output
    eval_every: int = 5
    eval_samples: int = 512
    knn_k: int = 20
    probe_epochs: int = 100
    probe_lr: float = 0.3
    mode: str = "train"
    out_dir: str = "runs/default"
    workers: int = 1
    save_checkpoint: bool = True

    @property
    def lr(self) -> float:
        """Base lr scaled linearly with batch size (reference batch 256)."""
        return self.base_lr * self.batch_size / 256

    def replace(self, **kw) -> "ExperimentConfig":
        return validate(dataclasses.replace(self, **kw))


# document key <-> field name
_KEY_TO_FIELD = {"lambda": "lam"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}
_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def field_name(key: str) -> str:
    name = _KEY_TO_FIELD.get(key, key)
    if name not in _FIELDS or key in _FIELD_TO_KEY:
        raise ConfigError(f"unknown key {key!r}")
    return name


def _convert(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        if isinstance(default, tuple):
            return tuple(int(p) for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def _range(ok: bool, msg: str):
    if not ok:
        raise ConfigError(msg)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    _range(cfg.dataset in DATASETS, f"dataset must be one of {DATASETS}")
    _range(cfg.framework in FRAMEWORKS, f"framework must be one of {FRAMEWORKS}")
    _range(cfg.regularizer in REGULARIZERS, f"regularizer must be one of {REGULARIZERS}")
    _range(cfg.dimcl_on in ("projector", "predictor"), "dimcl_on must be projector or predictor")
    _range(cfg.mode in ("train", "loss_only"), "mode must be train or loss_only")
    _range(cfg.precision in ("float32", "float64"), "precision must be float32 or float64")
    _range(0.0 <= cfg.lam <= 1.0, "lambda out of [0,1]")
    _range(cfg.tau > 0, "tau must be > 0")
    _range(cfg.base_tau > 0, "base_tau must be > 0")
    _range(0.0 <= cfg.ema <= 1.0, "ema out of [0,1]")
    _range(cfg.dim >= 2, "dim must be >= 2")
    _range(cfg.batch_size >= 2, "batch_size must be >= 2")
    _range(cfg.epochs >= 0, "epochs must be >= 0")
    _range(cfg.warmup_epochs >= 0, "warmup_epochs must be >= 0")
    _range(cfg.base_lr >= 0, "base_lr must be >= 0")
    _range(0.0 <= cfg.momentum < 1.0, "momentum out of [0,1)")
    _range(cfg.weight_decay >= 0, "weight_decay must be >= 0")
    _range(cfg.seed >= 0, "seed must be >= 0")
    _range(cfg.synth_classes >= 2, "synth_classes must be >= 2")
    _range(cfg.synth_dim >= 1, "synth_dim must be >= 1")
    _range(cfg.synth_sigma > 0, "synth_sigma must be > 0")
    _range(cfg.per_class >= 0, "per_class must be >= 0")
    _range(cfg.test_per_class >= 0, "test_per_class must be >= 0")
    _range(cfg.aug_sigma >= 0, "aug_sigma must be >= 0")
    _range(0.0 < cfg.crop_min <= 1.0, "crop_min out of (0,1]")
    for key in ("flip_prob", "jitter_prob", "grayscale_prob", "blur_prob", "solarize_prob"):
        _range(0.0 <= getattr(cfg, key) <= 1.0, f"{key} out of [0,1]")
    for key in ("rep_dim", "encoder_hidden", "projector_hidden", "predictor_hidden"):
        _range(getattr(cfg, key) >= 1, f"{key} must be >= 1")
    _range(len(cfg.conv_channels) >= 1 and min(cfg.conv_channels) >= 1, "conv_channels must be positive")
    _range(cfg.eval_every >= 1, "eval_every must be >= 1")
    _range(cfg.eval_samples >= 2, "eval_samples must be >= 2")
    _range(cfg.knn_k >= 1, "knn_k must be >= 1")
    _range(cfg.probe_epochs >= 1, "probe_epochs must be >= 1")
    _range(cfg.probe_lr > 0, "probe_lr must be > 0")
    _range(cfg.workers >= 1, "workers must be >= 1")
    if cfg.dataset in ("synthfile", "cifar10", "cifar100"):
        _range(bool(cfg.data_path), f"data_path is required for dataset {cfg.dataset}")
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in body.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: missing key")
        try:
            name = field_name(key)
        except ConfigError as e:
            raise ConfigError(f"line {lineno}: {e}") from None
        if name in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[name] = _convert(key, raw, _FIELDS[name].default)
    return validate(ExperimentConfig(**values))


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        lines.append(f"{_FIELD_TO_KEY.get(f.name, f.name)} = {_format(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def set_value(cfg: ExperimentConfig, key: str, raw) -> ExperimentConfig:
    """Copy of ``cfg`` with one document key set (raw strings are parsed)."""
    name = field_name(key)
    value = _convert(key, raw, _FIELDS[name].default) if isinstance(raw, str) else raw
    return cfg.replace(**{name: value})
