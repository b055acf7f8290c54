"""Desk-scale SSL frameworks with an optional DimCL regularizer.

SimCLR-lite, BYOL-lite and SimSiam-lite share one encoder design
(backbone + 2-layer projector). Each training step draws two views,
forms the framework's base loss and the DimCL term on the projector
outputs, mixes them as ``lam * dimcl + (1 - lam) * base`` and takes an SGD
step on the online parameters. BYOL then moves its target toward the
online encoder by EMA.

Both view orders are used: (A -> B) and (B -> A) losses are averaged, for
the base loss and for DimCL alike.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import losses
from .data import Augmenter
from .losses import EmbeddingPair, LossMixConfig
from .numcore import autodiff as ad
from .numcore.autodiff import Tape, Var
from .numcore.rng import Rng

KINDS = ("simclr", "byol", "simsiam", "supervised")
REGULARIZERS = ("dimcl", "abscl", "none")
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class DivergenceError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"diverged at step {step}: loss {value}")
        self.step = step


# --- networks -----------------------------------------------------------------


class Net:
    """A feed-forward stack described by a list of layer tuples.

    Layers: ``("linear", name)``, ``("bn", name)``, ``("relu",)``,
    ``("conv", name)``, ``("bn2d", name)``, ``("pool",)``, ``("gap",)``.
    Parameters live in ``params`` under ``"<name>.W"``, ``"<name>.b"`` etc.;
    batch-norm running statistics live in ``buffers``.
    """

    def __init__(self, layers, params, buffers=None):
        self.layers = list(layers)
        self.params: dict[str, np.ndarray] = dict(params)
        self.buffers: dict[str, np.ndarray] = dict(buffers or {})

    def copy(self) -> "Net":
        return Net(
            self.layers,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def forward(self, tape: Tape, x, train: bool = True, grad: bool = True, update_stats: bool = False,
                prefix: str = "", leaves: Optional[dict] = None) -> Var:
        """Run the stack on ``x``; trainable parameters become named leaves when ``grad``.

        ``leaves`` caches parameter nodes so a net applied twice on one tape
        shares its leaves (gradients from both calls accumulate).
        """
        if leaves is None:
            leaves = {}

        def p(key):
            full = prefix + key
            if full not in leaves:
                v = self.params[key]
                leaves[full] = tape.leaf(v, full) if grad else tape.constant(v)
            return leaves[full]

        h = x if isinstance(x, Var) else tape.constant(x)
        for layer in self.layers:
            op = layer[0]
            if op == "linear":
                h = h @ p(layer[1] + ".W") + p(layer[1] + ".b")
            elif op == "conv":
                h = ad.conv2d(h, p(layer[1] + ".W"), padding=1)
            elif op in ("bn", "bn2d"):
                name = layer[1]
                shape = h.shape
                flat = ad.reshape(h, (-1, shape[-1])) if op == "bn2d" else h
                if train:
                    if update_stats:
                        self._update_stats(name, flat.value)
                    norm = ad.batch_norm(flat, BN_EPS)
                else:
                    mean = self.buffers[name + ".mean"]
                    var = self.buffers[name + ".var"]
                    norm = (flat - mean) * (1.0 / np.sqrt(var + BN_EPS))
                h = norm * p(name + ".g") + p(name + ".b")
                if op == "bn2d":
                    h = ad.reshape(h, shape)
            elif op == "relu":
                h = ad.relu(h)
            elif op == "pool":
                h = ad.avg_pool2(h)
            elif op == "gap":
                h = ad.global_avg_pool(h)
            else:
                raise ValueError(f"unknown layer {op!r}")
        return h

    def _update_stats(self, name, x):
        n = x.shape[0]
        mu = x.mean(axis=0)
        var = x.var(axis=0) * (n / max(n - 1, 1))
        m, v = self.buffers[name + ".mean"], self.buffers[name + ".var"]
        m *= 1 - BN_MOMENTUM
        m += BN_MOMENTUM * mu
        v *= 1 - BN_MOMENTUM
        v += BN_MOMENTUM * var

    def __call__(self, x, train: bool = False) -> np.ndarray:
        """Plain numpy forward (no gradients)."""
        return self.forward(Tape(), x, train=train, grad=False).value


class _Builder:
    def __init__(self, gen: np.random.Generator, dtype):
        self.gen = gen
        self.dtype = dtype
        self.layers: list = []
        self.params: dict = {}
        self.buffers: dict = {}
        self.count = 0

    def _name(self, kind):
        self.count += 1
        return f"{kind}{self.count - 1}"

    def linear(self, n_in, n_out):
        name = self._name("fc")
        self.params[name + ".W"] = (self.gen.normal(size=(n_in, n_out)) * math.sqrt(2.0 / n_in)).astype(self.dtype)
        self.params[name + ".b"] = np.zeros(n_out, dtype=self.dtype)
        self.layers.append(("linear", name))

    def conv(self, c_in, c_out):
        name = self._name("conv")
        fan_in = 9 * c_in
        self.params[name + ".W"] = (self.gen.normal(size=(3, 3, c_in, c_out)) * math.sqrt(2.0 / fan_in)).astype(self.dtype)
        self.layers.append(("conv", name))

    def bn(self, width, kind="bn"):
        name = self._name("bn")
        self.params[name + ".g"] = np.ones(width, dtype=self.dtype)
        self.params[name + ".b"] = np.zeros(width, dtype=self.dtype)
        self.buffers[name + ".mean"] = np.zeros(width, dtype=self.dtype)
        self.buffers[name + ".var"] = np.ones(width, dtype=self.dtype)
        self.layers.append((kind, name))

    def add(self, *layer):
        self.layers.append(layer)

    def build(self) -> Net:
        return Net(self.layers, self.params, self.buffers)


def mlp_backbone(n_in: int, hidden: int, out: int, gen, dtype=np.float64) -> Net:
    """Three linear-BN-ReLU layers."""
    b = _Builder(gen, dtype)
    for a, c in ((n_in, hidden), (hidden, hidden), (hidden, out)):
        b.linear(a, c)
        b.bn(c)
        b.add("relu")
    return b.build()


def conv_backbone(channels=(32, 64, 128, 256), in_channels: int = 3, gen=None, dtype=np.float64) -> Net:
    """Four conv3x3-BN-ReLU blocks, 2x average pooling between them, global average pool."""
    b = _Builder(gen, dtype)
    c_prev = in_channels
    for i, c in enumerate(channels):
        b.conv(c_prev, c)
        b.bn(c, "bn2d")
        b.add("relu")
        if i < len(channels) - 1:
            b.add("pool")
        c_prev = c
    b.add("gap")
    return b.build()


def two_layer_mlp(n_in: int, hidden: int, out: int, gen, dtype=np.float64) -> Net:
    """linear-BN-ReLU-linear head, used for projectors and predictors."""
    b = _Builder(gen, dtype)
    b.linear(n_in, hidden)
    b.bn(hidden)
    b.add("relu")
    b.linear(hidden, out)
    return b.build()


def identity_linear(dim: int, dtype=np.float64) -> Net:
    return Net([("linear", "fc0")], {"fc0.W": np.eye(dim, dtype=dtype), "fc0.b": np.zeros(dim, dtype=dtype)})


@dataclass
class Encoder:
    backbone: Net
    projector: Net

    def forward(self, tape, x, train=True, grad=True, update_stats=False, prefix="", leaves=None):
        rep = self.backbone.forward(tape, x, train, grad, update_stats, prefix + "backbone.", leaves)
        z = self.projector.forward(tape, rep, train, grad, update_stats, prefix + "projector.", leaves)
        return rep, z

    def copy(self) -> "Encoder":
        return Encoder(self.backbone.copy(), self.projector.copy())

    @property
    def out_dim(self) -> int:
        return self.projector.params[self.projector.layers[-1][1] + ".W"].shape[-1]

    def nets(self):
        return {"backbone": self.backbone, "projector": self.projector}


# --- optimization ------------------------------------------------------------


def warmup_cosine_lr(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup to ``base_lr`` then cosine decay to zero at ``total_steps``."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    t = min(step - warmup_steps, span) / span
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * t))


@dataclass
class SGD:
    momentum: float = 0.9
    weight_decay: float = 1e-5
    velocity: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict, lr: float) -> None:
        for name, p in params.items():
            g = grads[name] + self.weight_decay * p
            v = self.velocity.get(name)
            v = g if v is None else self.momentum * v + g
            self.velocity[name] = v
            p -= lr * v


# --- framework state ---------------------------------------------------------


@dataclass
class ModelConfig:
    kind: str = "simsiam"
    input_shape: tuple = (32,)
    dim: int = 256
    rep_dim: int = 128
    encoder_hidden: int = 128
    conv_channels: tuple = (32, 64, 128, 256)
    projector_hidden: int = 512
    predictor_hidden: int = 128
    n_classes: int = 0
    lam: float = losses.DEFAULT_LAMBDA
    tau: float = losses.DEFAULT_TAU
    base_tau: float = 0.1
    regularizer: str = "dimcl"
    dimcl_on: str = "projector"
    center: bool = False
    symmetric: bool = True
    ema: float = 0.99
    momentum: float = 0.9
    weight_decay: float = 1e-5
    dtype: str = "float64"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown framework {self.kind!r}")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.dimcl_on not in ("projector", "predictor"):
            raise ValueError("dimcl_on must be 'projector' or 'predictor'")
        if not 0.0 <= self.ema <= 1.0:
            raise ValueError("ema out of [0,1]")
        if self.kind == "supervised" and self.n_classes < 2:
            raise ValueError("supervised framework needs n_classes >= 2")


@dataclass
class StepReport:
    base_loss: float
    dimcl_loss: float
    total: float
    grad_norm: float
    lr: float = 0.0


@dataclass
class FrameworkState:
    kind: str
    encoder: Encoder
    mix: LossMixConfig
    target: Optional[Encoder] = None
    predictor: Optional[Net] = None
    classifier: Optional[Net] = None
    config: ModelConfig = field(default_factory=ModelConfig)
    optimizer: SGD = field(default_factory=SGD)
    augmenter: Optional[Augmenter] = None
    step: int = 0

    def __post_init__(self):
        want_target = self.kind == "byol"
        want_pred = self.kind in ("byol", "simsiam")
        if (self.target is not None) != want_target:
            raise ValueError(f"{self.kind}: target encoder {'required' if want_target else 'not allowed'}")
        if (self.predictor is not None) != want_pred:
            raise ValueError(f"{self.kind}: predictor {'required' if want_pred else 'not allowed'}")
        if self.target is not None:
            _check_same_shapes(self.target, self.encoder)

    def online_nets(self) -> dict:
        nets = {"online.backbone": self.encoder.backbone, "online.projector": self.encoder.projector}
        if self.predictor is not None:
            nets["predictor"] = self.predictor
        if self.classifier is not None:
            nets["classifier"] = self.classifier
        return nets

    def online_params(self) -> dict:
        return {f"{k}.{n}": v for k, net in self.online_nets().items() for n, v in net.params.items()}


def build_state(cfg: ModelConfig, rng: Rng, augmenter: Optional[Augmenter] = None) -> FrameworkState:
    dtype = np.dtype(cfg.dtype)
    gen = rng.stream("init").generator()
    if len(cfg.input_shape) == 1:
        backbone = mlp_backbone(cfg.input_shape[0], cfg.encoder_hidden, cfg.rep_dim, gen, dtype)
        rep_dim = cfg.rep_dim
    else:
        backbone = conv_backbone(tuple(cfg.conv_channels), cfg.input_shape[-1], gen, dtype)
        rep_dim = cfg.conv_channels[-1]
    encoder = Encoder(backbone, two_layer_mlp(rep_dim, cfg.projector_hidden, cfg.dim, gen, dtype))
    predictor = None
    if cfg.kind in ("byol", "simsiam"):
        predictor = two_layer_mlp(cfg.dim, cfg.predictor_hidden, cfg.dim, gen, dtype)
    classifier = None
    if cfg.kind == "supervised":
        b = _Builder(gen, dtype)
        b.linear(rep_dim, cfg.n_classes)
        classifier = b.build()
    return FrameworkState(
        kind=cfg.kind,
        encoder=encoder,
        mix=LossMixConfig(cfg.lam, cfg.tau),
        target=encoder.copy() if cfg.kind == "byol" else None,
        predictor=predictor,
        classifier=classifier,
        config=cfg,
        optimizer=SGD(cfg.momentum, cfg.weight_decay),
        augmenter=augmenter,
    )


def _check_same_shapes(a: Encoder, b: Encoder):
    for part in ("backbone", "projector"):
        pa, pb = getattr(a, part).params, getattr(b, part).params
        if pa.keys() != pb.keys() or any(pa[k].shape != pb[k].shape for k in pa):
            raise ValueError("target and online encoders have different parameter shapes")


def ema_update(target: Encoder, online: Encoder, m: float) -> Encoder:
    """In place: every target parameter <- m * target + (1 - m) * online.

    Written as ``t += (1 - m) * (o - t)`` so that online == target is an exact
    fixed point; m = 1 freezes the target and m = 0 copies the online weights.
    """
    if not 0.0 <= m <= 1.0:
        raise ValueError("momentum must be in [0,1]")
    _check_same_shapes(target, online)
    for part in ("backbone", "projector"):
        tp, op = getattr(target, part).params, getattr(online, part).params
        for k in tp:
            if m == 0.0:
                tp[k][...] = op[k]
            elif m < 1.0:
                tp[k] += (1.0 - m) * (op[k] - tp[k])
    return target


# --- forward and losses ------------------------------------------------------


@dataclass
class ViewPair:
    """Graph-level counterpart of ``EmbeddingPair``: za and zb are tape nodes."""

    za: Var
    zb: Var
    rep_a: Var
    tape: Tape
    leaves: dict

    def values(self) -> EmbeddingPair:
        return EmbeddingPair(self.za.value, self.zb.value)


def _forward_both(state: FrameworkState, a, b, tape: Tape, train=True, update_stats=False):
    leaves: dict = {}
    dtype = np.dtype(state.config.dtype)
    a = np.asarray(a, dtype=dtype)
    b = np.asarray(b, dtype=dtype)
    if a.shape != b.shape:
        raise ValueError(f"view batches differ in shape: {a.shape} vs {b.shape}")
    rep_a, z_a = state.encoder.forward(tape, a, train, True, update_stats, "online.", leaves)
    rep_b, z_b = state.encoder.forward(tape, b, train, True, update_stats, "online.", leaves)
    if state.kind == "byol":
        _, t_a = state.target.forward(tape, a, train, False, update_stats)
        _, t_b = state.target.forward(tape, b, train, False, update_stats)
    elif state.kind == "simsiam":
        t_a, t_b = ad.stop_gradient(z_a), ad.stop_gradient(z_b)
    else:
        t_a, t_b = z_a, z_b
    ab = ViewPair(z_a, t_b, rep_a, tape, leaves)
    ba = ViewPair(z_b, t_a, rep_b, tape, leaves)
    return ab, ba


def forward_views(state: FrameworkState, batch_a, batch_b, tape: Optional[Tape] = None, train=True) -> ViewPair:
    """za from the online encoder on view A; zb from the key branch on view B.

    The key branch is the EMA target (byol), the online encoder behind a
    stop-gradient (simsiam) or the online encoder itself (simclr).
    """
    return _forward_both(state, batch_a, batch_b, tape or Tape(), train)[0]


def _predict(state: FrameworkState, pair: ViewPair) -> Var:
    return state.predictor.forward(pair.tape, pair.za, True, True, False, "predictor.", pair.leaves)


def base_loss(state: FrameworkState, pair) -> float | Var:
    """One-direction base loss. Accepts a ``ViewPair`` (returns a node) or an ``EmbeddingPair``."""
    if isinstance(pair, EmbeddingPair):
        t = Tape()
        vp = ViewPair(t.constant(pair.za), t.constant(pair.zb), None, t, {})
        return float(base_loss(state, vp).value)
    if state.kind == "simclr":
        return losses.batch_infonce_graph(pair.za, pair.zb, state.config.base_tau)
    if state.kind in ("byol", "simsiam"):
        return losses.neg_cosine_graph(_predict(state, pair), pair.zb)
    raise ValueError(f"{state.kind} base loss needs labels; use training_step")


def _dimcl_term(state: FrameworkState, pair: ViewPair, pred: Optional[Var]) -> Var:
    cfg = state.config
    q = pred if (cfg.dimcl_on == "predictor" and pred is not None) else pair.za
    return losses.dimcl_loss_graph(
        q, pair.zb, state.mix.tau, absolute=cfg.regularizer == "abscl", center=cfg.center
    )


def symmetric_losses(state: FrameworkState, batch_a, batch_b, labels=None, tape=None, update_stats=False):
    """(base, dimcl) graph nodes averaged over both view orders."""
    tape = tape or Tape()
    ab, ba = _forward_both(state, batch_a, batch_b, tape, True, update_stats)
    pairs = (ab, ba) if state.config.symmetric else (ab,)
    bases, dims = [], []
    for pr in pairs:
        pred = _predict(state, pr) if state.predictor is not None else None
        if state.kind == "simclr":
            bases.append(losses.batch_infonce_graph(pr.za, pr.zb, state.config.base_tau))
        elif state.kind in ("byol", "simsiam"):
            bases.append(losses.neg_cosine_graph(pred, pr.zb))
        else:
            if labels is None:
                raise ValueError("supervised framework needs labels")
            logits = state.classifier.forward(tape, pr.rep_a, True, True, False, "classifier.", pr.leaves)
            bases.append(ad.softmax_cross_entropy(logits, np.asarray(labels)))
        dims.append(_dimcl_term(state, pr, pred))
    if len(pairs) == 2:
        return (bases[0] + bases[1]) * 0.5, (dims[0] + dims[1]) * 0.5, tape
    return bases[0], dims[0], tape


def training_step(state: FrameworkState, batch, gen, lr: float, labels=None) -> StepReport:
    """One optimization step on a batch of raw examples.

    ``gen`` (numpy Generator or ``Rng``) drives the augmentation draws.
    """
    if state.augmenter is None:
        raise ValueError("state has no augmenter")
    if isinstance(gen, Rng):
        gen = gen.generator()
    view_a, view_b = state.augmenter(np.asarray(batch), gen)
    base, dim, tape = symmetric_losses(state, view_a, view_b, labels, update_stats=True)
    use_dim = state.config.regularizer != "none"
    total = losses.combined_loss(base, dim, state.mix) if use_dim else base
    total_v = float(total.value)
    if not math.isfinite(total_v):
        raise DivergenceError(state.step, total_v)
    grads = tape.backward(total)
    params = state.online_params()
    gsq = 0.0
    for k in params:
        gsq += float(np.sum(grads[k].astype(np.float64) ** 2))
    state.optimizer.step(params, grads, lr)
    if state.kind == "byol":
        ema_update(state.target, state.encoder, state.config.ema)
    state.step += 1
    return StepReport(float(base.value), float(dim.value), total_v, math.sqrt(gsq), lr)


def embed(state: FrameworkState, x, batch: int = 512) -> np.ndarray:
    """Frozen backbone features (BN in inference mode)."""
    dtype = np.dtype(state.config.dtype)
    outs = []
    for s in range(0, len(x), batch):
        outs.append(state.encoder.backbone(np.asarray(x[s : s + batch], dtype=dtype)))
    return np.concatenate(outs).astype(np.float64)


def project_pair(state: FrameworkState, view_a, view_b) -> EmbeddingPair:
    """Inference-mode (za, zb) as fed to DimCL, for diagnostics."""
    t = Tape()
    dtype = np.dtype(state.config.dtype)
    _, za = state.encoder.forward(t, np.asarray(view_a, dtype=dtype), train=False, grad=False)
    key = state.target if state.target is not None else state.encoder
    _, zb = key.forward(t, np.asarray(view_b, dtype=dtype), train=False, grad=False)
    return EmbeddingPair(za.value, zb.value)


# --- checkpoint file ---------------------------------------------------------

CKPT_MAGIC = b"DCLCKPT1"


def state_tensors(state: FrameworkState) -> dict:
    out = {}
    groups = dict(state.online_nets())
    if state.target is not None:
        groups["target.backbone"] = state.target.backbone
        groups["target.projector"] = state.target.projector
    for g, net in groups.items():
        for k, v in net.params.items():
            out[f"{g}.{k}"] = v
        for k, v in net.buffers.items():
            out[f"{g}.buffers.{k}"] = v
    return out


def load_state_tensors(state: FrameworkState, tensors: dict) -> None:
    mine = state_tensors(state)
    if mine.keys() != tensors.keys():
        raise ValueError("checkpoint tensors do not match the framework layout")
    for k, v in tensors.items():
        if mine[k].shape != v.shape:
            raise ValueError(f"shape mismatch for {k}: {mine[k].shape} vs {v.shape}")
        mine[k][...] = v


def checkpoint_bytes(kind: str, tensors: dict, config_text: str = "") -> bytes:
    parts = [CKPT_MAGIC]

    def blob(b: bytes):
        parts.append(struct.pack("<I", len(b)))
        parts.append(b)

    blob(kind.encode())
    blob(config_text.encode())
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        blob(name.encode())
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in tensors.values():
        parts.append(np.asarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def parse_checkpoint(buf: bytes):
    """Returns (kind, config_text, tensors) with float32 tensors."""
    if buf[:8] != CKPT_MAGIC:
        raise ValueError("not a DCLCKPT1 checkpoint")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise ValueError("checkpoint CRC mismatch")
    off = 8

    def read_blob():
        nonlocal off
        (n,) = struct.unpack_from("<I", body, off)
        off += 4
        out = body[off : off + n]
        off += n
        return out

    kind = read_blob().decode()
    config_text = read_blob().decode()
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    shapes = []
    for _ in range(count):
        name = read_blob().decode()
        (ndim,) = struct.unpack_from("<I", body, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        shapes.append((name, shape))
    tensors = {}
    for name, shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(body, dtype="<f4", count=n, offset=off).reshape(shape).copy()
        off += 4 * n
    if off != len(body):
        raise ValueError("trailing bytes in checkpoint")
    return kind, config_text, tensors


def save_checkpoint(path, state: FrameworkState, config_text: str = "") -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(state.kind, state_tensors(state), config_text))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
