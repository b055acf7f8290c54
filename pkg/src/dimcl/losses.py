"""Contrastive losses along the batch axis (BCL) and the feature axis (DimCL).

All InfoNCE variants share one kernel: given unit-norm query rows ``Q`` and
key rows ``K`` (M of each), query ``i`` is scored against its positive
``K[i]`` and the ``2M - 2`` negatives ``{K[j], Q[j] : j != i}``. Batch
InfoNCE feeds rows of the two views; DimCL feeds columns, i.e. the same
kernel on the transposed, column-normalized matrices.

Each function comes in two flavours: a numpy one returning a
``LossReport`` with diagnostics, and a ``*_graph`` one operating on
autodiff ``Var`` nodes for training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numcore import autodiff as ad
from .numcore.ops import l2_normalize, logsumexp

DEFAULT_TAU = 0.1
DEFAULT_LAMBDA = 0.1


@dataclass(frozen=True)
class EmbeddingPair:
    """Two N x D representation matrices of the same examples under two views."""

    za: np.ndarray
    zb: np.ndarray

    def __post_init__(self):
        za = np.asarray(self.za, dtype=np.float64)
        zb = np.asarray(self.zb, dtype=np.float64)
        if za.ndim != 2 or za.shape != zb.shape:
            raise ValueError(f"views must be equal-shape matrices, got {za.shape} and {zb.shape}")
        object.__setattr__(self, "za", za)
        object.__setattr__(self, "zb", zb)

    @property
    def n(self) -> int:
        return self.za.shape[0]

    @property
    def d(self) -> int:
        return self.za.shape[1]

    def transpose(self) -> "EmbeddingPair":
        return EmbeddingPair(self.za.T, self.zb.T)


@dataclass(frozen=True)
class LossReport:
    value: float
    per_query: np.ndarray
    per_query_pos_sim: np.ndarray
    neg_sim: np.ndarray
    alpha_pos: Optional[np.ndarray] = None
    alpha_neg: Optional[np.ndarray] = None


@dataclass(frozen=True)
class LossMixConfig:
    lam: float = DEFAULT_LAMBDA
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda out of [0,1]")
        if not self.tau > 0:
            raise ValueError("nonpositive temperature")


def _check_tau(tau):
    if not tau > 0:
        raise ValueError("nonpositive temperature")


def _offdiag(s: np.ndarray) -> np.ndarray:
    m = s.shape[0]
    return s[~np.eye(m, dtype=bool)].reshape(m, m - 1)


def _similarities(q: np.ndarray, k: np.ndarray):
    """Positive dots (M,) and negative dots (M, 2M-2) ordered [K_j, Q_j], j != i."""
    s_qk = q @ k.T
    s_qq = q @ q.T
    pos = np.diagonal(s_qk).copy()
    neg = np.concatenate([_offdiag(s_qk), _offdiag(s_qq)], axis=1)
    return pos, neg


def _negative_keys(q: np.ndarray, k: np.ndarray, i: int) -> np.ndarray:
    keep = np.arange(q.shape[0]) != i
    return np.concatenate([k[keep], q[keep]], axis=0)


def _infonce_rows(q: np.ndarray, k: np.ndarray, tau: float, absolute: bool = False) -> LossReport:
    pos, neg = _similarities(q, k)
    if absolute:
        neg_logit = np.abs(neg)
    else:
        neg_logit = neg
    logits = np.concatenate([pos[:, None], neg_logit], axis=1) / tau
    lse = logsumexp(logits, axis=1)
    per_query = lse - logits[:, 0]
    alpha = np.exp(logits - lse[:, None])
    return LossReport(
        value=float(per_query.mean()),
        per_query=per_query,
        per_query_pos_sim=pos,
        neg_sim=neg,
        alpha_pos=alpha[:, 0].copy(),
        alpha_neg=alpha[:, 1:].copy(),
    )


def _columns(pair: EmbeddingPair, center: bool):
    za, zb = pair.za, pair.zb
    if center:
        za = za - za.mean(axis=0)
        zb = zb - zb.mean(axis=0)
    return l2_normalize(za, "cols"), l2_normalize(zb, "cols")


def simple_cl_loss(pair: EmbeddingPair) -> LossReport:
    """Uniform-weight contrastive loss: -q.k+ plus the mean similarity to all negatives."""
    if pair.n < 2:
        raise ValueError("needs at least one negative")
    q = l2_normalize(pair.za, "rows")
    k = l2_normalize(pair.zb, "rows")
    pos, neg = _similarities(q, k)
    per_query = -pos + neg.mean(axis=1)
    return LossReport(float(per_query.mean()), per_query, pos, neg)


def simple_cl_grad(pair: EmbeddingPair, i: int) -> np.ndarray:
    """d L_i / d q_i for the uniform loss, with q_i already normalized; shape 1 x D."""
    if pair.n < 2:
        raise ValueError("needs at least one negative")
    if not 0 <= i < pair.n:
        raise IndexError(f"query index {i} out of range for N={pair.n}")
    q = l2_normalize(pair.za, "rows")
    k = l2_normalize(pair.zb, "rows")
    negs = _negative_keys(q, k, i)
    return (-k[i] + negs.mean(axis=0))[None, :]


def batch_infonce(pair: EmbeddingPair, tau: float = DEFAULT_TAU) -> LossReport:
    _check_tau(tau)
    if pair.n < 2:
        raise ValueError("needs at least one negative")
    return _infonce_rows(l2_normalize(pair.za, "rows"), l2_normalize(pair.zb, "rows"), tau)


def dimcl_loss(pair: EmbeddingPair, tau: float = DEFAULT_TAU, center: bool = False) -> LossReport:
    """InfoNCE over feature columns; queries are columns of ``za``, positives columns of ``zb``.

    Columns are l2-normalized along the batch direction first. ``center``
    subtracts per-column means beforehand (off by default).
    """
    _check_tau(tau)
    if pair.d < 2:
        raise ValueError("needs at least one negative column")
    g, h = _columns(pair, center)
    return _infonce_rows(g.T, h.T, tau)


def abscl_loss(pair: EmbeddingPair, tau: float = DEFAULT_TAU, center: bool = False) -> LossReport:
    """DimCL with absolute-valued negative logits, pushing columns toward strict orthogonality."""
    _check_tau(tau)
    if pair.d < 2:
        raise ValueError("needs at least one negative column")
    g, h = _columns(pair, center)
    return _infonce_rows(g.T, h.T, tau, absolute=True)


def dimcl_grad(pair: EmbeddingPair, tau: float, i: int) -> np.ndarray:
    """d L_i / d g_i for the normalized query column g_i with every key held fixed; N x 1.

    Equals -(1 - a_pos) h_i / tau + sum_j a_j h_j / tau, where the a are the
    softmax weights of the positive and of each negative.
    """
    _check_tau(tau)
    if pair.d < 2:
        raise ValueError("needs at least one negative column")
    if not 0 <= i < pair.d:
        raise IndexError(f"column index {i} out of range for D={pair.d}")
    g, h = _columns(pair, center=False)
    gt, ht = g.T, h.T
    rep = _infonce_rows(gt, ht, tau)
    negs = _negative_keys(gt, ht, i)
    grad = (-(1.0 - rep.alpha_pos[i]) * ht[i] + rep.alpha_neg[i] @ negs) / tau
    return grad[:, None]


def combined_loss(base, dim, mix: LossMixConfig):
    """lambda * dim + (1 - lambda) * base; works on floats and on graph nodes."""
    if not 0.0 <= mix.lam <= 1.0:
        raise ValueError("lambda out of [0,1]")
    if mix.lam == 0.0:
        return base
    if mix.lam == 1.0:
        return dim
    return mix.lam * dim + (1.0 - mix.lam) * base


# --- graph versions -------------------------------------------------------


def _infonce_graph(q: ad.Var, k: ad.Var, tau: float, absolute: bool = False) -> ad.Var:
    m = q.shape[0]
    s_qk = q @ k.T
    s_qq = q @ q.T
    pos = ad.diagonal(s_qk)
    neg_k, neg_q = (ad.absolute(s_qk), ad.absolute(s_qq)) if absolute else (s_qk, s_qq)
    logits = ad.concat([ad.reshape(pos, (m, 1)), neg_k, neg_q], axis=1) * (1.0 / tau)
    off = ~np.eye(m, dtype=bool)
    mask = np.concatenate([np.ones((m, 1), dtype=bool), off, off], axis=1)
    lse = ad.logsumexp(logits, axis=1, mask=mask)
    return ad.mean(lse - pos * (1.0 / tau))


def batch_infonce_graph(za: ad.Var, zb: ad.Var, tau: float = DEFAULT_TAU) -> ad.Var:
    _check_tau(tau)
    return _infonce_graph(ad.l2_normalize(za, "rows"), ad.l2_normalize(zb, "rows"), tau)


def dimcl_loss_graph(
    za: ad.Var, zb: ad.Var, tau: float = DEFAULT_TAU, absolute: bool = False, center: bool = False
) -> ad.Var:
    _check_tau(tau)
    if za.shape[1] < 2:
        raise ValueError("needs at least one negative column")
    if center:
        za = za - ad.mean(za, axis=0)
        zb = zb - ad.mean(zb, axis=0)
    g = ad.l2_normalize(za, "cols")
    h = ad.l2_normalize(zb, "cols")
    return _infonce_graph(g.T, h.T, tau, absolute=absolute)


def neg_cosine_graph(p: ad.Var, z: ad.Var) -> ad.Var:
    """Mean over rows of -cos(p_i, z_i)."""
    pn = ad.l2_normalize(p, "rows")
    zn = ad.l2_normalize(z, "rows")
    return -ad.mean(ad.sum_(pn * zn, axis=1))
