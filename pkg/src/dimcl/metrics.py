"""Representation quality measures: feature diversity, KNN, linear probe, class distances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .losses import EmbeddingPair
from .numcore.ops import l2_normalize
from .numcore.rng import Rng


@dataclass(frozen=True)
class EmbeddingSet:
    embeddings: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.embeddings, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError(f"need M x D embeddings and M labels, got {x.shape} and {y.shape}")
        if y.size and y.min() < 0:
            raise ValueError("class ids must be nonnegative")
        object.__setattr__(self, "embeddings", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]


def feature_diversity(pair: EmbeddingPair) -> float:
    """1 minus the mean |cosine| between column i of ``za`` and column j != i of ``zb``.

    Returns a value in [0, 1]; 1 means the cross-view columns are mutually
    orthogonal.
    """
    d = pair.d
    if d < 2:
        raise ValueError("needs at least two columns")
    ga = np.sum(pair.za * pair.za, axis=0)
    hb = np.sum(pair.zb * pair.zb, axis=0)
    if np.any(ga == 0) or np.any(hb == 0):
        raise ValueError("degenerate column")
    # Dots use the same axis-0 reduction as the squared norms, and
    # sqrt(s * s) == s in IEEE arithmetic, so identical columns give |cos| == 1 exactly.
    total = 0.0
    for i in range(d):
        dots = np.sum(pair.za[:, i : i + 1] * pair.zb, axis=0)
        cos = np.minimum(np.abs(dots) / np.sqrt(ga[i] * hb), 1.0)
        cos[i] = 0.0
        total += cos.sum()
    return float(1.0 - total / (d * (d - 1)))


def _vote(neighbor_labels: np.ndarray, n_classes: int) -> int:
    counts = np.bincount(neighbor_labels, minlength=n_classes)
    return int(np.argmax(counts))  # argmax picks the smallest id on ties


def knn_predict(train: EmbeddingSet, queries: np.ndarray, k: int, chunk: int = 1024) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(train):
        raise ValueError(f"k={k} exceeds train size {len(train)}")
    xt = l2_normalize(train.embeddings, "rows")
    n_classes = int(train.labels.max()) + 1
    out = np.empty(queries.shape[0], dtype=np.int64)
    for start in range(0, queries.shape[0], chunk):
        q = l2_normalize(queries[start : start + chunk], "rows")
        sim = q @ xt.T
        # stable sort on -sim: equal similarities resolve to the lower train index
        idx = np.argsort(-sim, axis=1, kind="stable")[:, :k]
        for r, row in enumerate(idx):
            out[start + r] = _vote(train.labels[row], n_classes)
    return out


def knn_accuracy(train: EmbeddingSet, test: EmbeddingSet, k: int = 20) -> float:
    """Top-1 accuracy (percent) of a cosine-similarity majority vote over k neighbours."""
    pred = knn_predict(train, test.embeddings, k)
    return 100.0 * float(np.mean(pred == test.labels))


@dataclass
class LinearProbe:
    weight: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    train_acc_history: list = field(default_factory=list)

    def predict(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.scale
        return np.argmax(z @ self.weight + self.bias, axis=1)

    def accuracy(self, s: EmbeddingSet) -> float:
        return 100.0 * float(np.mean(self.predict(s.embeddings) == s.labels))


def fit_linear_probe(
    train: EmbeddingSet,
    epochs: int = 100,
    lr: float = 0.3,
    batch_size: int = 256,
    momentum: float = 0.9,
    seed: int = 0,
    track_history: bool = False,
) -> LinearProbe:
    """Softmax regression on frozen, standardized features; SGD with momentum and cosine decay."""
    classes = np.unique(train.labels)
    if classes.size < 2:
        raise ValueError("linear probe needs at least two classes in the train set")
    x = train.embeddings
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    z = (x - mean) / scale
    y = train.labels
    m, d = z.shape
    c = int(y.max()) + 1
    w = np.zeros((d, c))
    b = np.zeros(c)
    vw = np.zeros_like(w)
    vb = np.zeros_like(b)
    gen = Rng(seed).stream("probe").generator()
    steps_per_epoch = math.ceil(m / batch_size)
    total = max(epochs * steps_per_epoch, 1)
    probe = LinearProbe(w, b, mean, scale)
    step = 0
    for _ in range(epochs):
        order = gen.permutation(m)
        for start in range(0, m, batch_size):
            idx = order[start : start + batch_size]
            logits = z[idx] @ w + b
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(idx.size), y[idx]] -= 1.0
            p /= idx.size
            rate = lr * 0.5 * (1.0 + math.cos(math.pi * step / total))
            vw = momentum * vw + z[idx].T @ p
            vb = momentum * vb + p.sum(axis=0)
            w -= rate * vw
            b -= rate * vb
            step += 1
        if track_history:
            probe.train_acc_history.append(probe.accuracy(train))
    return probe


def linear_probe(
    train: EmbeddingSet, test: EmbeddingSet, epochs: int = 100, lr: float = 0.3, seed: int = 0, **kw
) -> float:
    """Top-1 test accuracy (percent) of a linear classifier trained on frozen embeddings."""
    return fit_linear_probe(train, epochs=epochs, lr=lr, seed=seed, **kw).accuracy(test)


def class_distances(s: EmbeddingSet) -> tuple[float, float]:
    """Centroid-based (intra, inter) class distances.

    intra: per-class mean distance of members to their centroid, averaged over classes.
    inter: mean pairwise distance between class centroids.
    """
    classes = np.unique(s.labels)
    if classes.size < 2:
        raise ValueError("class distances need at least two classes")
    centroids = []
    intra = []
    for c in classes:
        members = s.embeddings[s.labels == c]
        mu = members.mean(axis=0)
        centroids.append(mu)
        intra.append(np.linalg.norm(members - mu, axis=1).mean())
    cen = np.array(centroids)
    i, j = np.triu_indices(len(cen), k=1)
    inter = np.linalg.norm(cen[i] - cen[j], axis=1).mean()
    return float(np.mean(intra)), float(inter)
