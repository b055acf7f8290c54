"""Dense-matrix helpers shared by the losses, metrics and training code."""

from __future__ import annotations

import numpy as np

_AXES = {"rows": 1, "cols": 0}


def as_matrix(m, dtype=np.float64) -> np.ndarray:
    a = np.asarray(m, dtype=dtype)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def check_finite(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite entries in {what}")
    return a


def l2_normalize(m, axis: str = "rows", eps: float = 1e-12) -> np.ndarray:
    """Scale every row (``axis="rows"``) or column (``axis="cols"``) to unit norm.

    Vectors whose norm falls below ``eps`` are divided by ``eps`` instead,
    so near-constant columns shrink toward zero rather than raising.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if axis not in _AXES:
        raise ValueError(f"axis must be 'rows' or 'cols', got {axis!r}")
    a = np.asarray(m, dtype=np.float64) if not isinstance(m, np.ndarray) else m
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if a.size == 0:
        raise ValueError("empty matrix")
    ax = _AXES[axis]
    norms = np.sqrt(np.sum(a * a, axis=ax, keepdims=True))
    return a / np.maximum(norms, eps)


def logsumexp(x: np.ndarray, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def stable_softmax(v, tau: float = 1.0) -> np.ndarray:
    if tau <= 0:
        raise ValueError("nonpositive temperature")
    z = np.asarray(v, dtype=np.float64) / tau
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)
