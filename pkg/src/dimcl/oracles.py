"""Deliberately naive reference implementations.

Plain Python loops over explicit negative sets, naive ``exp``/``log`` and
central finite differences. Nothing here imports the production loss code,
so agreement between the two is meaningful.
"""

from __future__ import annotations

import math

import numpy as np


def _unit(v):
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def unit_rows(m):
    return [_unit(list(r)) for r in np.asarray(m, dtype=float)]


def unit_cols(m):
    return unit_rows(np.asarray(m, dtype=float).T)


def negative_set(queries, keys, i):
    return [keys[j] for j in range(len(keys)) if j != i] + [
        queries[j] for j in range(len(queries)) if j != i
    ]


def infonce_query(q, pos, negs, tau, absolute=False):
    num = math.exp(_dot(q, pos) / tau)
    den = num
    for k in negs:
        s = _dot(q, k)
        den += math.exp((abs(s) if absolute else s) / tau)
    return -math.log(num / den)


def infonce_vectors(queries, keys, tau, absolute=False):
    total = 0.0
    for i in range(len(queries)):
        total += infonce_query(queries[i], keys[i], negative_set(queries, keys, i), tau, absolute)
    return total / len(queries)


def naive_batch_infonce(za, zb, tau):
    return infonce_vectors(unit_rows(za), unit_rows(zb), tau)


def naive_dimcl(za, zb, tau):
    return infonce_vectors(unit_cols(za), unit_cols(zb), tau)


def naive_abscl(za, zb, tau):
    return infonce_vectors(unit_cols(za), unit_cols(zb), tau, absolute=True)


def naive_simple_cl(za, zb):
    qs, ks = unit_rows(za), unit_rows(zb)
    total = 0.0
    for i in range(len(qs)):
        negs = negative_set(qs, ks, i)
        total += -_dot(qs[i], ks[i]) + sum(_dot(qs[i], k) for k in negs) / len(negs)
    return total / len(qs)


def central_difference(f, x, step=1e-5):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for idx in range(flat.size):
        old = flat[idx]
        flat[idx] = old + step
        fp = f(x)
        flat[idx] = old - step
        fm = f(x)
        flat[idx] = old
        gf[idx] = (fp - fm) / (2 * step)
    return g


def relative_error(a, b) -> float:
    """Max absolute deviation scaled by the largest reference magnitude."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def query_gradient_oracle(queries, keys, i, tau=None, step=1e-5):
    """Finite-difference d L_i / d (query i) with the key set frozen.

    ``tau=None`` selects the uniform-weight simple loss, otherwise InfoNCE.
    """
    negs = negative_set(queries, keys, i)
    pos = keys[i]

    def loss(v):
        v = list(v)
        if tau is None:
            return -_dot(v, pos) + sum(_dot(v, k) for k in negs) / len(negs)
        return infonce_query(v, pos, negs, tau)

    return central_difference(loss, np.array(queries[i]), step)
