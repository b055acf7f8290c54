"""Numerical self-checks of the loss, gradient and metric code against the naive oracles.

Each check draws its own random instances from a fixed seed and returns a
``CheckResult`` with the worst observed error and the tolerance it was held to.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import oracles
from .losses import (
    EmbeddingPair,
    abscl_loss,
    batch_infonce,
    dimcl_grad,
    dimcl_loss,
    dimcl_loss_graph,
    simple_cl_grad,
    simple_cl_loss,
)
from .metrics import feature_diversity
from .numcore import Tape
from .numcore.rng import Rng

TAUS = (1.0, 0.5, 0.1)


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tol: float
    instances: int
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name}: worst {self.worst:.3e} (tol {self.tol:.0e}) "
                f"over {self.instances} instances in {self.seconds:.2f}s")


def random_pair(gen: np.random.Generator, lo: int = 2, hi: int = 16) -> EmbeddingPair:
    n, d = gen.integers(lo, hi + 1, size=2)
    return EmbeddingPair(gen.normal(size=(n, d)), gen.normal(size=(n, d)))


def _result(name, worst, tol, count, t0, strict=True):
    ok = worst < tol if strict else worst <= tol
    return CheckResult(name, bool(ok), float(worst), tol, count, time.perf_counter() - t0)


def check_oracle_equivalence(n_pairs: int = 200, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    t0 = time.perf_counter()
    gen = Rng(seed).stream("oracle").generator()
    worst = 0.0
    for k in range(n_pairs):
        p = random_pair(gen)
        tau = TAUS[k % len(TAUS)]
        worst = max(
            worst,
            abs(batch_infonce(p, tau).value - oracles.naive_batch_infonce(p.za, p.zb, tau)),
            abs(dimcl_loss(p, tau).value - oracles.naive_dimcl(p.za, p.zb, tau)),
            abs(abscl_loss(p, tau).value - oracles.naive_abscl(p.za, p.zb, tau)),
            abs(simple_cl_loss(p).value - oracles.naive_simple_cl(p.za, p.zb)),
        )
    return _result("oracle equivalence", worst, tol, n_pairs, t0)


def check_transpose_duality(n_pairs: int = 100, seed: int = 1, tol: float = 1e-12) -> CheckResult:
    t0 = time.perf_counter()
    gen = Rng(seed).stream("duality").generator()
    worst = 0.0
    for k in range(n_pairs):
        p = random_pair(gen)
        tau = TAUS[k % len(TAUS)]
        worst = max(worst, abs(dimcl_loss(p, tau).value - batch_infonce(p.transpose(), tau).value))
    return _result("transpose duality", worst, tol, n_pairs, t0, strict=False)


def _autodiff_dimcl_grad(p: EmbeddingPair, tau: float) -> np.ndarray:
    tape = Tape()
    za = tape.leaf(p.za, "za")
    out = dimcl_loss_graph(za, tape.constant(p.zb), tau)
    return tape.backward(out)["za"]


def check_gradients(n_instances: int = 50, seed: int = 2, tol: float = 1e-5) -> list[CheckResult]:
    """Analytic simple-loss and DimCL gradients, and autodiff, against central differences."""
    t0 = time.perf_counter()
    gen = Rng(seed).stream("gradients").generator()
    worst_simple = worst_dim = worst_ad = 0.0
    for k in range(n_instances):
        p = random_pair(gen, 2, 8)
        tau = TAUS[k % len(TAUS)]
        i = int(gen.integers(p.n))
        rows_q, rows_k = oracles.unit_rows(p.za), oracles.unit_rows(p.zb)
        fd = oracles.query_gradient_oracle(rows_q, rows_k, i)
        worst_simple = max(worst_simple, oracles.relative_error(simple_cl_grad(p, i)[0], fd))
        j = int(gen.integers(p.d))
        cols_q, cols_k = oracles.unit_cols(p.za), oracles.unit_cols(p.zb)
        fd = oracles.query_gradient_oracle(cols_q, cols_k, j, tau=tau)
        worst_dim = max(worst_dim, oracles.relative_error(dimcl_grad(p, tau, j)[:, 0], fd))
        fd_full = oracles.central_difference(lambda x: oracles.naive_dimcl(x, p.zb, tau), p.za)
        worst_ad = max(worst_ad, oracles.relative_error(_autodiff_dimcl_grad(p, tau), fd_full))
    return [
        _result("simple-loss gradient", worst_simple, tol, n_instances, t0),
        _result("dimcl gradient", worst_dim, tol, n_instances, t0),
        _result("autodiff dimcl backward", worst_ad, tol, n_instances, t0),
    ]


def check_alpha(n_instances: int = 100, seed: int = 3) -> list[CheckResult]:
    """Normalization, ordering by similarity, and the exponential ratio law of alpha."""
    t0 = time.perf_counter()
    gen = Rng(seed).stream("alpha").generator()
    worst_sum = worst_ratio = 0.0
    order_violations = 0
    for k in range(n_instances):
        p = random_pair(gen)
        tau = TAUS[k % len(TAUS)]
        rep = dimcl_loss(p, tau)
        worst_sum = max(worst_sum, float(np.max(np.abs(rep.alpha_pos + rep.alpha_neg.sum(axis=1) - 1.0))))
        for a, s in zip(rep.alpha_neg, rep.neg_sim):
            order = np.argsort(s, kind="stable")
            if np.any(np.diff(s[order]) > 0) and np.any(np.diff(a[order])[np.diff(s[order]) > 0] <= 0):
                order_violations += 1
            ratio = a[:-1] / a[1:]
            expect = np.exp((s[:-1] - s[1:]) / tau)
            worst_ratio = max(worst_ratio, float(np.max(np.abs(ratio - expect) / expect)))
    return [
        _result("alpha normalization", worst_sum, 1e-9, n_instances, t0, strict=False),
        _result("alpha ordering (violations)", float(order_violations), 0.0, n_instances, t0, strict=False),
        _result("alpha ratio law", worst_ratio, 1e-6, n_instances, t0, strict=False),
    ]


def check_diversity(n_instances: int = 50, seed: int = 4) -> list[CheckResult]:
    t0 = time.perf_counter()
    gen = Rng(seed).stream("diversity").generator()
    col = gen.normal(size=(9, 1))
    same = np.tile(col, (1, 6))
    ortho = np.linalg.qr(gen.normal(size=(8, 8)))[0][:, :5] * gen.uniform(0.5, 2.0, 5)
    # orthogonal columns with exactly representable products
    exact_ortho = np.eye(7)[:, :5] * 2.5
    endpoint_err = max(abs(feature_diversity(EmbeddingPair(same, same)) - 0.0),
                       abs(feature_diversity(EmbeddingPair(exact_ortho, exact_ortho)) - 1.0))
    worst = abs(feature_diversity(EmbeddingPair(ortho, ortho)) - 1.0)
    for _ in range(n_instances):
        p = random_pair(gen)
        base = feature_diversity(p)
        perm = gen.permutation(p.d)
        scale_a, scale_b = gen.uniform(0.01, 100, p.d), gen.uniform(0.01, 100, p.d)
        worst = max(
            worst,
            abs(feature_diversity(EmbeddingPair(p.za[:, perm], p.zb[:, perm])) - base),
            abs(feature_diversity(EmbeddingPair(p.za * scale_a, p.zb * scale_b)) - base),
        )
    return [
        _result("diversity endpoints (exact)", endpoint_err, 0.0, 2, t0, strict=False),
        _result("diversity invariances", worst, 1e-9, n_instances, t0, strict=False),
    ]


def run_all(seed: int = 0) -> list[CheckResult]:
    out = [check_oracle_equivalence(seed=seed), check_transpose_duality(seed=seed + 1)]
    out += check_gradients(seed=seed + 2)
    out += check_alpha(seed=seed + 3)
    out += check_diversity(seed=seed + 4)
    return out
