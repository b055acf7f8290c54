import math
import zlib

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dimcl.numcore import Rng, Tape, l2_normalize, stable_softmax
from dimcl.numcore import autodiff as ad
from dimcl.losses import dimcl_loss, EmbeddingPair, dimcl_loss_graph
from dimcl.oracles import central_difference, relative_error

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


# --- l2_normalize ---------------------------------------------------------


def test_normalize_rows_345():
    np.testing.assert_allclose(l2_normalize([[3.0, 4.0]], "rows"), [[0.6, 0.8]], atol=1e-15)


def test_normalize_unit_column_unchanged():
    e1 = np.array([[1.0], [0.0], [0.0], [0.0]])
    assert np.array_equal(l2_normalize(e1, "cols"), e1)


def test_normalize_random_columns_against_brute_force_norm():
    m = np.random.default_rng(3).normal(size=(8, 6))
    out = l2_normalize(m, "cols")
    for j in range(6):
        norm = math.sqrt(sum(float(x) ** 2 for x in out[:, j]))
        assert abs(norm - 1.0) < 1e-6


def test_normalize_tiny_vector_scaled_by_inverse_eps():
    m = np.array([[1e-14, 0.0], [1.0, 1.0]])
    out = l2_normalize(m, "rows", eps=1e-12)
    np.testing.assert_allclose(out[0], [1e-2, 0.0])


@pytest.mark.parametrize("shape", [(0, 3), (3, 0)])
def test_normalize_empty_matrix(shape):
    with pytest.raises(ValueError, match="empty matrix"):
        l2_normalize(np.zeros(shape), "rows")


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=finite),
       st.sampled_from(["rows", "cols"]))
def test_normalize_idempotent(m, axis):
    # sub-eps vectors are scaled by 1/eps rather than normalized, so idempotence
    # only holds for zero vectors and vectors of norm >= eps
    norms = np.linalg.norm(m, axis=1 if axis == "rows" else 0)
    assume(np.all((norms == 0) | (norms >= 1e-12)))
    once = l2_normalize(m, axis)
    np.testing.assert_allclose(l2_normalize(once, axis), once, atol=1e-12)


# --- stable_softmax -------------------------------------------------------


def test_softmax_symmetric():
    np.testing.assert_array_equal(stable_softmax([0.0, 0.0], 1.0), [0.5, 0.5])


def test_softmax_no_overflow():
    p = stable_softmax([1000.0, 0.0], 1.0)
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0) and p[1] < 1e-300


def test_softmax_sharp_temperature():
    # e^10 / (e^10 + 2) and 1 / (e^10 + 2)
    np.testing.assert_allclose(
        stable_softmax([1.0, 0.0, 0.0], 0.1),
        [0.9999092083843409, 4.539580782951091e-05, 4.539580782951091e-05],
        rtol=1e-12,
    )


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_softmax_rejects_nonpositive_tau(tau):
    with pytest.raises(ValueError, match="nonpositive temperature"):
        stable_softmax([1.0, 2.0], tau)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 10), elements=st.floats(-1e4, 1e4)),
       st.floats(-50, 50), st.floats(0.05, 5))
def test_softmax_sums_to_one_and_is_shift_invariant(v, c, tau):
    p = stable_softmax(v, tau)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(stable_softmax(v + c, tau), p, atol=1e-12)


# --- Rng ------------------------------------------------------------------


def test_rng_reproducible_bitwise():
    a = Rng(7).stream("augment").generator().normal(size=100)
    b = Rng(7).stream("augment").generator().normal(size=100)
    assert a.tobytes() == b.tobytes()


def test_rng_streams_are_independent_of_each_other():
    base = Rng(7)
    data = base.stream("data").generator().permutation(50)
    # drawing from another stream first does not move the data stream
    base.stream("augment").generator().normal(size=1000)
    assert np.array_equal(base.stream("data").generator().permutation(50), data)
    assert not np.array_equal(
        base.stream("augment").generator().random(10), base.stream("data").generator().random(10)
    )


def test_rng_seed_changes_output():
    assert Rng(1).generator().random() != Rng(2).generator().random()


# --- autodiff -------------------------------------------------------------


def test_backward_sum_gives_ones():
    t = Tape()
    m = t.leaf(np.arange(6.0).reshape(2, 3), "m")
    g = t.backward(ad.sum_(m))
    assert np.array_equal(g["m"], np.ones((2, 3)))


def test_backward_half_frobenius_gives_input():
    t = Tape()
    x = np.random.default_rng(0).normal(size=(4, 3))
    m = t.leaf(x, "m")
    g = t.backward(0.5 * ad.sum_(m * m))
    np.testing.assert_allclose(g["m"], x, rtol=1e-15)


def test_backward_requires_scalar():
    t = Tape()
    m = t.leaf(np.ones((2, 2)), "m")
    with pytest.raises(ValueError, match="scalar"):
        t.backward(m * 2.0)


def test_unreachable_leaf_gets_zero_gradient_of_same_shape():
    t = Tape()
    a = t.leaf(np.ones((2, 3)), "a")
    b = t.leaf(np.ones((4, 1)), "b")
    g = t.backward(ad.sum_(a))
    assert g["b"].shape == (4, 1) and not g["b"].any()


def test_stop_gradient_blocks_flow():
    t = Tape()
    a = t.leaf(np.ones((2, 2)), "a")
    g = t.backward(ad.sum_(ad.stop_gradient(a) * a))
    np.testing.assert_array_equal(g["a"], np.ones((2, 2)))


def test_dimcl_backward_matches_finite_differences():
    rng = np.random.default_rng(11)
    za, zb = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    t = Tape()
    g = t.backward(dimcl_loss_graph(t.leaf(za, "a"), t.leaf(zb, "b"), 0.1))
    fa = central_difference(lambda x: dimcl_loss(EmbeddingPair(x, zb), 0.1).value, za)
    fb = central_difference(lambda x: dimcl_loss(EmbeddingPair(za, x), 0.1).value, zb)
    assert relative_error(g["a"], fa) < 1e-5
    assert relative_error(g["b"], fb) < 1e-5


def _fd_check(build, inputs, tol=1e-6, step=1e-6):
    """Compare tape gradients of ``build(*vars)`` with central differences."""
    t = Tape()
    leaves = [t.leaf(x, f"x{i}") for i, x in enumerate(inputs)]
    grads = t.backward(build(*leaves))
    for i, x in enumerate(inputs):
        def f(v, i=i):
            t2 = Tape()
            args = [t2.constant(v if j == i else inputs[j]) for j in range(len(inputs))]
            return float(build(*args).value)
        fd = central_difference(f, x, step)
        assert relative_error(grads[f"x{i}"], fd) < tol, f"input {i}"


def _weights(shape, seed):
    return np.random.default_rng(seed).normal(size=shape)


PRIMITIVES = {
    "matmul": (lambda a, b: ad.sum_(ad.matmul(a, b) * _weights((5, 4), 0)), [(5, 3), (3, 4)]),
    "add_bias": (lambda a, b: ad.sum_((a + b) * _weights((6, 3), 1)), [(6, 3), (3,)]),
    "mul": (lambda a, b: ad.sum_(a * b * _weights((4, 4), 2)), [(4, 4), (4, 4)]),
    "relu": (lambda a: ad.sum_(ad.relu(a) * _weights((7, 5), 3)), [(7, 5)]),
    "absolute": (lambda a: ad.sum_(ad.absolute(a) * _weights((3, 3), 4)), [(3, 3)]),
    "batch_norm": (lambda a: ad.sum_(ad.batch_norm(a) * _weights((8, 3), 5)), [(8, 3)]),
    "l2_rows": (lambda a: ad.sum_(ad.l2_normalize(a, "rows") * _weights((5, 4), 6)), [(5, 4)]),
    "l2_cols": (lambda a: ad.sum_(ad.l2_normalize(a, "cols") * _weights((5, 4), 7)), [(5, 4)]),
    "logsumexp": (lambda a: ad.sum_(ad.logsumexp(a, 1) * _weights((6,), 8)), [(6, 5)]),
    "logsumexp_masked": (
        lambda a: ad.sum_(ad.logsumexp(a, 1, mask=~np.eye(4, dtype=bool)) * _weights((4,), 9)),
        [(4, 4)],
    ),
    "diagonal_concat": (
        lambda a, b: ad.sum_(ad.concat([a, b], axis=1) * _weights((3, 5), 10)) + ad.sum_(ad.diagonal(a)),
        [(3, 3), (3, 2)],
    ),
    "transpose_mean": (lambda a: ad.mean(a.T * _weights((2, 5), 11)), [(5, 2)]),
    "cross_entropy": (lambda a: ad.softmax_cross_entropy(a, np.array([0, 2, 1, 2])), [(4, 3)]),
    "conv2d": (
        lambda x, w: ad.sum_(ad.conv2d(x, w) * _weights((2, 4, 4, 3), 12)),
        [(2, 4, 4, 2), (3, 3, 2, 3)],
    ),
    "pools": (
        lambda x: ad.sum_(ad.global_avg_pool(ad.avg_pool2(x)) * _weights((2, 3), 13)),
        [(2, 4, 4, 3)],
    ),
    "reshape": (lambda a: ad.sum_(ad.reshape(a, (6, 2)) * _weights((6, 2), 14)), [(3, 4)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    build, shapes = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    _fd_check(build, [rng.normal(size=s) for s in shapes])


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 16), st.integers(2, 16), st.integers(0, 2**31))
def test_matmul_gradient_property(n, k, seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(n, n))
    _fd_check(lambda a, b: ad.sum_(ad.matmul(a, b) * w), [rng.normal(size=(n, k)), rng.normal(size=(k, n))])


def test_tape_is_topologically_ordered():
    t = Tape()
    a = t.leaf(np.ones((2, 2)), "a")
    out = ad.sum_(ad.relu(a @ a) + a)
    for node in t.nodes[: out.index + 1]:
        assert all(p.index < node.index for p in node.parents)


def test_duplicate_leaf_name_rejected():
    t = Tape()
    t.leaf(np.ones(2), "w")
    with pytest.raises(ValueError):
        t.leaf(np.ones(2), "w")
