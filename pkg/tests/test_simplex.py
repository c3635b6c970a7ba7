import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sasteer.errors import CapacityError, InvalidInputError
from sasteer.simplex import (
    oracle_simplex_projection,
    softmax,
    softmax_jvp,
    sparsemax,
    sparsemax_jvp,
    sparsemax_threshold,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
score_vectors = arrays(np.float64, st.integers(1, 30), elements=finite)
# multiples of 2^-10 in a bounded range: adding an integer is exact in float64
dyadic_vectors = arrays(np.int64, st.integers(1, 30), elements=st.integers(-4096, 4096)).map(lambda a: a / 1024.0)


def test_threshold_uniform():
    t = sparsemax_threshold([0, 0, 0, 0])
    assert t.k == 4 and t.tau == pytest.approx(-0.25)


def test_threshold_dominant():
    t = sparsemax_threshold([10, 0])
    assert t.k == 1 and t.tau == pytest.approx(9.0)


def test_threshold_matches_oracle_support():
    z = np.array([1.0, 0.1, -0.5])
    p = oracle_simplex_projection(z)
    np.testing.assert_allclose(p, [0.95, 0.05, 0.0], atol=1e-12)
    t = sparsemax_threshold(z)
    assert t.k == np.count_nonzero(p > 0) == 2
    assert t.tau == pytest.approx(0.05, abs=1e-12)


@pytest.mark.parametrize(
    "z, expected",
    [
        ([0, 0, 0, 0], [0.25] * 4),
        ([10, 0], [1, 0]),
        ([0.5, 0.3, 0.1], [8 / 15, 5 / 15, 2 / 15]),
        ([1.0, 0.1, -0.5], [0.95, 0.05, 0.0]),
    ],
)
def test_sparsemax_worked_values(z, expected):
    np.testing.assert_allclose(oracle_simplex_projection(z), expected, atol=1e-12)
    np.testing.assert_allclose(sparsemax(z), expected, atol=1e-12)


def test_sparsemax_true_zero():
    p = sparsemax([1.0, 0.1, -0.5])
    assert p[2] == 0.0 and np.count_nonzero(p == 0) == 1


def test_ties_are_deterministic():
    a = sparsemax([1.0, 1.0, 0.2])
    np.testing.assert_array_equal(a, sparsemax([1.0, 1.0, 0.2]))
    assert a[0] == a[1]


def test_entry_at_threshold_is_excluded():
    # tau = 0 here, so the last entry sits exactly on the threshold
    p = sparsemax([1.0, 0.0])
    assert p.tolist() == [1.0, 0.0]
    np.testing.assert_array_equal(sparsemax_jvp([1.0, 0.0], [3.0, -2.0]), [0.0, 0.0])


@pytest.mark.parametrize("bad", [[np.nan, 1.0], [np.inf], []])
def test_invalid_scores(bad):
    with pytest.raises(InvalidInputError):
        sparsemax(bad)
    with pytest.raises(InvalidInputError):
        softmax(bad)


def test_jvp_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        sparsemax_jvp([1.0, 2.0], [1.0])
    with pytest.raises(InvalidInputError):
        softmax_jvp([1.0, 2.0], [1.0, 2.0, 3.0])


def test_oracle_capacity():
    with pytest.raises(CapacityError):
        oracle_simplex_projection(np.zeros(21))


def test_oracle_agrees_on_random_vectors(rng):
    for _ in range(100):
        z = rng.standard_normal(rng.integers(2, 7))
        np.testing.assert_allclose(sparsemax(z), oracle_simplex_projection(z), atol=1e-9)


def test_sparsemax_jvp_singleton_and_full_support():
    np.testing.assert_array_equal(sparsemax_jvp([10, 0], [0.3, -7.0]), [0, 0])
    v = np.array([1.0, 2.0, 6.0])
    np.testing.assert_allclose(sparsemax_jvp([0, 0, 0], v), v - v.mean())


def test_sparsemax_jvp_matches_finite_differences(rng):
    eps, checked = 1e-5, 0
    while checked < 30:
        z, v = rng.standard_normal(7), rng.standard_normal(7)
        base = sparsemax(z) > 0
        hi, lo = sparsemax(z + eps * v), sparsemax(z - eps * v)
        if not (np.array_equal(hi > 0, base) and np.array_equal(lo > 0, base)):
            continue
        fd = (hi - lo) / (2 * eps)
        jv = sparsemax_jvp(z, v)
        assert np.linalg.norm(jv - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-8)
        checked += 1


def test_softmax_values():
    np.testing.assert_allclose(softmax([0, 0]), [0.5, 0.5])
    # e / (e + 1) to 30 digits via mpmath: 0.731058578630004879...
    np.testing.assert_allclose(softmax([1, 0]), [0.7310585786300049, 0.2689414213699951], atol=1e-15)


def test_softmax_jvp_values():
    np.testing.assert_allclose(softmax_jvp([0, 0], [1, 0]), [0.25, -0.25])
    np.testing.assert_allclose(softmax_jvp([0.3, -1.2, 2.0], np.ones(3)), 0, atol=1e-16)


def test_softmax_jvp_matches_finite_differences(rng):
    eps = 1e-6
    for _ in range(30):
        z, v = rng.standard_normal(6), rng.standard_normal(6)
        fd = (softmax(z + eps * v) - softmax(z - eps * v)) / (2 * eps)
        assert np.linalg.norm(softmax_jvp(z, v) - fd) <= 1e-6 * np.linalg.norm(fd)


@given(score_vectors)
def test_outputs_on_simplex(z):
    for p in (sparsemax(z), softmax(z)):
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) < 1e-9


@given(score_vectors)
def test_softmax_strictly_positive_for_moderate_scores(z):
    assert np.all(softmax(z / 50.0) > 0)


@given(dyadic_vectors, st.integers(-1000, 1000))
def test_sparsemax_translation_exact(z, c):
    np.testing.assert_array_equal(sparsemax(z + c), sparsemax(z))


@given(score_vectors, st.floats(-100, 100))
def test_translation_invariance_general(z, c):
    np.testing.assert_allclose(sparsemax(z + c), sparsemax(z), atol=1e-9)
    np.testing.assert_allclose(softmax(z + c), softmax(z), atol=1e-12)


@given(score_vectors)
def test_idempotent_on_simplex(z):
    p = sparsemax(z)
    np.testing.assert_allclose(sparsemax(p), p, atol=1e-9)


@given(score_vectors, arrays(np.float64, 30, elements=st.floats(-1, 1)))
def test_sparsemax_is_continuous(z, noise):
    # The projection is 1-Lipschitz, so a small nudge moves the output by at most as much.
    delta = 1e-6 * noise[: z.shape[0]]
    assert np.linalg.norm(sparsemax(z + delta) - sparsemax(z)) <= np.linalg.norm(delta) + 1e-12


def test_support_shrinks_with_scale(rng):
    Z = rng.standard_normal((400, 49))
    sizes = [np.mean([np.count_nonzero(sparsemax(t * z)) for z in Z]) for t in (1, 2, 4, 8)]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))
    assert all(s < 49 for s in sizes[1:])
    assert all(np.count_nonzero(softmax(z)) == 49 for z in Z[:20])
