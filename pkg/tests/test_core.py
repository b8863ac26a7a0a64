import numpy as np
import pytest

from wfriction.core import (
    PRNG_ALGORITHM,
    NumericError,
    Prng,
    ShapeError,
    argmax_row,
    as_matrix,
    elementwise,
    fisher_yates_permutation,
    matmul,
)


def test_as_matrix_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        as_matrix([1.0, 2.0])
    with pytest.raises(ShapeError):
        as_matrix(np.zeros((0, 3)))
    assert as_matrix([1, 2, 3, 4], cols=2).shape == (2, 2)


def test_matmul_shapes_and_values():
    a = np.arange(6.0).reshape(2, 3)
    b = np.ones((3, 2))
    np.testing.assert_array_equal(matmul(a, b), [[3, 3], [12, 12]])
    with pytest.raises(ShapeError):
        matmul(a, a)


def test_matmul_overflow_is_numeric_error():
    with pytest.raises(NumericError):
        matmul([[1e308, 1e308]], [[10.0], [10.0]])


def test_elementwise_ops():
    a = np.array([[1.0, 2.0]])
    b = np.array([[3.0, 5.0]])
    np.testing.assert_array_equal(elementwise("add", a, b), [[4, 7]])
    np.testing.assert_array_equal(elementwise("sub", a, b), [[-2, -3]])
    np.testing.assert_array_equal(elementwise("mul", a, b), [[3, 10]])
    np.testing.assert_array_equal(elementwise("scale", a, 2.0), [[2, 4]])
    with pytest.raises(ShapeError):
        elementwise("add", a, np.ones((2, 2)))
    with pytest.raises(ShapeError):
        elementwise("scale", a, b)
    with pytest.raises(ValueError):
        elementwise("pow", a, b)


def test_argmax_ties_go_low():
    m = np.array([[0.1, 0.7, 0.7], [3.0, 3.0, 1.0]])
    assert argmax_row(m, 0) == 1
    assert argmax_row(m, 1) == 0
    with pytest.raises(IndexError):
        argmax_row(m, 2)


def test_prng_reproducible_and_seed_sensitive():
    a = Prng(42).random(100)
    b = Prng(42).random(100)
    c = Prng(43).random(100)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert Prng(1).algorithm_id == PRNG_ALGORITHM


def test_prng_uses_top_53_bits_of_pcg64():
    raw = np.random.PCG64(7).random_raw(5)
    expected = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53
    np.testing.assert_array_equal(Prng(7).random(5), expected)


def test_prng_ranges():
    r = Prng(3)
    u = r.random(10000)
    assert u.min() >= 0.0 and u.max() < 1.0
    v = r.uniform(-2.0, 5.0, size=10000)
    assert v.min() >= -2.0 and v.max() < 5.0
    with pytest.raises(ValueError):
        r.uniform(1.0, 1.0)
    with pytest.raises(ValueError):
        Prng(-1)


def test_normal_moments():
    z = Prng(11).normal((200001,))
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01


def test_fisher_yates_is_permutation_and_deterministic():
    p = fisher_yates_permutation(Prng(5), 50)
    assert sorted(p.tolist()) == list(range(50))
    np.testing.assert_array_equal(p, fisher_yates_permutation(Prng(5), 50))
    assert fisher_yates_permutation(Prng(5), 1).tolist() == [0]
    with pytest.raises(ValueError):
        fisher_yates_permutation(Prng(5), 0)


def test_fisher_yates_roughly_uniform():
    counts = np.zeros((3, 3))
    r = Prng(9)
    for _ in range(6000):
        p = fisher_yates_permutation(r, 3)
        counts[np.arange(3), p] += 1
    # each value lands in each position about a third of the time
    assert np.all(np.abs(counts / 6000 - 1 / 3) < 0.03)
