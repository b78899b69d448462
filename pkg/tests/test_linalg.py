import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from plsprune.errors import DataError, InsufficientDataError, ShapeError
from plsprune.linalg import (
    as_matrix,
    column_standardize,
    frobenius,
    l2_norm,
    matmul,
    transpose,
)


def naive_matmul(a, b):
    out = [[0.0] * len(b[0]) for _ in range(len(a))]
    for i in range(len(a)):
        for j in range(len(b[0])):
            for k in range(len(b)):
                out[i][j] += a[i][k] * b[k][j]
    return np.array(out)


def test_matmul_identity():
    np.testing.assert_array_equal(matmul(np.eye(2), [[3.0], [4.0]]), [[3.0], [4.0]])


def test_matmul_dot():
    assert matmul([[1.0, 2.0]], [[3.0], [4.0]]).tolist() == [[11.0]]


def test_matmul_against_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.max(np.abs(matmul(a, b) - naive_matmul(a.tolist(), b.tolist()))) < 1e-12


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative(rng):
    for _ in range(20):
        a, b, c = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=(3, 6))
        left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
        assert np.max(np.abs(left - right)) <= 1e-9 * max(1.0, np.max(np.abs(left)))


def test_transpose():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert transpose(a).tolist() == [[1.0, 3.0], [2.0, 4.0]]
    np.testing.assert_array_equal(transpose(transpose(a)), a)
    assert transpose([[7.0]]).tolist() == [[7.0]]


def test_norms():
    assert l2_norm([3.0, 4.0]) == 5.0
    assert l2_norm(np.zeros(5)) == 0.0
    v = np.ones(7) / math.sqrt(7)
    assert abs(l2_norm(v) - 1.0) <= 1e-15
    assert frobenius([[3.0, 0.0], [0.0, 4.0]]) == 5.0


def test_as_matrix_rejects_non_finite():
    with pytest.raises(DataError):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(DataError):
        as_matrix([[np.inf]])


def test_standardize_constant_column():
    out, means, scales = column_standardize(np.full((4, 1), 3.5))
    assert np.all(out == 0.0)
    assert scales.tolist() == [1.0] and means.tolist() == [3.5]


def test_standardize_two_values():
    out, means, scales = column_standardize(np.array([[-1.0], [1.0]]))
    # sample std with n-1 divisor is sqrt(2)
    assert means[0] == 0.0
    assert abs(scales[0] - math.sqrt(2)) < 1e-15
    np.testing.assert_allclose(out[:, 0], [-1 / math.sqrt(2), 1 / math.sqrt(2)], rtol=0, atol=1e-15)


def test_standardize_needs_two_rows():
    with pytest.raises(InsufficientDataError):
        column_standardize(np.ones((1, 3)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 6)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_standardize_moments(a):
    out, _, _ = column_standardize(a)
    # recompute statistics independently
    for j in range(a.shape[1]):
        col = out[:, j]
        if np.std(a[:, j], ddof=1) < 1e-12:
            assert np.all(col == 0.0)
            continue
        if np.std(a[:, j], ddof=1) < 1e-6 * np.max(np.abs(a[:, j])):
            continue  # catastrophic cancellation territory
        assert abs(col.mean()) < 1e-10
        assert abs(col.std(ddof=1) - 1.0) < 1e-10
