"""Dense float64 matrix helpers.

Matrices are plain 2-D ``numpy.ndarray`` objects; :func:`as_matrix` is the
single entry point that enforces the shape/finiteness contract.
"""

import numpy as np

from .errors import DataError, InsufficientDataError, ShapeError


def as_matrix(a, name="matrix"):
    """Return ``a`` as a read-only, finite, 2-D float64 array."""
    m = np.array(a, dtype=np.float64, copy=True)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DataError(f"{name} contains non-finite values")
    m.flags.writeable = False
    return m


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def transpose(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D matrix, got shape {a.shape}")
    return np.ascontiguousarray(a.T)


def l2_norm(v):
    v = np.asarray(v, dtype=np.float64).ravel()
    return float(np.sqrt(np.dot(v, v)))


def frobenius(a):
    return l2_norm(a)


def column_standardize(a, eps=1e-12):
    """Center every column and scale it to unit sample standard deviation.

    Columns whose standard deviation (n - 1 divisor) falls below ``eps`` are
    only centered and get a recorded scale of 1.

    Returns
    -------
    standardized : ndarray, shape (n, d)
    means : ndarray, shape (d,)
    scales : ndarray, shape (d,)
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    if a.shape[0] < 2:
        raise InsufficientDataError(
            f"column_standardize needs at least 2 rows, got {a.shape[0]}")
    means = a.mean(axis=0)
    centered = a - means
    std = np.sqrt((centered ** 2).sum(axis=0) / (a.shape[0] - 1))
    scales = np.where(std < eps, 1.0, std)
    out = centered / scales
    # zero-variance columns: kill rounding residue left by the centering
    out[:, std < eps] = 0.0
    return out, means, scales
