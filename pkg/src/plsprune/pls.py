"""Partial least squares via NIPALS, projection, and VIP feature importance."""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateModelError, ParameterError, ShapeError
from .linalg import as_matrix, column_standardize

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 500


@dataclass(frozen=True)
class PlsModel:
    """Fitted NIPALS state.

    Attributes
    ----------
    W : (d, c) unit-norm x-weights, one column per component.
    T : (m, c) training scores ``t_i = X_i w_i`` on the deflated X.
    Q : (k, c) unit-norm y-weights.
    P : (d, c) x-loadings used for deflation.
    C : (k, c) y-loadings (regression of Y on each score) used for deflation.
    x_means, x_scales : column statistics applied to X before fitting.
    y_means : column means removed from Y.
    S : (c,) sum of squares of Y explained by each component.
    converged : (c,) whether each inner loop met ``tol`` before ``max_iter``.
    n_iter : (c,) inner iterations spent per component.
    """

    W: np.ndarray
    T: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    C: np.ndarray
    x_means: np.ndarray
    x_scales: np.ndarray
    y_means: np.ndarray
    S: np.ndarray
    converged: np.ndarray
    n_iter: np.ndarray

    @property
    def n_components(self):
        return self.W.shape[1]

    @property
    def n_features(self):
        return self.W.shape[0]

    def to_dict(self):
        return {k: np.asarray(v).tolist() for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(v) for k, v in d.items()})


def one_hot(labels, k=None):
    labels = np.asarray(labels, dtype=np.int64)
    if k is None:
        k = int(labels.max()) + 1
    Y = np.zeros((labels.shape[0], k))
    Y[np.arange(labels.shape[0]), labels] = 1.0
    return Y


def _initial_u(Y, rng):
    u = Y[:, 0].copy()
    if not np.any(u):
        u = rng.standard_normal(Y.shape[0])
    return u


def nipals_fit(X, Y, n_components=2, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
               seed=0):
    """Fit ``n_components`` PLS components with NIPALS.

    X is standardized column-wise and Y centered before fitting. Each inner
    loop starts from the first column of the deflated Y (a seeded random
    vector if that column is all zero) and alternates the x-weight, score,
    y-weight and y-score updates until ``||w_new - w_old|| < tol``. Hitting
    ``max_iter`` is recorded in ``converged`` rather than raised.

    Parameters
    ----------
    X : array_like, shape (m, d)
    Y : array_like, shape (m, k)
        Class indicator matrix; a 1-D integer array is one-hot encoded.
    n_components : int
        Between 1 and ``min(m - 1, d)``.
    """
    X = as_matrix(X, "X")
    Y = np.asarray(Y)
    if Y.ndim == 1:
        Y = one_hot(Y)
    Y = as_matrix(Y, "Y")
    m, d = X.shape
    if Y.shape[0] != m:
        raise ShapeError(f"X has {m} rows but Y has {Y.shape[0]}")
    if m < 2:
        raise ParameterError(f"need at least 2 samples, got {m}")
    c = int(n_components)
    if c < 1 or c > min(m - 1, d):
        raise ParameterError(
            f"n_components={n_components} outside [1, min(m-1, d)] = [1, {min(m - 1, d)}]")
    if tol <= 0 or max_iter < 1:
        raise ParameterError("tol must be > 0 and max_iter >= 1")

    Xr, x_means, x_scales = column_standardize(X)
    y_means = Y.mean(axis=0)
    Yr = Y - y_means
    k = Y.shape[1]
    rng = np.random.default_rng(seed)

    W = np.zeros((d, c))
    T = np.zeros((m, c))
    Q = np.zeros((k, c))
    P = np.zeros((d, c))
    C = np.zeros((k, c))
    S = np.zeros(c)
    converged = np.zeros(c, dtype=bool)
    n_iter = np.zeros(c, dtype=np.int64)

    for i in range(c):
        u = _initial_u(Yr, rng)
        if not np.any(Xr.T @ u):
            u = rng.standard_normal(m)
        w_old = None
        for it in range(1, max_iter + 1):
            w = Xr.T @ u
            norm = np.linalg.norm(w)
            if norm == 0.0:
                raise DegenerateModelError(
                    f"component {i + 1}: X is exhausted after deflation")
            w = w / norm
            t = Xr @ w
            q = Yr.T @ t
            qn = np.linalg.norm(q)
            if qn == 0.0:
                raise DegenerateModelError(
                    f"component {i + 1}: scores carry no information about Y")
            q = q / qn
            u = Yr @ q
            n_iter[i] = it
            if w_old is not None and np.linalg.norm(w - w_old) < tol:
                converged[i] = True
                break
            w_old = w

        tt = t @ t
        p = Xr.T @ t / tt
        y_load = Yr.T @ t / tt
        # explained Y sum of squares: squared inner regression coefficient of u
        # on t times t't, i.e. ||Y't||^2 / t't
        b = (u @ t) / tt
        S[i] = b * b * tt
        Xr = Xr - np.outer(t, p)
        Yr = Yr - np.outer(t, y_load)
        W[:, i], T[:, i], Q[:, i], P[:, i], C[:, i] = w, t, q, p, y_load

    model = PlsModel(W=W, T=T, Q=Q, P=P, C=C, x_means=x_means,
                     x_scales=x_scales, y_means=y_means, S=S,
                     converged=converged, n_iter=n_iter)
    for a in model.__dict__.values():
        a.flags.writeable = False
    return model


def transform(model, X):
    """Project rows of ``X`` onto the fitted weight directions."""
    X = as_matrix(X, "X")
    if X.shape[1] != model.n_features:
        raise ShapeError(
            f"X has {X.shape[1]} columns, model expects {model.n_features}")
    return ((X - model.x_means) / model.x_scales) @ model.W


def vip(model):
    """Variable importance in projection, one nonnegative score per feature.

    ``f_j = sqrt(d * sum_i S_i (w_ij / ||w_i||)^2 / sum_i S_i)``, so the mean
    of ``f**2`` is exactly 1.
    """
    S = np.asarray(model.S, dtype=np.float64)
    total = S.sum()
    if not total > 0:
        raise DegenerateModelError("explained sum of squares is zero")
    W = np.asarray(model.W)
    d = W.shape[0]
    w2 = W ** 2 / (W ** 2).sum(axis=0)
    return np.sqrt(d * (w2 @ S) / total)
