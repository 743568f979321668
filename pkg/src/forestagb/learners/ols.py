"""Ordinary least squares with an intercept, solved by Householder QR."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidParams, RankDeficient
from .base import FittedModel, register

RANK_TOL = 1e-10


@register("ols")
class OLSModel(FittedModel):
    """``beta[0] + X @ beta[1:]``."""

    def __init__(self, beta, feature_names, meta=None):
        super().__init__({}, feature_names, meta)
        self.beta = np.asarray(beta, dtype=np.float64)
        if self.beta.shape != (len(self.feature_names) + 1,):
            raise InvalidParams("coefficient count must be features + 1")

    def predict_array(self, X):
        out = np.full(X.shape[0], self.beta[0])
        for j in range(X.shape[1]):
            out += self.beta[j + 1] * X[:, j]
        return out

    def structure(self):
        return {"beta": self.beta.tolist()}

    @classmethod
    def from_structure(cls, params, feature_names, meta, s, base_dir=None):
        return cls(s["beta"], feature_names, meta)


def design_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack((np.ones(X.shape[0]), X))


def fit_ols(X, y, feature_names=None) -> OLSModel:
    """Least-squares fit of y on [1, X].

    Columns are normalized before the QR factorization; a diagonal entry of
    R at most ``RANK_TOL`` times the largest one marks the column as
    collinear with the columns before it. The reported index counts the
    intercept as column 0.
    """
    A = design_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    n, p = A.shape
    if y.shape != (n,):
        raise InvalidParams("y length does not match X rows")
    if n < p:
        raise RankDeficient(n, f"{n} rows cannot identify {p} coefficients")
    norms = np.sqrt((A * A).sum(axis=0))
    for j in range(p):
        if norms[j] == 0.0:
            raise RankDeficient(j)
    An = A / norms
    Q, R = np.linalg.qr(An, mode="reduced")
    d = np.abs(np.diagonal(R))
    for j in range(p):
        if d[j] <= RANK_TOL * d.max():
            raise RankDeficient(j)
    qty = Q.T @ y
    z = np.zeros(p)
    for j in range(p - 1, -1, -1):
        z[j] = (qty[j] - R[j, j + 1:] @ z[j + 1:]) / R[j, j]
    beta = z / norms
    if feature_names is None:
        feature_names = [f"x{j}" for j in range(p - 1)]
    return OLSModel(beta, feature_names, {"n": n})
