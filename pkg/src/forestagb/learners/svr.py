"""Epsilon support vector regression with a Laplacian kernel.

k(u, v) = exp(-sigma * ||u - v||_2). The dual is solved by SMO with
second-order working-set selection. With ``scale=True`` (the default)
features and response are standardized before fitting, as the common R
implementation does; sigma, C and epsilon then refer to the scaled problem.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..errors import InvalidParams, NotConverged, TooManyRows
from .base import FittedModel, params_from_json, register

log = logging.getLogger(__name__)

DEFAULT_ROW_CAP = 4000


@dataclass(frozen=True)
class SvrParams:
    kernel: str = "laplacian"
    sigma: float = 0.1
    c: float = 1.0
    epsilon: float = 0.1
    tolerance: float = 1e-3
    max_iterations: int = 1_000_000
    scale: bool = True
    row_cap: int = DEFAULT_ROW_CAP

    def validate(self) -> None:
        if self.kernel != "laplacian":
            raise InvalidParams(f"unsupported kernel {self.kernel!r}")
        if not self.sigma > 0 or not self.c > 0:
            raise InvalidParams("sigma and c must be > 0")
        if self.epsilon < 0:
            raise InvalidParams("epsilon must be >= 0")
        if not self.tolerance > 0 or self.max_iterations < 1:
            raise InvalidParams("tolerance must be > 0 and max_iterations >= 1")


STATEWIDE_SVR_DIRECT = SvrParams(sigma=0.0019531, c=36.0, epsilon=0.0441942)


def euclidean_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    D = np.zeros((A.shape[0], B.shape[0]))
    for f in range(A.shape[1]):
        d = A[:, f][:, None] - B[:, f][None, :]
        D += d * d
    return np.sqrt(D)


def laplacian_kernel(A, B, sigma: float) -> np.ndarray:
    return np.exp(-sigma * euclidean_distances(A, B))


def dual_objective(K, y, beta, eps) -> float:
    """0.5 b'Kb + eps*|b|_1 - y'b (the minimized form of the dual)."""
    return float(0.5 * beta @ K @ beta + eps * np.abs(beta).sum() - y @ beta)


@register("svr")
class SupportVectorModel(FittedModel):
    def __init__(self, params, feature_names, meta, sv, coef, bias, x_center, x_scale, y_center, y_scale):
        super().__init__(params, feature_names, meta)
        self.sv = np.asarray(sv, dtype=np.float64).reshape(-1, len(self.feature_names))
        self.coef = np.asarray(coef, dtype=np.float64)
        self.bias = float(bias)
        self.x_center = np.asarray(x_center, dtype=np.float64)
        self.x_scale = np.asarray(x_scale, dtype=np.float64)
        self.y_center = float(y_center)
        self.y_scale = float(y_scale)

    def decision(self, Xs: np.ndarray) -> np.ndarray:
        # column-by-column accumulation keeps each row's value independent of
        # how many rows are predicted together
        out = np.zeros(Xs.shape[0])
        for j in range(self.coef.shape[0]):
            d2 = np.zeros(Xs.shape[0])
            for f in range(Xs.shape[1]):
                t = Xs[:, f] - self.sv[j, f]
                d2 += t * t
            out += self.coef[j] * np.exp(-self.params.sigma * np.sqrt(d2))
        return out + self.bias

    def predict_array(self, X):
        Xs = (X - self.x_center) / self.x_scale
        return self.decision(Xs) * self.y_scale + self.y_center

    def structure(self):
        return {
            "support_vectors": self.sv.tolist(),
            "coef": self.coef.tolist(),
            "bias": self.bias,
            "x_center": self.x_center.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_center": self.y_center,
            "y_scale": self.y_scale,
        }

    @classmethod
    def from_structure(cls, params, feature_names, meta, s, base_dir=None):
        return cls(params_from_json(SvrParams, params), feature_names, meta, s["support_vectors"],
                   s["coef"], s["bias"], s["x_center"], s["x_scale"], s["y_center"], s["y_scale"])


def _scaling(X, y, scale: bool):
    nf = X.shape[1]
    if not scale:
        return np.zeros(nf), np.ones(nf), 0.0, 1.0
    xc = X.mean(axis=0)
    xs = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.ones(nf)
    xs = np.where(xs > 0, xs, 1.0)
    yc = float(y.mean())
    ys = float(y.std(ddof=1)) if y.shape[0] > 1 else 1.0
    return xc, xs, yc, (ys if ys > 0 else 1.0)


def fit_svr(train, p: SvrParams, row_cap: int | None = None) -> SupportVectorModel:
    """Fit on a TrainingTable. Raises TooManyRows above the row cap and
    NotConverged (carrying the last iterate as ``best``) when SMO stops at
    ``max_iterations``."""
    p.validate()
    cap = p.row_cap if row_cap is None else row_cap
    if train.n == 0:
        raise InvalidParams("empty training table")
    if train.n > cap:
        raise TooManyRows(train.n, cap)
    X = np.asarray(train.X, dtype=np.float64)
    y = np.asarray(train.y, dtype=np.float64)
    xc, xs, yc, ys = _scaling(X, y, p.scale)
    Xs = (X - xc) / xs
    ysd = (y - yc) / ys
    K = np.ascontiguousarray(laplacian_kernel(Xs, Xs, p.sigma))
    beta, b, iters, gap = _kernels.backend.smo_solve(K, ysd, p.c, p.epsilon, p.tolerance, p.max_iterations)
    keep = np.flatnonzero(beta != 0.0)
    meta = {"n": train.n, "iterations": int(iters), "kkt_gap": float(gap), "n_support": int(keep.size)}
    model = SupportVectorModel(p, train.feature_names, meta, Xs[keep], beta[keep], b, xc, xs, yc, ys)
    if gap >= p.tolerance:
        raise NotConverged(p.max_iterations, model, gap)
    return model
