"""Stochastic gradient boosting with leaf-wise histogram trees (squared error).

Features are pre-binned into at most 255 equal-frequency bins. Each round
fits a tree to the current residuals; a leaf holding residual sum ``s`` over
``h`` rows outputs ``learning_rate * sign(s) * max(|s| - l1, 0) / (h + l2)``.
Splits maximize the matching gain, ``T(s_L)^2/(h_L+l2) + T(s_R)^2/(h_R+l2)
- T(s)^2/(h+l2)`` with ``T`` the L1 soft threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from .. import rng as rngmod
from ..errors import InvalidParams
from .base import FittedModel, params_from_json, register

MAX_BINS = 255


@dataclass(frozen=True)
class GbmParams:
    learning_rate: float = 0.1
    num_rounds: int = 100
    num_leaves: int = 31
    max_depth: int = -1  # <= 0: unlimited
    extra_trees: bool = False
    min_data_in_leaf: int = 20
    bagging_fraction: float = 1.0
    bagging_freq: int = 0
    feature_fraction: float = 1.0
    min_data_in_bin: int = 3
    l1: float = 0.0
    l2: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise InvalidParams("learning_rate must be > 0")
        if self.num_rounds < 0:
            raise InvalidParams("num_rounds must be >= 0")
        if self.num_leaves < 1:
            raise InvalidParams("num_leaves must be >= 1")
        for name in ("bagging_fraction", "feature_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise InvalidParams(f"{name} must be in (0, 1]")
        if self.min_data_in_leaf < 1 or self.min_data_in_bin < 1:
            raise InvalidParams("min_data_in_leaf and min_data_in_bin must be >= 1")
        if self.l1 < 0 or self.l2 < 0:
            raise InvalidParams("l1 and l2 must be >= 0")


STATEWIDE_GBM_DIRECT = GbmParams(
    learning_rate=0.05, num_rounds=100, num_leaves=16, max_depth=24, extra_trees=True,
    min_data_in_leaf=16, bagging_fraction=0.8, bagging_freq=6, feature_fraction=0.8,
    min_data_in_bin=14, l1=0.1, l2=0.1,
)
STATEWIDE_GBM_INDIRECT = GbmParams(
    learning_rate=0.10, num_rounds=4000, num_leaves=43, max_depth=24, extra_trees=True,
    min_data_in_leaf=3, bagging_fraction=1.0, bagging_freq=5, feature_fraction=0.7,
    min_data_in_bin=15, l1=8.0, l2=5.0,
)


def _midpoint(a: float, b: float) -> float:
    t = 0.5 * (a + b)
    return t if t < b else a


def bin_uppers(x: np.ndarray, max_bins: int = MAX_BINS, min_data_in_bin: int = 3) -> np.ndarray:
    """Upper bounds of equal-frequency bins for one feature.

    Distinct values are accumulated into a bin until it holds at least
    ``max(min_data_in_bin, ceil(n / max_bins))`` rows; a short trailing bin
    is merged into its predecessor. Bin b holds values in
    ``(uppers[b-1], uppers[b]]``; the last bin is unbounded above.
    """
    vals, counts = np.unique(x, return_counts=True)
    n = int(counts.sum())
    target = max(min_data_in_bin, math.ceil(n / max_bins))
    uppers = []
    acc = 0
    for i in range(vals.shape[0] - 1):
        acc += int(counts[i])
        if acc >= target:
            uppers.append(_midpoint(float(vals[i]), float(vals[i + 1])))
            acc = 0
    acc += int(counts[-1]) if vals.size else 0
    if uppers and acc < min_data_in_bin:
        uppers.pop()
    while len(uppers) > max_bins - 1:
        uppers.pop()
    return np.array(uppers, dtype=np.float64)


def apply_bins(X: np.ndarray, uppers: list) -> np.ndarray:
    B = np.empty(X.shape, dtype=np.uint8)
    for f, u in enumerate(uppers):
        B[:, f] = np.searchsorted(u, X[:, f], side="left")
    return B


@register("gbm")
class GradientBoostingModel(FittedModel):
    def __init__(self, params, feature_names, meta, init_score, packed):
        super().__init__(params, feature_names, meta)
        self.init_score = float(init_score)
        self.feature, self.threshold, self.left, self.right, self.value, self.roots = packed

    @property
    def num_trees(self) -> int:
        return int(self.roots.shape[0])

    def predict_array(self, X):
        init = np.full(X.shape[0], self.init_score)
        if self.num_trees == 0:
            return init
        return _kernels.backend.predict_packed(X, self.feature, self.threshold, self.left,
                                               self.right, self.value, self.roots, init)

    def structure(self):
        return {
            "init_score": self.init_score,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "roots": self.roots.tolist(),
        }

    @classmethod
    def from_structure(cls, params, feature_names, meta, s, base_dir=None):
        packed = (
            np.array(s["feature"], dtype=np.int64),
            np.array(s["threshold"], dtype=np.float64),
            np.array(s["left"], dtype=np.int64),
            np.array(s["right"], dtype=np.int64),
            np.array(s["value"], dtype=np.float64),
            np.array(s["roots"], dtype=np.int64),
        )
        return cls(params_from_json(GbmParams, params), feature_names, meta, s["init_score"], packed)


def _mse(r: np.ndarray) -> float:
    return math.fsum((r * r).tolist()) / r.shape[0]


def fit_gbm(train, p: GbmParams) -> GradientBoostingModel:
    if train.n == 0:
        raise InvalidParams("empty training table")
    p.validate()
    X = np.ascontiguousarray(train.X, dtype=np.float64)
    y = np.ascontiguousarray(train.y, dtype=np.float64)
    n, nf = X.shape
    uppers = [bin_uppers(X[:, f], MAX_BINS, p.min_data_in_bin) for f in range(nf)]
    n_bins = np.array([u.shape[0] + 1 for u in uppers], dtype=np.int64)
    B = np.ascontiguousarray(apply_bins(X, uppers))
    f0 = math.fsum(y.tolist()) / n
    F = np.full(n, f0)
    losses = [_mse(y - F)]
    bag = np.arange(n, dtype=np.int64)
    all_feats = np.arange(nf, dtype=np.int64)
    kern = _kernels.backend
    trees = []
    for r in range(p.num_rounds):
        if p.bagging_fraction < 1.0 and p.bagging_freq > 0 and r % p.bagging_freq == 0:
            m = max(1, math.ceil(round(n * p.bagging_fraction, 9)))
            bag = np.sort(rngmod.generator(p.seed, f"bag:{r}").choice(n, size=m, replace=False))
        if p.feature_fraction < 1.0:
            k = max(1, math.ceil(round(nf * p.feature_fraction, 9)))
            feats = np.sort(rngmod.generator(p.seed, f"features:{r}").choice(nf, size=k, replace=False))
        else:
            feats = all_feats
        grad = y - F
        feat, tbin, left, right, value = kern.grow_hist_tree(
            B, grad, bag, n_bins, feats, p.num_leaves, p.max_depth, p.min_data_in_leaf,
            p.l1, p.l2, p.learning_rate, p.extra_trees, rngmod.xoshiro_state(p.seed, f"round:{r}"))
        thr = np.array([uppers[f][b] if f >= 0 else 0.0 for f, b in zip(feat, tbin)], dtype=np.float64)
        tree = (feat, thr, left, right, value)
        F = kern.predict_packed(X, *tree, np.array([0], dtype=np.int64), F)
        losses.append(_mse(y - F))
        trees.append(tree)
    if trees:
        sizes = [t[0].shape[0] for t in trees]
        offsets = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int64)
        packed = (
            np.concatenate([t[0] for t in trees]),
            np.concatenate([t[1] for t in trees]),
            np.concatenate([np.where(t[2] >= 0, t[2] + o, -1) for t, o in zip(trees, offsets)]),
            np.concatenate([np.where(t[3] >= 0, t[3] + o, -1) for t, o in zip(trees, offsets)]),
            np.concatenate([t[4] for t in trees]),
            offsets,
        )
    else:
        packed = (np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64),
                  np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64))
    meta = {"n": n, "seed": p.seed, "train_loss": losses}
    return GradientBoostingModel(p, train.feature_names, meta, f0, packed)
