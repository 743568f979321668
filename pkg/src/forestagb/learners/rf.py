"""Random forest regression: bagged variance-reduction CART trees."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from .. import rng as rngmod
from ..errors import InvalidParams
from .base import FittedModel, params_from_json, register


@dataclass(frozen=True)
class RfParams:
    num_trees: int = 500
    mtry: int | None = None  # None: floor(sqrt(n_features))
    min_node_size: int = 5
    sample_fraction: float = 1.0
    replace: bool = True
    seed: int = 0

    def resolved_mtry(self, n_features: int) -> int:
        if self.mtry is None:
            return max(1, int(math.sqrt(n_features)))
        return int(self.mtry)

    def validate(self, n_features: int) -> None:
        m = self.resolved_mtry(n_features)
        if not 1 <= m <= n_features:
            raise InvalidParams(f"mtry={m} outside [1, {n_features}]")
        if self.num_trees < 1:
            raise InvalidParams("num_trees must be >= 1")
        if self.min_node_size < 1:
            raise InvalidParams("min_node_size must be >= 1")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise InvalidParams("sample_fraction must be in (0, 1]")


# statewide-scale hyperparameters of the direct and indirect forests
STATEWIDE_RF_DIRECT = RfParams(num_trees=1500, mtry=31, min_node_size=2, sample_fraction=0.85, replace=True)
STATEWIDE_RF_INDIRECT = RfParams(num_trees=1000, mtry=13, min_node_size=3, sample_fraction=1.0, replace=False)


def _pack(trees):
    sizes = [t[0].shape[0] for t in trees]
    offsets = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int64)
    feature = np.concatenate([t[0] for t in trees])
    threshold = np.concatenate([t[1] for t in trees])
    left = np.concatenate([np.where(t[2] >= 0, t[2] + o, -1) for t, o in zip(trees, offsets)])
    right = np.concatenate([np.where(t[3] >= 0, t[3] + o, -1) for t, o in zip(trees, offsets)])
    value = np.concatenate([t[4] for t in trees])
    return feature, threshold, left, right, value, offsets


@register("rf")
class RandomForestModel(FittedModel):
    def __init__(self, params, feature_names, meta, packed):
        super().__init__(params, feature_names, meta)
        self.feature, self.threshold, self.left, self.right, self.value, self.roots = packed

    @property
    def num_trees(self) -> int:
        return int(self.roots.shape[0])

    def predict_array(self, X):
        s = _kernels.backend.predict_packed(X, self.feature, self.threshold, self.left, self.right,
                                            self.value, self.roots, np.zeros(X.shape[0]))
        return s / self.num_trees

    def structure(self):
        return {
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
        return cls(params_from_json(RfParams, params), feature_names, meta, packed)


def _grow_one(X, y, p: RfParams, mtry: int, t: int):
    n = y.shape[0]
    m = max(1, math.ceil(round(n * p.sample_fraction, 9)))
    gen = rngmod.generator(p.seed, f"tree:{t}")
    if p.replace:
        rows = np.sort(gen.integers(0, n, size=m))
    else:
        rows = np.sort(gen.choice(n, size=m, replace=False))
    order = np.stack([np.argsort(X[rows, f], kind="stable") for f in range(X.shape[1])])
    state = rngmod.xoshiro_state(p.seed, f"tree-nodes:{t}")
    return _kernels.backend.grow_cart_tree(X, y, rows, order, mtry, p.min_node_size, state)


def fit_rf(train, p: RfParams, n_jobs: int = 1) -> RandomForestModel:
    """Fit a forest on a TrainingTable.

    Tree t draws its rows from stream ``tree:t`` and its per-node feature
    subsets from ``tree-nodes:t``, so the forest does not depend on
    ``n_jobs``.
    """
    if train.n == 0:
        raise InvalidParams("empty training table")
    X = np.ascontiguousarray(train.X, dtype=np.float64)
    y = np.ascontiguousarray(train.y, dtype=np.float64)
    p.validate(X.shape[1])
    mtry = p.resolved_mtry(X.shape[1])
    if n_jobs > 1 and p.num_trees > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            trees = list(ex.map(lambda t: _grow_one(X, y, p, mtry, t), range(p.num_trees)))
    else:
        trees = [_grow_one(X, y, p, mtry, t) for t in range(p.num_trees)]
    meta = {"n": train.n, "seed": p.seed}
    return RandomForestModel(p, train.feature_names, meta, _pack(trees))
