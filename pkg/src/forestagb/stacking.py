"""Leave-one-out stacked ensembles, the direct/indirect average, and grid search.

A stacked ensemble predicts ``beta0 + sum_j beta_j * P_j(row)`` where the
``P_j`` are component models refit on all training rows and ``beta`` comes
from an OLS regression of the response on held-out component predictions.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, ForestAGBError, InvalidParams, SchemaMismatch
from .learners import PARAM_TYPES
from .learners import fit as fit_learner
from .learners.base import FittedModel, model_from_json, register
from .learners.ols import OLSModel, fit_ols
from .reference import TrainingTable

log = logging.getLogger(__name__)

CV_COLUMNS = ["comp_kind", "param_json", "fold", "rmse"]


@dataclass(frozen=True)
class ComponentSpec:
    kind: str
    params: object

    def __post_init__(self):
        if self.kind not in PARAM_TYPES:
            raise ConfigError(f"unknown component kind {self.kind!r}")

    def fit(self, table: TrainingTable):
        return fit_learner(self.kind, table, self.params)


def _pmap(fn, items, n_jobs: int):
    if n_jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _predict(model, table: TrainingTable) -> np.ndarray:
    return np.asarray(model.predict(table), dtype=np.float64)


# ---------------------------------------------------------------------------
# stacked ensemble


@register("stacked")
class StackedEnsemble(FittedModel):
    def __init__(self, components, meta_model: OLSModel, feature_names, loo_matrix=None, meta=None):
        super().__init__({}, feature_names, meta)
        self.components = list(components)
        self.meta_model = meta_model
        self.loo_matrix = None if loo_matrix is None else np.asarray(loo_matrix, dtype=np.float64)
        if self.meta_model.beta.shape[0] != len(self.components) + 1:
            raise InvalidParams("meta coefficient count must equal components + 1")

    @property
    def beta(self) -> np.ndarray:
        return self.meta_model.beta

    @property
    def kinds(self) -> list:
        return [getattr(c, "kind", "stub") for c in self.components]

    def component_predictions(self, rows) -> np.ndarray:
        cols = [np.asarray(c.predict(rows), dtype=np.float64) for c in self.components]
        return np.column_stack(cols) if cols else np.zeros((0, 0))

    def predict(self, rows) -> np.ndarray:
        if isinstance(rows, TrainingTable):
            if rows.schema_hash != self.schema_hash:
                raise SchemaMismatch("table schema does not match ensemble schema")
            if rows.n == 0:
                return np.zeros(0)
        else:
            rows = np.asarray(rows, dtype=np.float64)
            if rows.size == 0:
                return np.zeros(0)
        return self.meta_model.predict_array(self.component_predictions(rows))

    def predict_array(self, X):
        return self.predict(X)

    def structure(self):
        return {
            "beta": self.beta.tolist(),
            "components": [{"doc": c.to_json()} for c in self.components],
            "loo_matrix": None if self.loo_matrix is None else self.loo_matrix.tolist(),
        }

    def save(self, path) -> Path:
        """Write each component to its own file next to ``path`` and the
        coefficients plus file references to ``path``."""
        path = Path(path)
        entries = []
        for j, c in enumerate(self.components):
            name = f"{path.stem}.c{j}.{c.kind}.json"
            (path.parent / name).write_text(json.dumps(c.to_json()) + "\n")
            entries.append({"kind": c.kind, "file": name})
        doc = self.to_json()
        doc["structure"]["components"] = entries
        path.write_text(json.dumps(doc) + "\n")
        return path

    @classmethod
    def from_structure(cls, params, feature_names, meta, s, base_dir=None):
        comps = []
        for e in s["components"]:
            if "doc" in e:
                comps.append(model_from_json(e["doc"], base_dir))
            else:
                if base_dir is None:
                    raise ConfigError("component files need a base directory")
                p = Path(base_dir) / e["file"]
                comps.append(model_from_json(json.loads(p.read_text()), base_dir))
        ols = OLSModel(s["beta"], [f"P{j + 1}" for j in range(len(comps))])
        return cls(comps, ols, feature_names, s.get("loo_matrix"), meta)


def from_coefficients(beta, components, feature_names) -> StackedEnsemble:
    names = [f"P{j + 1}" for j in range(len(components))]
    return StackedEnsemble(components, OLSModel(beta, names), feature_names)


def _fold_ids(n: int, k: int, seed: int, label: str) -> np.ndarray:
    perm = rngmod.generator(seed, label).permutation(n)
    fid = np.empty(n, dtype=np.int64)
    fid[perm] = np.arange(n) % k
    return fid


def loo_stack(train: TrainingTable, comps: Sequence, n_jobs: int = 1,
              oof_folds: int | None = None, seed: int = 0) -> StackedEnsemble:
    """Fit a stacked ensemble.

    By default each row's held-out prediction comes from components fit on
    the other n-1 rows. ``oof_folds=k`` replaces this with k-fold
    out-of-fold predictions, a cheaper approximation for large n. Components
    are refit on all rows for the final ensemble.
    """
    n = train.n
    if n < len(comps) + 2:
        raise InvalidParams(f"stacking {len(comps)} components needs at least {len(comps) + 2} rows")
    if oof_folds is None:
        groups = [np.array([i]) for i in range(n)]
    else:
        if not 2 <= oof_folds <= n:
            raise ConfigError("oof_folds must be in [2, n]")
        fid = _fold_ids(n, oof_folds, seed, "oof-folds")
        groups = [np.flatnonzero(fid == k) for k in range(oof_folds)]
    all_idx = np.arange(n)
    tasks = [(j, g) for j in range(len(comps)) for g in range(len(groups))]

    def held_out(task):
        j, g = task
        test = groups[g]
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        model = comps[j].fit(train.subset(all_idx[mask]))
        return _predict(model, train.subset(test))

    preds = _pmap(held_out, tasks, n_jobs)
    P = np.zeros((n, len(comps)))
    for (j, g), p in zip(tasks, preds):
        P[groups[g], j] = p
    names = [f"P{j + 1}" for j in range(len(comps))]
    meta_model = fit_ols(P, train.y, names)
    final = _pmap(lambda j: comps[j].fit(train), list(range(len(comps))), n_jobs)
    meta = {"n": n, "holdout": "loo" if oof_folds is None else f"{oof_folds}-fold", "seed": seed}
    return StackedEnsemble(final, meta_model, train.feature_names, P, meta)


def predict_stacked(e: StackedEnsemble, rows) -> np.ndarray:
    return e.predict(rows)


@register("averaged")
class AveragedEnsemble(FittedModel):
    """Mean of a direct and an indirect stacked ensemble."""

    def __init__(self, direct, indirect, meta=None):
        if direct is None or indirect is None:
            raise ConfigError("averaged ensemble needs both members")
        if list(direct.feature_names) != list(indirect.feature_names):
            raise SchemaMismatch("direct and indirect members use different predictors")
        super().__init__({}, direct.feature_names, meta)
        self.direct = direct
        self.indirect = indirect

    def predict(self, rows) -> np.ndarray:
        return (self.direct.predict(rows) + self.indirect.predict(rows)) / 2.0

    def predict_array(self, X):
        return self.predict(X)

    def structure(self):
        return {"direct": {"doc": self.direct.to_json()}, "indirect": {"doc": self.indirect.to_json()}}

    def save(self, path, member_files: dict | None = None) -> Path:
        """Write the members next to ``path`` (or reference already saved
        member files given as ``{"direct": name, "indirect": name}``)."""
        path = Path(path)
        members = {}
        for name, m in (("direct", self.direct), ("indirect", self.indirect)):
            if member_files and name in member_files:
                fname = member_files[name]
            else:
                fname = f"{path.stem}.{name}.json"
                m.save(path.parent / fname)
            members[name] = {"file": fname}
        doc = self.to_json()
        doc["structure"] = members
        path.write_text(json.dumps(doc) + "\n")
        return path

    @classmethod
    def from_structure(cls, params, feature_names, meta, s, base_dir=None):
        def load(e):
            if "doc" in e:
                return model_from_json(e["doc"], base_dir)
            return model_from_json(json.loads((Path(base_dir) / e["file"]).read_text()), base_dir)

        return cls(load(s["direct"]), load(s["indirect"]), meta)


def predict_averaged(a: AveragedEnsemble, rows) -> np.ndarray:
    return a.predict(rows)


# ---------------------------------------------------------------------------
# grid search


@dataclass(frozen=True)
class TuneGrid:
    axes: dict  # parameter name -> list of values
    folds: int = 5
    rounds: int = 1  # refinement rounds after the initial grid
    seed: int = 0
    base: dict = field(default_factory=dict)  # fixed parameters

    def __post_init__(self):
        if not self.axes:
            raise ConfigError("tune grid has no axes")
        for k, v in self.axes.items():
            if not list(v):
                raise ConfigError(f"tune grid axis {k!r} is empty")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")

    @classmethod
    def from_json(cls, doc: dict) -> "TuneGrid":
        return cls(axes={k: list(v) for k, v in doc["axes"].items()}, folds=doc.get("folds", 5),
                   rounds=doc.get("rounds", 1), seed=doc.get("seed", 0), base=doc.get("base", {}))


def _is_numeric(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _spacing(values) -> float | None:
    vals = sorted({float(v) for v in values})
    if len(vals) < 2:
        return None
    return min(b - a for a, b in zip(vals, vals[1:]))


def _refined_axis(inc, spacing):
    """Three values centered on the incumbent at half the previous spacing."""
    h = spacing / 2.0
    if isinstance(inc, int):
        step = int(h)  # truncated; an integer axis stops moving once its step reaches 0
        vals = sorted({inc - step, inc, inc + step})
    else:
        vals = sorted({inc - h, inc, inc + h})
    return vals


def _combo_key(combo: dict) -> str:
    return json.dumps(combo, sort_keys=True)


def grid_search(train: TrainingTable, grid: TuneGrid, comp_kind: str, n_jobs: int = 1):
    """Exhaustive search with shared k-fold CV folds and iterative refinement.

    Round 0 evaluates the full cartesian grid. Each refinement round
    replaces every numeric axis that had at least two values with
    ``{incumbent - s/2, incumbent, incumbent + s/2}``, where ``s`` is the
    axis spacing of the previous round (so spacing halves each round);
    integer axes truncate the half spacing. Non-numeric axes stay at the incumbent.
    A combination that raises is recorded with NaN RMSE and never wins.

    Returns ``(best_params, rows)`` where rows follow ``CV_COLUMNS``.
    """
    if comp_kind not in PARAM_TYPES:
        raise ConfigError(f"unknown component kind {comp_kind!r}")
    ptype = PARAM_TYPES[comp_kind]
    fid = _fold_ids(train.n, grid.folds, grid.seed, "cv-folds")
    fold_sets = [(np.flatnonzero(fid != k), np.flatnonzero(fid == k)) for k in range(grid.folds)]

    rows: list = []
    scores: dict = {}  # key -> mean rmse
    order: list = []

    def evaluate(combo):
        out = []
        try:
            params = ptype(**{**grid.base, **combo})
        except (TypeError, ForestAGBError) as exc:
            log.warning("grid cell %s rejected: %s", combo, exc)
            return [math.nan] * grid.folds
        for tr, te in fold_sets:
            try:
                m = fit_learner(comp_kind, train.subset(tr), params)
                e = train.y[te] - _predict(m, train.subset(te))
                out.append(math.sqrt(math.fsum((e * e).tolist()) / e.shape[0]))
            except ForestAGBError as exc:
                log.warning("grid cell %s failed: %s", combo, exc)
                out.append(math.nan)
        return out

    def run(axes):
        names = list(axes)
        combos = [dict(zip(names, vals)) for vals in itertools.product(*(axes[k] for k in names))]
        combos = [c for c in combos if _combo_key(c) not in scores]
        results = _pmap(evaluate, combos, n_jobs)
        for c, r in zip(combos, results):
            key = _combo_key(c)
            for k, v in enumerate(r):
                rows.append({"comp_kind": comp_kind, "param_json": key, "fold": k, "rmse": v})
            scores[key] = math.nan if any(math.isnan(v) for v in r) else math.fsum(r) / len(r)
            order.append(c)

    def incumbent():
        best, best_s = None, math.inf
        for c in order:
            s = scores[_combo_key(c)]
            if s < best_s:
                best, best_s = c, s
        return best

    axes = {k: list(v) for k, v in grid.axes.items()}
    spacing = {k: _spacing(v) if all(_is_numeric(x) for x in v) else None for k, v in axes.items()}
    run(axes)
    for _ in range(grid.rounds):
        inc = incumbent()
        if inc is None:
            break
        axes = {}
        for k, v in inc.items():
            if spacing[k] is None:
                axes[k] = [v]
            else:
                axes[k] = _refined_axis(v, spacing[k])
                spacing[k] = spacing[k] / 2.0
        run(axes)
    inc = incumbent()
    if inc is None:
        raise ConfigError(f"every {comp_kind} grid cell failed")
    return ptype(**{**grid.base, **inc}), rows


def write_cv_table(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, CV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "rmse": repr(float(r["rmse"]))})
