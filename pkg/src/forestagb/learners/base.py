"""Fitted-model base class, prediction entry point and JSON serialization.

Serialized models are plain JSON documents::

    {"format": "forestagb-model", "version": 1, "kind": "rf",
     "params": {...}, "feature_names": [...], "schema_hash": "...",
     "meta": {"n": 812, "seed": 7}, "structure": {...}}

``structure`` is kind-specific and holds only lists of numbers, so any
language can reload a model.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from ..errors import DataError, SchemaMismatch
from ..reference import TrainingTable, schema_hash

FORMAT = "forestagb-model"
VERSION = 1

_REGISTRY: dict[str, type] = {}


def register(kind: str):
    def deco(cls):
        cls.kind = kind
        _REGISTRY[kind] = cls
        return cls

    return deco


class FittedModel:
    """Immutable result of a fit. Subclasses implement ``predict_array``."""

    kind = "base"

    def __init__(self, params, feature_names, meta=None):
        self.params = params
        self.feature_names = list(feature_names)
        self.meta = dict(meta or {})

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.feature_names)

    def predict_array(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, rows) -> np.ndarray:
        return predict(self, rows)

    # serialization -----------------------------------------------------------

    def structure(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_structure(cls, params, feature_names, meta, structure, base_dir=None):
        raise NotImplementedError

    def params_json(self) -> dict:
        if dataclasses.is_dataclass(self.params):
            return dataclasses.asdict(self.params)
        return dict(self.params or {})

    def to_json(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "kind": self.kind,
            "params": self.params_json(),
            "feature_names": self.feature_names,
            "schema_hash": self.schema_hash,
            "meta": self.meta,
            "structure": self.structure(),
        }


def predict(model, rows) -> np.ndarray:
    """Predict for a TrainingTable (schema-checked) or a raw 2-D array."""
    if isinstance(rows, TrainingTable):
        if rows.schema_hash != model.schema_hash:
            raise SchemaMismatch(
                f"table schema {rows.schema_hash} does not match model schema {model.schema_hash}"
            )
        X = rows.X
    else:
        X = np.asarray(rows, dtype=np.float64)
        if X.size == 0:
            return np.zeros(0)
        if X.ndim != 2 or X.shape[1] != len(model.feature_names):
            raise SchemaMismatch(
                f"expected {len(model.feature_names)} feature columns, got shape {X.shape}"
            )
    if X.shape[0] == 0:
        return np.zeros(0)
    return model.predict_array(np.ascontiguousarray(X))


def model_from_json(doc: dict, base_dir: Path | None = None):
    if doc.get("format") != FORMAT:
        raise DataError("not a forestagb model document")
    if doc.get("version") != VERSION:
        raise DataError(f"unsupported model version {doc.get('version')}")
    kind = doc["kind"]
    if kind not in _REGISTRY:
        # stacked/averaged ensembles register on import
        from .. import stacking  # noqa: F401
    try:
        cls = _REGISTRY[kind]
    except KeyError:
        raise DataError(f"unknown model kind {kind!r}") from None
    model = cls.from_structure(doc["params"], doc["feature_names"], doc.get("meta", {}),
                               doc["structure"], base_dir=base_dir)
    if doc.get("schema_hash") and doc["schema_hash"] != model.schema_hash:
        raise SchemaMismatch("stored schema hash does not match feature names")
    return model


def save_model(model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if hasattr(model, "save"):
        return model.save(path)
    path.write_text(json.dumps(model.to_json()) + "\n")
    return path


def load_model(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    return model_from_json(doc, base_dir=path.parent)


def params_from_json(cls, d: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    return cls(**{k: v for k, v in d.items() if k in names})
