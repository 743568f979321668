"""Reference data: FIA-style plots, LiDAR pixel samples, predictor schemas and
assembled training tables."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import AllNodata, ConfigError, DataError, MissingYearStack
from .grid import (
    ClassGrid,
    CoverageWeights,
    Grid,
    Polygon,
    coverage_weights,
    majority_class,
    weighted_extract,
)

log = logging.getLogger(__name__)

SUBPLOT_RADIUS = 7.32  # m (24 ft)
SUBPLOT_OFFSET = 36.6  # m (120 ft)
SUBPLOT_AZIMUTHS = (360.0, 120.0, 240.0)
CIRCLE_VERTICES = 64

PLOT_COLUMNS = ["plot_id", "year", "x", "y", "agb_mg_ha", "fully_forested", "true_zero", "panel"]
LIDAR_COLUMNS = ["sample_id", "year", "x", "y", "agb_mg_ha"]


@dataclass(frozen=True)
class PlotRecord:
    plot_id: str
    year: int
    x: float
    y: float
    agb: float
    fully_forested: bool = True
    true_zero: bool = False
    panel: int = 1

    def __post_init__(self):
        if not self.agb >= 0:
            raise ValueError(f"plot {self.plot_id}: AGB must be >= 0")
        if self.true_zero and self.agb != 0:
            raise ValueError(f"plot {self.plot_id}: true-zero plot with nonzero AGB")
        if self.panel not in (1, 2, 3, 4, 5):
            raise ValueError(f"plot {self.plot_id}: panel must be in 1..5")

    @property
    def record_id(self) -> str:
        return self.plot_id


@dataclass(frozen=True)
class PixelSample:
    sample_id: str
    year: int
    x: float
    y: float
    agb: float

    @property
    def record_id(self) -> str:
        return self.sample_id


@dataclass(frozen=True)
class PlotFootprint:
    plot_id: str
    centers: tuple  # four (x, y) subplot centers, centroid subplot first
    radius: float = SUBPLOT_RADIUS

    def polygons(self, n: int = CIRCLE_VERTICES) -> list[Polygon]:
        return [Polygon.regular(cx, cy, self.radius, n) for cx, cy in self.centers]

    def weights(self, g) -> CoverageWeights:
        """Joint coverage of all four subplots (fractions summed per cell)."""
        ref = g.ref if hasattr(g, "ref") else g
        parts = []
        for poly in self.polygons():
            try:
                parts.append(coverage_weights(poly, ref))
            except DataError:
                continue
        return CoverageWeights.merge(parts, ref)


def build_footprint(p: PlotRecord) -> PlotFootprint:
    """Four subplots: one at the centroid, three 36.6 m out at 360/120/240 deg."""
    centers = [(float(p.x), float(p.y))]
    for az in SUBPLOT_AZIMUTHS:
        a = math.radians(az)
        centers.append((p.x + SUBPLOT_OFFSET * math.sin(a), p.y + SUBPLOT_OFFSET * math.cos(a)))
    return PlotFootprint(p.plot_id, tuple(centers))


# ---------------------------------------------------------------------------
# predictor schema


@dataclass(frozen=True)
class Predictor:
    name: str
    kind: str = "continuous"
    levels: tuple = ()
    group: str = ""

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical"):
            raise ConfigError(f"predictor {self.name}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and len(self.levels) < 2:
            raise ConfigError(f"categorical predictor {self.name} needs >= 2 levels")

    @property
    def columns(self) -> list[str]:
        if self.kind == "continuous":
            return [self.name]
        return [f"{self.name}={lv}" for lv in self.levels]


@dataclass(frozen=True)
class PredictorSchema:
    predictors: tuple

    def __post_init__(self):
        names = [p.name for p in self.predictors]
        if len(set(names)) != len(names):
            raise ConfigError("predictor names must be unique")

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.predictors]

    @property
    def feature_names(self) -> list[str]:
        return [c for p in self.predictors for c in p.columns]

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.feature_names)

    def to_json(self) -> dict:
        out = []
        for p in self.predictors:
            d = {"name": p.name, "kind": p.kind}
            if p.levels:
                d["levels"] = list(p.levels)
            if p.group:
                d["group"] = p.group
            out.append(d)
        return {"predictors": out}

    @classmethod
    def from_json(cls, doc: dict) -> "PredictorSchema":
        preds = []
        for d in doc["predictors"]:
            preds.append(
                Predictor(d["name"], d.get("kind", "continuous"), tuple(d.get("levels", ())),
                          d.get("group", ""))
            )
        return cls(tuple(preds))

    @classmethod
    def load(cls, path) -> "PredictorSchema":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


def schema_hash(feature_names: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(feature_names).encode()).hexdigest()[:16]


def reference_schema() -> PredictorSchema:
    """The full 29-layer predictor set, shipped as package data."""
    text = resources.files("forestagb").joinpath("data/predictors_full.json").read_text()
    return PredictorSchema.from_json(json.loads(text))


def expand_categorical(codes: np.ndarray, levels: Sequence) -> np.ndarray:
    """One 0/1 column per level."""
    codes = np.asarray(codes)
    return np.stack([(codes == lv).astype(np.float64) for lv in levels], axis=-1)


# ---------------------------------------------------------------------------
# training tables


@dataclass(frozen=True)
class RowDropped:
    record_id: str
    reason: str


@dataclass
class TrainingTable:
    y: np.ndarray
    X: np.ndarray
    feature_names: list
    source: np.ndarray
    year: np.ndarray
    x: np.ndarray
    ycoord: np.ndarray
    ids: np.ndarray
    dropped: list = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.X = np.asarray(self.X, dtype=np.float64).reshape(self.y.shape[0], len(self.feature_names))
        if not np.isfinite(self.X).all():
            raise DataError("training table has missing feature values")

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def n(self) -> int:
        return len(self)

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.feature_names)

    def subset(self, idx) -> "TrainingTable":
        idx = np.asarray(idx, dtype=np.int64)
        return TrainingTable(self.y[idx], self.X[idx], list(self.feature_names), self.source[idx],
                             self.year[idx], self.x[idx], self.ycoord[idx], self.ids[idx])

    def with_y(self, y) -> "TrainingTable":
        return TrainingTable(np.asarray(y, dtype=np.float64).copy(), self.X, list(self.feature_names),
                             self.source, self.year, self.x, self.ycoord, self.ids)

    @classmethod
    def from_arrays(cls, X, y, feature_names=None, source="synthetic") -> "TrainingTable":
        X = np.asarray(X, dtype=np.float64)
        n = X.shape[0]
        names = feature_names or [f"x{i}" for i in range(X.shape[1])]
        return cls(np.asarray(y, dtype=np.float64), X, list(names), np.full(n, source, dtype=object),
                   np.zeros(n, dtype=np.int64), np.zeros(n), np.zeros(n),
                   np.array([str(i) for i in range(n)], dtype=object))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_id", "source", "year", "x", "y", "agb_mg_ha", *self.feature_names])
            for i in range(self.n):
                w.writerow([self.ids[i], self.source[i], int(self.year[i]), repr(float(self.x[i])),
                            repr(float(self.ycoord[i])), repr(float(self.y[i])),
                            *(repr(float(v)) for v in self.X[i])])

    @classmethod
    def read_csv(cls, path) -> "TrainingTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        names = header[6:]
        n = len(body)
        X = np.array([[float(v) for v in r[6:]] for r in body], dtype=np.float64).reshape(n, len(names))
        return cls(
            np.array([float(r[5]) for r in body]),
            X,
            names,
            np.array([r[1] for r in body], dtype=object),
            np.array([int(r[2]) for r in body], dtype=np.int64),
            np.array([float(r[3]) for r in body]),
            np.array([float(r[4]) for r in body]),
            np.array([r[0] for r in body], dtype=object),
        )


Stack = Mapping[str, "Grid | ClassGrid"]


def _check_stack(stack: Stack, schema: PredictorSchema, year) -> None:
    missing = [n for n in schema.names if n not in stack]
    if missing:
        raise MissingYearStack(f"{year} (missing {', '.join(missing)})")
    refs = {stack[n].ref for n in schema.names}
    if len(refs) != 1:
        raise DataError(f"predictor grids for {year} are not aligned")


def _plot_features(rec: PlotRecord, stack: Stack, schema: PredictorSchema):
    fp = build_footprint(rec)
    any_grid = stack[schema.names[0]]
    w = fp.weights(any_grid)
    if len(w) == 0:
        return None, "footprint outside predictor extent"
    feats = []
    for p in schema.predictors:
        g = stack[p.name]
        vals = np.asarray(g.values)[w.rows, w.cols]
        if (vals == g.nodata).any():
            return None, f"nodata in {p.name} under the footprint"
        if p.kind == "continuous":
            feats.append(weighted_extract(w, g))
        else:
            try:
                code = majority_class(w, g, nodata=g.nodata)
            except AllNodata:
                return None, f"nodata in {p.name} under the footprint"
            if code not in p.levels:
                return None, f"{p.name} class {code} not among declared levels"
            feats.extend(float(code == lv) for lv in p.levels)
    return feats, None


def _pixel_features(rec: PixelSample, stack: Stack, schema: PredictorSchema):
    ref = stack[schema.names[0]].ref
    r, c = ref.cell_of(rec.x, rec.y)
    r, c = int(r), int(c)
    if r < 0:
        return None, "point outside predictor extent"
    feats = []
    for p in schema.predictors:
        g = stack[p.name]
        v = np.asarray(g.values)[r, c]
        if v == g.nodata:
            return None, f"nodata in {p.name}"
        if p.kind == "continuous":
            feats.append(float(v))
        else:
            code = int(v)
            if code not in p.levels:
                return None, f"{p.name} class {code} not among declared levels"
            feats.extend(float(code == lv) for lv in p.levels)
    return feats, None


def assemble_table(records: Sequence, stacks: Mapping[int, Stack], schema: PredictorSchema,
                   n_jobs: int = 1) -> TrainingTable:
    """Build a training table from plots (footprint-weighted) or pixel samples.

    Records whose year has no stack raise MissingYearStack. Records that
    cannot be extracted (nodata, outside extent, unknown class) are dropped
    and listed in ``table.dropped``.
    """
    for yr in sorted({int(r.year) for r in records}):
        if yr not in stacks:
            raise MissingYearStack(yr)
        _check_stack(stacks[yr], schema, yr)

    def one(rec):
        stack = stacks[int(rec.year)]
        if isinstance(rec, PlotRecord):
            return _plot_features(rec, stack, schema)
        return _pixel_features(rec, stack, schema)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            results = list(ex.map(one, records))
    else:
        results = [one(r) for r in records]

    keep, rows, dropped = [], [], []
    for rec, (feats, reason) in zip(records, results):
        if feats is None:
            dropped.append(RowDropped(rec.record_id, reason))
            log.warning("dropped %s: %s", rec.record_id, reason)
            continue
        keep.append(rec)
        rows.append(feats)
    names = schema.feature_names
    n = len(keep)
    table = TrainingTable(
        np.array([r.agb for r in keep], dtype=np.float64),
        np.array(rows, dtype=np.float64).reshape(n, len(names)),
        names,
        np.array(["plot" if isinstance(r, PlotRecord) else "lidar_pixel" for r in keep], dtype=object),
        np.array([int(r.year) for r in keep], dtype=np.int64),
        np.array([float(r.x) for r in keep]),
        np.array([float(r.y) for r in keep]),
        np.array([r.record_id for r in keep], dtype=object),
    )
    table.dropped = dropped
    return table


# ---------------------------------------------------------------------------
# CSV IO

_TRUE = {"true", "1", "yes", "t"}
_FALSE = {"false", "0", "no", "f"}


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise DataError(f"not a boolean: {text!r}")


def _num(v: float) -> str:
    return repr(float(v))


def write_plots(path, plots: Sequence[PlotRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for p in plots:
            w.writerow([p.plot_id, p.year, _num(p.x), _num(p.y), _num(p.agb),
                        str(p.fully_forested).lower(), str(p.true_zero).lower(), p.panel])


def read_plots(path) -> list[PlotRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(PLOT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing plot columns {sorted(missing)}")
        try:
            return [
                PlotRecord(r["plot_id"], int(r["year"]), float(r["x"]), float(r["y"]),
                           float(r["agb_mg_ha"]), _bool(r["fully_forested"]), _bool(r["true_zero"]),
                           int(r["panel"]))
                for r in reader
            ]
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc


def write_lidar_samples(path, samples: Sequence[PixelSample]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LIDAR_COLUMNS)
        for s in samples:
            w.writerow([s.sample_id, s.year, _num(s.x), _num(s.y), _num(s.agb)])


def read_lidar_samples(path, default_year: int | None = None) -> list[PixelSample]:
    """Read a LiDAR-sample CSV; a sampler output without ``year`` needs ``default_year``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or ())
        if "year" not in fields and default_year is None:
            raise DataError(f"{path}: no year column and no default year given")
        out = []
        for r in reader:
            yr = int(r["year"]) if "year" in fields else int(default_year)
            out.append(PixelSample(r["sample_id"], yr, float(r["x"]), float(r["y"]), float(r["agb_mg_ha"])))
        return out
