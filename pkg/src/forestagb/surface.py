"""Applying fitted models to annual predictor stacks, and summaries of the
resulting AGB surfaces.

A predictor stack for one year is a directory of grids named after the
schema's predictors (``<stack_dir>/<year>/<NAME>.bin``). Continuous layers
are real grids; categorical layers are class grids.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError, GridMismatch, MissingYearStack, MissingYearSurface, SchemaMismatch
from .grid import (
    NODATA,
    VEGETATED,
    ClassGrid,
    Grid,
    Polygon,
    class_summary,
    coverage_weights,
    parse_wkt_polygon,
    read_grid,
    subtract,
    weighted_extract,
    write_grid,
)
from .reference import PredictorSchema

TILE = 256  # tile edge in cells; one tile holds TILE*TILE feature rows

SERIES_COLUMNS = ["year", "class", "mean_agb", "cell_count"]
TRAJECTORY_COLUMNS = ["polygon_id", "year", "mean_agb"]


def read_stack(stack_dir, year: int, schema: PredictorSchema) -> dict:
    d = Path(stack_dir) / str(year)
    if not d.is_dir():
        raise MissingYearStack(year)
    return {name: read_grid(d / name) for name in schema.names}


def read_stacks(stack_dir, schema: PredictorSchema, years=None) -> dict:
    root = Path(stack_dir)
    if years is None:
        years = sorted(int(p.name) for p in root.iterdir() if p.is_dir() and p.name.isdigit())
    return {int(y): read_stack(root, int(y), schema) for y in years}


def write_stack(stack_dir, year: int, stack: Mapping) -> None:
    d = Path(stack_dir) / str(year)
    for name, g in stack.items():
        write_grid(d / name, g)


def _stack_ref(stack, schema):
    missing = [n for n in schema.names if n not in stack]
    if missing:
        raise SchemaMismatch(f"stack lacks predictors: {', '.join(missing)}")
    ref = stack[schema.names[0]].ref
    for n in schema.names:
        if stack[n].ref != ref:
            raise GridMismatch(f"predictor {n} is not aligned with {schema.names[0]}")
    return ref


def stack_features(stack, schema: PredictorSchema, rows: slice = slice(None), cols: slice = slice(None)):
    """Feature matrix for a window of the stack, in row-major cell order,
    plus a boolean mask of the cells that have complete predictors."""
    blocks = []
    ok = None
    for p in schema.predictors:
        g = stack[p.name]
        v = np.asarray(g.values)[rows, cols]
        good = v != g.nodata
        if p.kind == "continuous":
            blocks.append(v.astype(np.float64).reshape(-1, 1))
        else:
            good &= np.isin(v, np.asarray(p.levels))
            for lv in p.levels:
                blocks.append((v == lv).astype(np.float64).reshape(-1, 1))
        ok = good if ok is None else ok & good
    return np.hstack(blocks), ok.reshape(-1)


def predict_surface(model, stack, schema: PredictorSchema, tile: int = TILE) -> Grid:
    """Per-cell predictions. Cells with any nodata predictor (or a class code
    outside a categorical predictor's levels) are nodata."""
    if list(model.feature_names) != schema.feature_names:
        raise SchemaMismatch("model features do not match the predictor schema")
    ref = _stack_ref(stack, schema)
    out = np.full(ref.shape, NODATA)
    for r0 in range(0, ref.nrows, tile):
        for c0 in range(0, ref.ncols, tile):
            rs, cs = slice(r0, min(r0 + tile, ref.nrows)), slice(c0, min(c0 + tile, ref.ncols))
            X, ok = stack_features(stack, schema, rs, cs)
            block = np.full(ok.shape[0], NODATA)
            if ok.any():
                block[ok] = model.predict(np.ascontiguousarray(X[ok]))
            out[rs, cs] = block.reshape(rs.stop - rs.start, cs.stop - cs.start)
    return Grid(ref, out, NODATA)


def stack_table(stack, schema: PredictorSchema):
    """All complete cells of a stack as (feature matrix, flat cell indices)."""
    _stack_ref(stack, schema)
    X, ok = stack_features(stack, schema)
    return X[ok], np.flatnonzero(ok)


def annual_series(surfaces: Mapping[int, Grid], class_grids: Mapping[int, ClassGrid],
                  classes=VEGETATED) -> list[dict]:
    rows = []
    for year in sorted(surfaces):
        if year not in class_grids:
            raise GridMismatch(f"no class grid for {year}")
        summ = class_summary(surfaces[year], class_grids[year])
        for code in classes:
            if code in summ:
                mean, count = summ[code]
                rows.append({"year": year, "class": code, "mean_agb": mean, "cell_count": count})
    return rows


def stock_change(a_year: int, b_year: int, surfaces: Mapping[int, Grid]) -> Grid:
    """Later minus earlier: ``surfaces[b_year] - surfaces[a_year]``."""
    for y in (a_year, b_year):
        if y not in surfaces:
            raise MissingYearSurface(y)
    return subtract(surfaces[b_year], surfaces[a_year])


def polygon_trajectory(poly: Polygon, surfaces: Mapping[int, Grid]) -> list[dict]:
    years = sorted(surfaces)
    if not years:
        return []
    w = coverage_weights(poly, surfaces[years[0]])
    rows = []
    for y in years:
        g = surfaces[y]
        if g.ref != surfaces[years[0]].ref:
            raise GridMismatch(f"surface {y} is not aligned with {years[0]}")
        v = weighted_extract(w, g)
        rows.append({"year": y, "mean_agb": math.nan if v == g.nodata else v})
    return rows


def read_polygons(path) -> list[tuple[str, Polygon]]:
    """CSV with columns polygon_id, wkt."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            try:
                out.append((rec["polygon_id"], parse_wkt_polygon(rec["wkt"])))
            except KeyError as exc:
                raise DataError(f"{path}: missing column {exc}") from None
    return out


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in r.items()})


def read_surfaces(surface_dir, prefix: str = "agb_", years=None) -> dict:
    """Surfaces saved as ``<dir>/<prefix><year>.bin``."""
    root = Path(surface_dir)
    found = {}
    for p in sorted(root.glob(f"{prefix}*.json")):
        tail = p.stem[len(prefix):]
        if tail.isdigit():
            found[int(tail)] = p.with_suffix("")
    if years is not None:
        for y in years:
            if y not in found:
                raise MissingYearSurface(y)
        found = {y: found[y] for y in years}
    return {y: read_grid(p) for y, p in sorted(found.items())}
