"""Single-band rasters, polygons and polygon/cell coverage.

Grids are stored row-major with row 0 at the north edge. On disk a grid is
a ``.bin`` file of little-endian float32 values plus a ``.json`` header::

    {"nrows": 200, "ncols": 200, "xll": 0.0, "yll": 0.0, "cellsize": 30.0,
     "nodata": -9999.0, "crs_tag": "EPSG:5070", "kind": "real"}

``kind`` is ``"class"`` for landcover grids, whose codes are written as
float32 too and cast back to integers on load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import AllNodata, DataError, EmptyIntersection, GridMismatch

NODATA = -9999.0

# LCMAP primary classes
DEVELOPED, CROPLAND, GRASS_SHRUB, TREE_COVER, WATER, WETLAND, BARREN = 1, 2, 3, 4, 5, 6, 7
CLASS_NODATA = 0
CLASS_CODES = (0, 1, 2, 3, 4, 5, 6, 7)
CLASS_NAMES = {
    1: "Developed",
    2: "Cropland",
    3: "Grass/Shrub",
    4: "Tree cover",
    5: "Water",
    6: "Wetland",
    7: "Barren",
}
VEGETATED = (GRASS_SHRUB, TREE_COVER, WETLAND)
NONVEGETATED = (CLASS_NODATA, DEVELOPED, CROPLAND, WATER, BARREN)


@dataclass(frozen=True)
class GeoRef:
    nrows: int
    ncols: int
    xll: float
    yll: float
    cellsize: float
    crs_tag: str = ""

    def __post_init__(self):
        if self.nrows <= 0 or self.ncols <= 0:
            raise ValueError("grid dimensions must be positive")
        if not self.cellsize > 0:
            raise ValueError("cellsize must be positive")

    @property
    def ytop(self) -> float:
        return self.yll + self.nrows * self.cellsize

    @property
    def xmax(self) -> float:
        return self.xll + self.ncols * self.cellsize

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    def cell_center(self, row, col):
        cs = self.cellsize
        x = self.xll + (np.asarray(col) + 0.5) * cs
        y = self.yll + (self.nrows - np.asarray(row) - 0.5) * cs
        return x, y

    def cell_of(self, x, y):
        """(row, col) of the cell containing each point; -1 when outside."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        col = np.floor((x - self.xll) / self.cellsize).astype(np.int64)
        row = np.floor((self.ytop - y) / self.cellsize).astype(np.int64)
        bad = (col < 0) | (col >= self.ncols) | (row < 0) | (row >= self.nrows)
        return np.where(bad, -1, row), np.where(bad, -1, col)

    def cell_area(self) -> float:
        return self.cellsize * self.cellsize


@dataclass(frozen=True, eq=False)
class Grid:
    """Real-valued raster; ``values`` has shape (nrows, ncols)."""

    ref: GeoRef
    values: np.ndarray
    nodata: float = NODATA

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.ref.shape:
            raise ValueError(f"values shape {v.shape} does not match {self.ref.shape}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    kind = "real"

    @classmethod
    def full(cls, ref: GeoRef, value: float, nodata: float = NODATA) -> "Grid":
        return cls(ref, np.full(ref.shape, value, dtype=np.float64), nodata)

    @property
    def valid(self) -> np.ndarray:
        return self.values != self.nodata

    def with_values(self, values) -> "Grid":
        return Grid(self.ref, values, self.nodata)

    def quantized(self) -> "Grid":
        """Round-trip values through float32, as they would be after writing."""
        return self.with_values(self.values.astype(np.float32).astype(np.float64))

    def equals(self, other: "Grid") -> bool:
        return (
            aligned(self, other)
            and self.nodata == other.nodata
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class ClassGrid:
    """Landcover raster of small integer codes; 0 is nodata."""

    ref: GeoRef
    values: np.ndarray
    codes: tuple = CLASS_CODES

    kind = "class"
    nodata = CLASS_NODATA

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != self.ref.shape:
            raise ValueError(f"values shape {v.shape} does not match {self.ref.shape}")
        v = v.astype(np.int16)
        bad = ~np.isin(v, np.asarray(self.codes))
        if bad.any():
            raise ValueError(f"class codes outside {self.codes}: {np.unique(v[bad]).tolist()}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class Polygon:
    """Outer ring followed by optional holes; rings are closed (first == last)."""

    rings: tuple

    def __post_init__(self):
        rings = tuple(np.asarray(r, dtype=np.float64) for r in self.rings)
        if not rings:
            raise ValueError("polygon needs at least one ring")
        for r in rings:
            if r.ndim != 2 or r.shape[1] != 2 or r.shape[0] < 4:
                raise ValueError("each ring needs >= 4 (x, y) vertices")
            if not np.array_equal(r[0], r[-1]):
                raise ValueError("rings must be closed (first vertex == last)")
        object.__setattr__(self, "rings", rings)
        if not self.area > 0:
            raise ValueError("outer ring has zero area")

    @classmethod
    def from_coords(cls, outer, holes=()) -> "Polygon":
        rings = []
        for r in (outer, *holes):
            r = [tuple(map(float, p)) for p in r]
            if r[0] != r[-1]:
                r.append(r[0])
            rings.append(r)
        return cls(tuple(rings))

    @classmethod
    def rectangle(cls, x0, y0, x1, y1) -> "Polygon":
        return cls.from_coords([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    @classmethod
    def regular(cls, cx, cy, radius, n=64, phase=0.0) -> "Polygon":
        ang = phase + 2.0 * math.pi * np.arange(n) / n
        pts = np.column_stack((cx + radius * np.cos(ang), cy + radius * np.sin(ang)))
        return cls.from_coords(pts.tolist())

    @property
    def area(self) -> float:
        outer = abs(ring_area(self.rings[0]))
        return outer - sum(abs(ring_area(h)) for h in self.rings[1:])

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        r = self.rings[0]
        return float(r[:, 0].min()), float(r[:, 1].min()), float(r[:, 0].max()), float(r[:, 1].max())

    def to_wkt(self) -> str:
        parts = []
        for r in self.rings:
            parts.append("(" + ", ".join(f"{float(x)!r} {float(y)!r}" for x, y in r) + ")")
        return "POLYGON (" + ", ".join(parts) + ")"


def ring_area(ring: np.ndarray) -> float:
    x = ring[:, 0] - ring[0, 0]
    y = ring[:, 1] - ring[0, 1]
    return 0.5 * float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))


def parse_wkt_polygon(text: str) -> Polygon:
    """Parse ``POLYGON ((x y, ...), (...))``."""
    t = text.strip()
    if not t.upper().startswith("POLYGON"):
        raise DataError(f"not a WKT POLYGON: {text[:40]!r}")
    body = t[len("POLYGON"):].strip()
    if not (body.startswith("(") and body.endswith(")")):
        raise DataError("malformed WKT POLYGON")
    body = body[1:-1]
    rings = []
    depth = 0
    cur = []
    for ch in body:
        if ch == "(":
            depth += 1
            cur = []
        elif ch == ")":
            depth -= 1
            pts = []
            for pair in "".join(cur).split(","):
                xs = pair.split()
                try:
                    pts.append((float(xs[0]), float(xs[1])))
                except (IndexError, ValueError):
                    raise DataError(f"malformed WKT coordinate {pair.strip()!r}") from None
            rings.append(pts)
        elif depth == 1:
            cur.append(ch)
    return Polygon.from_coords(rings[0], rings[1:])


@dataclass(frozen=True)
class CoverageWeights:
    """Cells touched by a polygon and the fraction of each cell's area covered."""

    rows: np.ndarray
    cols: np.ndarray
    fractions: np.ndarray
    ref: GeoRef | None = field(default=None, compare=False)

    def __len__(self):
        return int(self.rows.shape[0])

    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(r), int(c), float(f)) for r, c, f in zip(self.rows, self.cols, self.fractions)]

    def covered_area(self, cellsize: float) -> float:
        return float(math.fsum(self.fractions.tolist())) * cellsize * cellsize

    @classmethod
    def merge(cls, parts: Sequence["CoverageWeights"], ref: GeoRef) -> "CoverageWeights":
        """Sum fractions of several polygons cell by cell (row-major order)."""
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), ref)
        lin = np.concatenate([p.rows * ref.ncols + p.cols for p in parts])
        frac = np.concatenate([p.fractions for p in parts])
        uniq, inv = np.unique(lin, return_inverse=True)
        acc = np.zeros(uniq.shape[0])
        np.add.at(acc, inv, frac)
        return cls(uniq // ref.ncols, uniq % ref.ncols, acc, ref)


def aligned(a, b) -> bool:
    return a.ref == b.ref


def require_aligned(*grids) -> None:
    first = grids[0]
    for g in grids[1:]:
        if not aligned(first, g):
            raise GridMismatch(f"grids not aligned: {first.ref} vs {g.ref}")


def coverage_weights(poly: Polygon, g) -> CoverageWeights:
    """Exact fraction of each grid cell covered by ``poly``.

    Each ring is clipped against every cell of its bounding box
    (Sutherland-Hodgman); holes subtract.
    """
    ref = g.ref if hasattr(g, "ref") else g
    cs = ref.cellsize
    x0, y0, x1, y1 = poly.bounds
    c0 = max(int(math.floor((x0 - ref.xll) / cs)), 0)
    c1 = min(int(math.ceil((x1 - ref.xll) / cs)), ref.ncols)
    r0 = max(int(math.floor((ref.ytop - y1) / cs)), 0)
    r1 = min(int(math.ceil((ref.ytop - y0) / cs)), ref.nrows)
    if c1 <= c0 or r1 <= r0:
        raise EmptyIntersection("polygon lies outside the grid extent")
    kern = _kernels.backend
    area = None
    for k, ring in enumerate(poly.rings):
        u = (ring[:-1, 0] - ref.xll) / cs
        v = (ref.ytop - ring[:-1, 1]) / cs
        a = kern.clip_ring_cells(u, v, r0, r1, c0, c1)
        area = a if k == 0 else area - a
    frac = np.minimum(area, 1.0)
    rr, cc = np.nonzero(frac > 1e-12)
    if rr.size == 0:
        raise EmptyIntersection("polygon does not overlap any grid cell")
    return CoverageWeights(
        (rr + r0).astype(np.int64), (cc + c0).astype(np.int64), frac[rr, cc].copy(), ref
    )


def weighted_extract(w: CoverageWeights, g: Grid) -> float:
    """Coverage-weighted mean over non-nodata cells; ``g.nodata`` if none."""
    vals = g.values[w.rows, w.cols]
    ok = vals != g.nodata
    if not ok.any():
        return g.nodata
    f = w.fractions[ok]
    return math.fsum((f * vals[ok]).tolist()) / math.fsum(f.tolist())


def majority_class(w: CoverageWeights, cg, nodata: int = CLASS_NODATA) -> int:
    """Class with the largest summed coverage; ties go to the smallest code."""
    vals = np.asarray(cg.values)[w.rows, w.cols]
    ok = vals != nodata
    if not ok.any():
        raise AllNodata("every covered cell is nodata")
    totals: dict[int, list[float]] = {}
    for code, f in zip(vals[ok].tolist(), w.fractions[ok].tolist()):
        totals.setdefault(int(code), []).append(f)
    best_code, best = None, -1.0
    for code in sorted(totals):
        s = math.fsum(totals[code])
        if s > best:
            best_code, best = code, s
    return best_code


def mask_nonvegetated(agb: Grid, cg: ClassGrid) -> Grid:
    require_aligned(agb, cg)
    drop = np.isin(cg.values, NONVEGETATED)
    return agb.with_values(np.where(drop, agb.nodata, agb.values))


def subtract(a: Grid, b: Grid) -> Grid:
    require_aligned(a, b)
    ok = a.valid & b.valid
    return a.with_values(np.where(ok, a.values - b.values, a.nodata))


def class_summary(agb: Grid, cg: ClassGrid) -> dict[int, tuple[float, int]]:
    """Mean and count of valid AGB cells per class code present."""
    require_aligned(agb, cg)
    ok = agb.valid
    out = {}
    for code in np.unique(cg.values[ok]).tolist():
        sel = ok & (cg.values == code)
        vals = agb.values[sel]
        out[int(code)] = (math.fsum(vals.tolist()) / vals.size, int(vals.size))
    return out


# ---------------------------------------------------------------------------
# IO


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".bin", ".json"):
        p = p.with_suffix("")
    return p.with_suffix(".bin"), p.with_suffix(".json")


def write_grid(path, g) -> tuple[Path, Path]:
    binp, hdrp = _paths(path)
    binp.parent.mkdir(parents=True, exist_ok=True)
    ref = g.ref
    header = {
        "nrows": ref.nrows,
        "ncols": ref.ncols,
        "xll": ref.xll,
        "yll": ref.yll,
        "cellsize": ref.cellsize,
        "nodata": float(g.nodata),
        "crs_tag": ref.crs_tag,
        "kind": g.kind,
    }
    np.asarray(g.values, dtype="<f4").tofile(binp)
    hdrp.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return binp, hdrp


def read_grid(path):
    binp, hdrp = _paths(path)
    try:
        header = json.loads(hdrp.read_text())
        raw = np.fromfile(binp, dtype="<f4")
    except OSError as exc:
        raise DataError(f"cannot read grid {binp}: {exc}") from exc
    ref = GeoRef(
        int(header["nrows"]),
        int(header["ncols"]),
        float(header["xll"]),
        float(header["yll"]),
        float(header["cellsize"]),
        str(header.get("crs_tag", "")),
    )
    if raw.size != ref.nrows * ref.ncols:
        raise DataError(f"{binp}: expected {ref.nrows * ref.ncols} values, found {raw.size}")
    vals = raw.reshape(ref.shape)
    if header.get("kind", "real") == "class":
        return ClassGrid(ref, vals.astype(np.int16))
    return Grid(ref, vals.astype(np.float64), float(header.get("nodata", NODATA)))

