"""Synthetic worlds for running and testing the pipeline without restricted data.

A world is a small raster landscape with a known ("truth") AGB surface per
year, annual predictor stacks derived from it, annual landcover grids, a
LiDAR-style AGB surface, field plots and small-area estimates. Everything is
a deterministic function of SynthWorldSpec, including the seed.

Truth AGB per year is a mixture of Gaussian bumps that grows linearly.
Disturbance events remove a fixed amount of biomass inside a disc in their
year (never below zero) and the affected cells then regrow toward the
undisturbed trajectory by a fixed amount per year.

On-disk layout::

    world.json                     spec and derived facts
    schema.json                    predictor schema
    stacks/<year>/<NAME>.bin/.json predictor grids
    lcmap/lcmap_<year>.bin/.json   landcover
    truth/agb_<year>.bin/.json     truth AGB
    lidar/lidar_agb_<year>.bin     LiDAR-style AGB (one year)
    plots.csv, lidar_samples.csv, small_area_hexes.csv, disturbances.csv
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .agreement import HexTessellation, SmallAreaHex, vegetated_fraction, write_small_area_hexes
from .errors import ConfigError, DataError
from .grid import (
    BARREN,
    CROPLAND,
    DEVELOPED,
    GRASS_SHRUB,
    NODATA,
    TREE_COVER,
    VEGETATED,
    WATER,
    WETLAND,
    ClassGrid,
    GeoRef,
    Grid,
    Polygon,
    coverage_weights,
    mask_nonvegetated,
    weighted_extract,
    write_grid,
)
from .reference import (
    PlotRecord,
    Predictor,
    PredictorSchema,
    build_footprint,
    write_lidar_samples,
    write_plots,
)
from .sampling import StratifiedSampleSpec, stratified_sample
from .surface import write_stack

log = logging.getLogger(__name__)

SMALL_AREA_HEX_HA = 64_000.0


def synth_schema() -> PredictorSchema:
    """The reduced predictor set used by synthetic worlds."""
    return PredictorSchema((
        Predictor("NBR", group="spectral"),
        Predictor("TCG", group="spectral"),
        Predictor("TCW", group="spectral"),
        Predictor("DELTA_NBR", group="change"),
        Predictor("MAG", group="change"),
        Predictor("ELEVATION", group="topography"),
        Predictor("PRECIP", group="climate"),
        Predictor("LCPRI", "categorical", (1, 2, 3, 4, 5, 6, 7), group="landcover"),
    ))


@dataclass(frozen=True)
class Disturbance:
    year: int
    magnitude: float  # Mg/ha removed in the event year
    row: float
    col: float
    radius: float  # cells

    def cells(self, shape) -> np.ndarray:
        rr, cc = np.mgrid[0:shape[0], 0:shape[1]]
        return (rr - self.row) ** 2 + (cc - self.col) ** 2 <= self.radius ** 2


@dataclass(frozen=True)
class SynthWorldSpec:
    nrows: int = 200
    ncols: int = 200
    cellsize: float = 500.0
    xll: float = 500_000.0
    yll: float = 4_000_000.0
    crs_tag: str = "EPSG:5070"
    first_year: int = 2014
    n_years: int = 6
    n_bumps: int = 40
    bump_amplitude: tuple = (40.0, 260.0)
    bump_sigma: tuple = (6.0, 25.0)  # cells
    agb_cap: float = 330.0
    growth_rate: float = 0.02  # fraction of year-0 AGB per year
    n_disturbances: int = 6
    disturbance_magnitude: tuple = (60.0, 150.0)
    disturbance_radius: tuple = (3.0, 8.0)  # cells
    recovery_per_year: float = 12.0
    predictor_noise_sd: float = 0.02
    tree_cover_threshold: float = 20.0  # AGB at or above which vegetated cells are tree cover
    wetland_threshold: float = 0.8  # wetness field quantile
    developed_threshold: float = 0.93
    cropland_threshold: float = 0.85
    water_threshold: float = 0.97
    barren_fraction: float = 0.005
    nodata_notch: tuple = (0.1, 0.2)  # (row fraction, col fraction) missing in the NE corner
    lidar_noise_sd: float = 15.0
    lidar_year_index: int = 2
    plot_noise_sd: float = 10.0
    n_plots: int = 300
    lidar_strata: int = 20
    lidar_per_stratum: int = 100
    small_area_ci_fraction: float = 0.15
    seed: int = 0
    disturbances: tuple = field(default=())  # explicit events override random ones

    def __post_init__(self):
        if self.nrows < 10 or self.ncols < 10:
            raise ConfigError("synthetic grid must be at least 10x10")
        if not (1990 <= self.first_year and self.first_year + self.n_years - 1 <= 2019):
            raise ConfigError("synthetic years must lie within 1990-2019")
        if self.n_years < 1:
            raise ConfigError("n_years must be >= 1")
        for name in ("predictor_noise_sd", "lidar_noise_sd", "plot_noise_sd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.lidar_year_index < self.n_years:
            raise ConfigError("lidar_year_index outside the year span")

    @property
    def years(self) -> list[int]:
        return [self.first_year + i for i in range(self.n_years)]

    @property
    def ref(self) -> GeoRef:
        return GeoRef(self.nrows, self.ncols, self.xll, self.yll, self.cellsize, self.crs_tag)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["disturbances"] = [dataclasses.asdict(e) if not isinstance(e, dict) else e for e in self.disturbances]
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "SynthWorldSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in doc.items():
            if k not in names:
                raise ConfigError(f"unknown synth field {k!r}")
            if k == "disturbances":
                v = tuple(Disturbance(**e) for e in v)
            elif isinstance(v, list):
                v = tuple(v)
            kw[k] = v
        return cls(**kw)


@dataclass
class World:
    spec: SynthWorldSpec
    schema: PredictorSchema
    truth: dict  # year -> Grid
    classes: dict  # year -> ClassGrid
    stacks: dict  # year -> {name: grid}
    lidar: Grid
    lidar_year: int
    plots: list
    lidar_samples: list
    small_area: list
    disturbances: list

    @property
    def years(self) -> list[int]:
        return self.spec.years


def _smooth_field(gen, shape, n_bumps, sigma_range, amp_range) -> np.ndarray:
    rr, cc = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    out = np.zeros(shape)
    rows = gen.uniform(0, shape[0], n_bumps)
    cols = gen.uniform(0, shape[1], n_bumps)
    sig = gen.uniform(*sigma_range, n_bumps)
    amp = gen.uniform(*amp_range, n_bumps)
    for k in range(n_bumps):
        out += amp[k] * np.exp(-((rr - rows[k]) ** 2 + (cc - cols[k]) ** 2) / (2.0 * sig[k] ** 2))
    return out


def _rank01(a: np.ndarray) -> np.ndarray:
    """Empirical quantile of each cell within the field."""
    order = np.argsort(a, axis=None, kind="stable")
    q = np.empty(a.size)
    q[order] = np.arange(a.size) / max(a.size - 1, 1)
    return q.reshape(a.shape)


def _static_classes(spec: SynthWorldSpec, gen) -> np.ndarray:
    """Landcover that does not depend on biomass; 0 marks vegetated cells."""
    shape = (spec.nrows, spec.ncols)
    dev = _rank01(_smooth_field(gen, shape, 6, (4.0, 10.0), (0.5, 1.0)))
    crop = _rank01(_smooth_field(gen, shape, 8, (8.0, 20.0), (0.5, 1.0)))
    water = _rank01(_smooth_field(gen, shape, 5, (3.0, 7.0), (0.5, 1.0)))
    out = np.zeros(shape, dtype=np.int16)
    out[crop >= spec.cropland_threshold] = CROPLAND
    out[dev >= spec.developed_threshold] = DEVELOPED
    out[water >= spec.water_threshold] = WATER
    barren = gen.random(shape) < spec.barren_fraction
    out[barren & (out == 0)] = BARREN
    return out


def _disturbances(spec: SynthWorldSpec, gen) -> list[Disturbance]:
    if spec.disturbances:
        return [e if isinstance(e, Disturbance) else Disturbance(**e) for e in spec.disturbances]
    if spec.n_years < 2:
        return []
    out = []
    for _ in range(spec.n_disturbances):
        out.append(Disturbance(
            int(gen.integers(spec.first_year + 1, spec.first_year + spec.n_years)),
            # multiples of 0.5 make the float32 drop exact
            round(float(gen.uniform(*spec.disturbance_magnitude)) * 2.0) / 2.0,
            float(gen.uniform(10, spec.nrows - 10)),
            float(gen.uniform(10, spec.ncols - 10)),
            float(gen.uniform(*spec.disturbance_radius)),
        ))
    return out


def truth_series(spec: SynthWorldSpec, base: np.ndarray, events, zero_mask: np.ndarray) -> list[np.ndarray]:
    """Annual truth AGB (float32-representable) for every year of the world.

    Each year is computed from the previous one: disturbed cells drop by
    ``min(magnitude, current)`` in the event year and afterwards regrow by
    ``recovery_per_year`` without exceeding the undisturbed value.
    """
    out = []
    prev = None
    for i, year in enumerate(spec.years):
        undisturbed = np.minimum(base * (1.0 + spec.growth_rate * i), spec.agb_cap)
        if prev is None:
            cur = undisturbed.copy()
        else:
            # cells below the undisturbed trajectory are recovering
            behind = prev < undisturbed - 1e-9
            cur = np.where(behind, np.minimum(prev + spec.recovery_per_year, undisturbed), undisturbed)
            for e in events:
                if e.year == year:
                    m = e.cells(base.shape)
                    cur = np.where(m, prev - np.minimum(e.magnitude, prev), cur)
        cur = np.where(zero_mask, 0.0, cur)
        cur = cur.astype(np.float32).astype(np.float64)
        out.append(cur)
        prev = cur
    return out


def generate(spec: SynthWorldSpec) -> World:
    seed = spec.seed
    ref = spec.ref
    shape = ref.shape
    schema = synth_schema()

    static = _static_classes(spec, rngmod.generator(seed, "landcover-static"))
    wet = _rank01(_smooth_field(rngmod.generator(seed, "wetness"), shape, 10, (3.0, 9.0), (0.5, 1.0)))
    nodata = np.zeros(shape, dtype=bool)
    nr, nc = int(spec.nodata_notch[0] * spec.nrows), int(spec.nodata_notch[1] * spec.ncols)
    if nr > 0 and nc > 0:
        nodata[:nr, spec.ncols - nc:] = True

    base = _smooth_field(rngmod.generator(seed, "agb-bumps"), shape, spec.n_bumps,
                         spec.bump_sigma, spec.bump_amplitude)
    base = np.minimum(base, spec.agb_cap / (1.0 + spec.growth_rate * (spec.n_years - 1)))
    events = _disturbances(spec, rngmod.generator(seed, "disturbances"))
    zero_mask = np.isin(static, (DEVELOPED, CROPLAND, WATER, BARREN))
    agb = truth_series(spec, base, events, zero_mask)

    elev = 100.0 + _smooth_field(rngmod.generator(seed, "elevation"), shape, 12, (10.0, 40.0), (100.0, 600.0))
    precip = 600.0 + _smooth_field(rngmod.generator(seed, "precip"), shape, 8, (20.0, 60.0), (50.0, 300.0))
    elev = elev.astype(np.float32).astype(np.float64)
    precip = precip.astype(np.float32).astype(np.float64)

    truth, classes, stacks = {}, {}, {}
    prev_nbr = None
    sd = spec.predictor_noise_sd
    for i, year in enumerate(spec.years):
        a = agb[i]
        lc = static.copy()
        veg = lc == 0
        lc[veg & (a >= spec.tree_cover_threshold)] = TREE_COVER
        lc[veg & (a < spec.tree_cover_threshold)] = GRASS_SHRUB
        lc[veg & (wet >= spec.wetland_threshold)] = WETLAND
        lc[nodata] = 0
        classes[year] = ClassGrid(ref, lc)
        truth[year] = Grid(ref, np.where(nodata, NODATA, a), NODATA)

        gen = rngmod.generator(seed, f"predictor-noise:{year}")
        n = lambda: gen.normal(0.0, sd, shape) if sd > 0 else np.zeros(shape)  # noqa: E731
        nbr = 0.85 * np.tanh(a / 120.0) - 0.1 + n()
        tcg = 0.12 + 0.0006 * a - 0.0000012 * a * a + 0.00002 * (elev - 500.0) + n()
        tcw = -0.25 + 0.2 * (1.0 - np.exp(-a / 90.0)) + 0.00005 * (precip - 800.0) + n()
        dnbr = np.zeros(shape) if prev_nbr is None else nbr - prev_nbr
        mag = np.abs(dnbr) + np.abs(n())
        prev_nbr = nbr
        layers = {"NBR": nbr, "TCG": tcg, "TCW": tcw, "DELTA_NBR": dnbr, "MAG": mag,
                  "ELEVATION": elev, "PRECIP": precip}
        stack = {k: Grid(ref, np.where(nodata, NODATA, v.astype(np.float32).astype(np.float64)), NODATA)
                 for k, v in layers.items()}
        stack["LCPRI"] = classes[year]
        stacks[year] = stack

    lidar_year = spec.years[spec.lidar_year_index]
    lgen = rngmod.generator(seed, "lidar-noise")
    lv = agb[spec.lidar_year_index] + (lgen.normal(0.0, spec.lidar_noise_sd, shape) if spec.lidar_noise_sd > 0 else 0.0)
    lv = np.maximum(lv, 0.0).astype(np.float32).astype(np.float64)
    lidar = Grid(ref, np.where(nodata, NODATA, lv), NODATA)

    plots = _make_plots(spec, truth, classes, rngmod.generator(seed, "plots"))
    samples = stratified_sample(lidar, StratifiedSampleSpec(spec.lidar_strata, spec.lidar_per_stratum,
                                                            seed=rngmod.derive_seed(seed, "lidar-sample")))
    pixels = [s.as_pixel(lidar_year) for s in samples]
    small = _small_area(spec, truth, classes, rngmod.generator(seed, "small-area"))
    return World(spec, schema, truth, classes, stacks, lidar, lidar_year, plots, pixels, small, events)


def _make_plots(spec, truth, classes, gen) -> list[PlotRecord]:
    ref = spec.ref
    margin = 60.0  # m; keeps every subplot inside the grid
    plots = []
    attempts = 0
    while len(plots) < spec.n_plots:
        attempts += 1
        if attempts > 100 * spec.n_plots:
            raise DataError("could not place synthetic plots on valid cells")
        x = float(gen.uniform(ref.xll + margin, ref.xmax - margin))
        y = float(gen.uniform(ref.yll + margin, ref.ytop - margin))
        year = int(spec.years[int(gen.integers(0, spec.n_years))])
        noise = float(gen.normal(0.0, spec.plot_noise_sd)) if spec.plot_noise_sd > 0 else 0.0
        g = truth[year]
        fp = build_footprint(PlotRecord("tmp", year, x, y, 0.0))
        w = fp.weights(g)
        vals = g.values[w.rows, w.cols]
        if (vals == g.nodata).any():
            continue
        codes = classes[year].values[w.rows, w.cols]
        t = weighted_extract(w, g)
        true_zero = bool((vals == 0).all())
        agb = 0.0 if true_zero else max(t + noise, 0.0)
        pid = f"p{len(plots):04d}"
        panel = 1 + (year - spec.first_year) % 5
        plots.append(PlotRecord(pid, year, x, y, agb, bool((codes == TREE_COVER).all()), true_zero, panel))
    return plots


def _small_area(spec, truth, classes, gen) -> list[SmallAreaHex]:
    """Hexagons of 64,000 ha with estimates per total area.

    The estimate is the truth AGB of vegetated cells averaged over all
    cells with known landcover, so dividing by the vegetated fraction
    recovers the vegetated-area mean. Confidence intervals are symmetric
    with a half-width of ``small_area_ci_fraction`` of the estimate, and
    the estimate itself is perturbed by a draw within that half-width.
    """
    year = spec.years[min(2, spec.n_years - 1)]
    d = math.sqrt(SMALL_AREA_HEX_HA * 1e4 * 2.0 / math.sqrt(3.0))
    ref = spec.ref
    tess = HexTessellation(d, (ref.xll, ref.yll))
    g = truth[year]
    masked = mask_nonvegetated(g, classes[year])
    qmax = int(math.ceil((ref.xmax - ref.xll) / (1.5 * tess.radius))) + 1
    rmax = int(math.ceil((ref.ytop - ref.yll) / d)) + 1
    out = []
    for q in range(-1, qmax + 1):
        for r in range(-qmax, rmax + 1):
            cx, cy = tess.center(q, r)
            if not (ref.xll <= cx <= ref.xmax and ref.yll <= cy <= ref.ytop):
                continue
            poly = tess.polygon(q, r)
            w = coverage_weights(poly, g)
            vf = vegetated_fraction(w, classes[year])
            v = weighted_extract(w, masked)
            if vf <= 0 or v == masked.nodata:
                continue
            est = v * vf
            half = spec.small_area_ci_fraction * est
            est_noisy = est + float(gen.uniform(-0.5, 0.5)) * half
            out.append(SmallAreaHex(f"{q}:{r}", poly, est_noisy, est_noisy - half, est_noisy + half))
    return out


def write_world(world: World, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world.schema.save(out / "schema.json")
    for year in world.years:
        write_stack(out / "stacks", year, world.stacks[year])
        write_grid(out / "lcmap" / f"lcmap_{year}", world.classes[year])
        write_grid(out / "truth" / f"agb_{year}", world.truth[year])
    write_grid(out / "lidar" / f"lidar_agb_{world.lidar_year}", world.lidar)
    write_plots(out / "plots.csv", world.plots)
    write_lidar_samples(out / "lidar_samples.csv", world.lidar_samples)
    write_small_area_hexes(out / "small_area_hexes.csv", world.small_area)
    _write_disturbances(out / "disturbances.csv", world)
    meta = {
        "spec": world.spec.to_json(),
        "years": world.years,
        "lidar_year": world.lidar_year,
        "disturbances": [dataclasses.asdict(e) for e in world.disturbances],
        "vegetated_classes": list(VEGETATED),
    }
    (out / "world.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def _write_disturbances(path, world: World) -> None:
    """Disturbance footprints as polygons (for trajectory summaries)."""
    ref = world.spec.ref
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["polygon_id", "year", "magnitude", "wkt"])
        for k, e in enumerate(world.disturbances):
            cx = ref.xll + (e.col + 0.5) * ref.cellsize
            cy = ref.ytop - (e.row + 0.5) * ref.cellsize
            poly = Polygon.regular(cx, cy, e.radius * ref.cellsize, 32)
            w.writerow([f"d{k:02d}", e.year, repr(e.magnitude), poly.to_wkt()])


def synth_generate(spec: SynthWorldSpec, out_dir) -> World:
    world = generate(spec)
    write_world(world, out_dir)
    return world
