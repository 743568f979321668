"""Stratified sampling of AGB surfaces, panel partitioning and random splits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, StratumUnderfilled
from .grid import Grid
from .reference import PixelSample, PlotRecord, TrainingTable

log = logging.getLogger(__name__)

SAMPLE_COLUMNS = ["sample_id", "stratum", "x", "y", "agb_mg_ha"]


@dataclass(frozen=True)
class StratifiedSampleSpec:
    n_strata: int = 20
    per_stratum: int = 1000
    lower: float = 0.0
    upper: float | None = None  # None: maximum valid value of the grid
    seed: int = 0
    underfilled: str = "take_all"  # or "fail"

    def __post_init__(self):
        if self.n_strata < 1 or self.per_stratum < 1:
            raise ConfigError("n_strata and per_stratum must be >= 1")
        if self.upper is not None and not self.upper > self.lower:
            raise ConfigError("upper must exceed lower")
        if self.underfilled not in ("take_all", "fail"):
            raise ConfigError(f"unknown underfilled policy {self.underfilled!r}")


@dataclass(frozen=True)
class StratumSample:
    sample_id: str
    stratum: int
    row: int
    col: int
    x: float
    y: float
    agb: float

    def as_pixel(self, year: int) -> PixelSample:
        return PixelSample(self.sample_id, int(year), self.x, self.y, self.agb)


@dataclass(frozen=True)
class SampleResult:
    samples: list
    edges: np.ndarray
    shortfalls: dict  # stratum -> cells available when fewer than requested

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


def stratum_edges(lower: float, upper: float, n_strata: int) -> np.ndarray:
    w = (upper - lower) / n_strata
    edges = lower + w * np.arange(n_strata + 1, dtype=np.float64)
    edges[-1] = upper
    return edges


def assign_strata(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Stratum index per value: half-open intervals, the last one closed; -1 outside."""
    n = edges.shape[0] - 1
    k = np.searchsorted(edges, values, side="right") - 1
    k = np.where(values == edges[-1], n - 1, k)
    return np.where((values < edges[0]) | (values > edges[-1]), -1, k)


def stratified_sample(agb: Grid, spec: StratifiedSampleSpec) -> SampleResult:
    """Equal-width strata over [lower, upper]; uniform draws without replacement.

    Each stratum draws from its own labeled random stream, so strata are
    independent of each other. Output is ordered by (stratum, draw).
    """
    vals = agb.values.ravel()
    valid = np.flatnonzero(agb.valid.ravel())
    upper = spec.upper if spec.upper is not None else float(vals[valid].max())
    if not upper > spec.lower:
        raise ConfigError("grid has no values above the lower stratum bound")
    edges = stratum_edges(spec.lower, upper, spec.n_strata)
    strata = assign_strata(vals[valid], edges)
    samples = []
    shortfalls = {}
    for k in range(spec.n_strata):
        cells = valid[strata == k]
        if cells.size < spec.per_stratum:
            shortfalls[k] = int(cells.size)
            if spec.underfilled == "fail":
                raise StratumUnderfilled(k, int(cells.size), spec.per_stratum)
            log.warning("stratum %d: %d cells available, %d requested; taking all",
                        k, cells.size, spec.per_stratum)
            draw = rngmod.generator(spec.seed, f"stratum:{k}").permutation(cells.size)
        else:
            draw = rngmod.generator(spec.seed, f"stratum:{k}").choice(
                cells.size, size=spec.per_stratum, replace=False)
        picked = cells[draw]
        rows, cols = np.divmod(picked, agb.ref.ncols)
        xs, ys = agb.ref.cell_center(rows, cols)
        for i in range(picked.size):
            samples.append(StratumSample(f"s{k:02d}_{i:05d}", k, int(rows[i]), int(cols[i]),
                                         float(xs[i]), float(ys[i]), float(vals[picked[i]])))
    return SampleResult(samples, edges, shortfalls)


def write_samples(path, samples: Sequence[StratumSample]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS)
        for s in samples:
            w.writerow([s.sample_id, s.stratum, repr(s.x), repr(s.y), repr(s.agb)])


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    assessment_panel: int | str = "random"
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)")
        if self.assessment_panel != "random" and self.assessment_panel not in (1, 2, 3, 4, 5):
            raise ConfigError("assessment_panel must be 1..5 or 'random'")

    def resolve_panel(self) -> int:
        if self.assessment_panel == "random":
            return int(rngmod.generator(self.seed, "panel").integers(1, 6))
        return int(self.assessment_panel)


def partition_panels(plots: Sequence[PlotRecord], spec: SplitSpec):
    """(model_dev, map_assessment). The assessment panel goes entirely to
    map assessment; model development keeps only fully forested or true-zero
    plots from the remaining panels."""
    panel = spec.resolve_panel()
    assess = [p for p in plots if p.panel == panel]
    dev = [p for p in plots if p.panel != panel and (p.fully_forested or p.true_zero)]
    if not dev:
        log.warning("model development set is empty (assessment panel %d)", panel)
    return dev, assess


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise ConfigError("need at least 2 rows to split")
    # rounding guards against products like 5 * 0.6 = 3.0000000000000004
    n_train = min(math.ceil(round(n * spec.train_fraction, 9)), n - 1)
    perm = rngmod.generator(spec.seed, "split").permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def train_test_split(table: TrainingTable, spec: SplitSpec) -> tuple[TrainingTable, TrainingTable]:
    tr, te = split_indices(table.n, spec)
    return table.subset(tr), table.subset(te)
