"""Map agreement: accuracy metrics with standard errors, GMFR lines,
multi-scale hexagon assessment and comparison with small-area estimates.

Sign convention: errors are reference minus prediction, so a positive mean
error means the map underpredicts on average.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import rng as rngmod
from .errors import AllNodata, DataError, DegenerateInput, EmptyIntersection, MissingYearSurface, ZeroVegFraction
from .grid import (
    CLASS_NAMES,
    CLASS_NODATA,
    VEGETATED,
    ClassGrid,
    Grid,
    Polygon,
    coverage_weights,
    majority_class,
    mask_nonvegetated,
    parse_wkt_polygon,
    require_aligned,
    weighted_extract,
)
from .reference import PlotRecord, build_footprint

log = logging.getLogger(__name__)

BOOT_ITERS = 1000
SQRT3 = math.sqrt(3.0)

REPORT_COLUMNS = ["scale", "model", "n", "pph", "mae", "pmae", "rmse", "prmse", "me", "r2",
                  "se_mae", "se_rmse", "se_me", "se_r2", "gmfr_slope", "gmfr_intercept"]
CLASS_COLUMNS = ["model", "class", "class_name", "n", "mae", "pmae", "rmse", "prmse", "me", "r2",
                 "se_mae", "se_rmse", "se_me", "se_r2"]
HEX_COLUMNS = ["scale", "model", "hex_id", "q", "r", "x", "y", "n", "mae", "prmse", "me"]
SMALL_AREA_COLUMNS = ["hex_id", "mapped_mean", "fia_estimate", "ci_low", "ci_high", "veg_fraction",
                      "fia_adjusted", "ci_low_adjusted", "ci_high_adjusted", "inside_ci"]


def _fsum(a) -> float:
    return math.fsum(np.asarray(a, dtype=np.float64).tolist())


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class EvalPairs:
    y: np.ndarray  # reference
    yhat: np.ndarray  # prediction

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        yh = np.asarray(self.yhat, dtype=np.float64).reshape(-1)
        if y.shape != yh.shape:
            raise DataError("reference and prediction lengths differ")
        if y.size < 1:
            raise DegenerateInput("no evaluation pairs")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "yhat", yh)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def errors(self) -> np.ndarray:
        return self.y - self.yhat


@dataclass(frozen=True)
class MetricSet:
    n: int
    rmse: float
    prmse: float
    mae: float
    pmae: float
    me: float
    r2: float
    se_rmse: float
    se_r2: float
    se_mae: float
    se_me: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("n", "mae", "pmae", "rmse", "prmse", "me", "r2",
                                              "se_mae", "se_rmse", "se_me", "se_r2")}


def _point_metrics(y: np.ndarray, yh: np.ndarray):
    n = y.shape[0]
    e = y - yh
    rmse = math.sqrt(_fsum(e * e) / n)
    mae = _fsum(np.abs(e)) / n
    me = _fsum(e) / n
    ybar = _fsum(y) / n
    d = y - ybar
    sst = _fsum(d * d)
    r2 = 1.0 - _fsum(e * e) / sst if sst > 0 else math.nan
    return rmse, mae, me, ybar, r2


def _se_spread(e: np.ndarray) -> float:
    """sqrt(sum((e - mean(e))^2) / (n - 1)), applied as printed (no sqrt(n))."""
    n = e.shape[0]
    d = e - _fsum(e) / n
    return math.sqrt(_fsum(d * d) / (n - 1))


def bootstrap_se(y, yh, iters: int = BOOT_ITERS, seed: int = 0) -> tuple[float, float]:
    """sqrt(Var_boot / n) for RMSE and R^2.

    All resamples come from one stream (``bootstrap``) as an iters x n index
    matrix, so the result depends only on the pair order and the seed.
    Resamples whose R^2 is undefined (constant reference) are skipped.
    """
    n = y.shape[0]
    idx = rngmod.generator(seed, "bootstrap").integers(0, n, size=(iters, n))
    yb, pb = y[idx], yh[idx]
    e = yb - pb
    sse = (e * e).sum(axis=1)
    rm = np.sqrt(sse / n)
    d = yb - (yb.sum(axis=1) / n)[:, None]
    sst = (d * d).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(sst > 0, 1.0 - sse / sst, np.nan)
    out = []
    for v in (rm, r2):
        v = v[~np.isnan(v)]
        out.append(math.sqrt(float(np.var(v, ddof=1)) / n) if v.size > 1 else math.nan)
    return out[0], out[1]


def metrics(p: EvalPairs, boot_iters: int = BOOT_ITERS, seed: int = 0, strict: bool = False) -> MetricSet:
    """RMSE, MAE, ME, R^2, their percent forms and standard errors.

    With ``strict=True`` undefined quantities raise DegenerateInput (n < 2
    for standard errors, zero mean reference for percent metrics); otherwise
    they are NaN.
    """
    y, yh = p.y, p.yhat
    n = p.n
    rmse, mae, me, ybar, r2 = _point_metrics(y, yh)
    if ybar == 0:
        if strict:
            raise DegenerateInput("mean reference value is zero; percent metrics undefined")
        prmse = pmae = math.nan
    else:
        prmse = 100.0 * rmse / ybar
        pmae = 100.0 * mae / ybar
    if n < 2:
        if strict:
            raise DegenerateInput("standard errors need at least 2 pairs")
        se_rmse = se_r2 = se_mae = se_me = math.nan
    else:
        e = y - yh
        se_mae = _se_spread(np.abs(e))
        se_me = _se_spread(e)
        if boot_iters > 0:
            se_rmse, se_r2 = bootstrap_se(y, yh, boot_iters, seed)
        else:
            se_rmse = se_r2 = math.nan
    return MetricSet(n, rmse, prmse, mae, pmae, me, r2, se_rmse, se_r2, se_mae, se_me)


@dataclass(frozen=True)
class GmfrLine:
    slope: float
    intercept: float


def _sd(a: np.ndarray) -> float:
    d = a - _fsum(a) / a.shape[0]
    return math.sqrt(_fsum(d * d) / a.shape[0])


def gmfr(p: EvalPairs) -> GmfrLine:
    """Reduced major axis line of reference (y axis) on prediction (x axis)."""
    y, yh = p.y, p.yhat
    sy, sx = _sd(y), _sd(yh)
    if not (sy > 0 and sx > 0):
        raise DegenerateInput("GMFR needs non-constant reference and prediction")
    my, mx = _fsum(y) / p.n, _fsum(yh) / p.n
    cov = _fsum((y - my) * (yh - mx))
    slope = math.copysign(sy / sx, cov)
    return GmfrLine(slope, my - slope * mx)


def _gmfr_or_nan(p: EvalPairs) -> GmfrLine:
    try:
        return gmfr(p)
    except DegenerateInput:
        return GmfrLine(math.nan, math.nan)


# ---------------------------------------------------------------------------
# hexagons


@dataclass(frozen=True)
class HexTessellation:
    """Flat-top hexagons with centroid spacing ``d``.

    Circumradius is d/sqrt(3) and each cell covers (sqrt(3)/2) d^2.
    Cell (q, r) is centered at ``origin + R * (1.5 q, sqrt(3) (r + q/2))``.
    """

    spacing: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("hex spacing must be positive")

    @property
    def radius(self) -> float:
        return self.spacing / SQRT3

    @property
    def cell_area(self) -> float:
        return SQRT3 / 2.0 * self.spacing * self.spacing

    def center(self, q, r):
        R = self.radius
        q = np.asarray(q, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        return self.origin[0] + R * 1.5 * q, self.origin[1] + R * SQRT3 * (r + q / 2.0)

    def polygon(self, q: int, r: int) -> Polygon:
        cx, cy = self.center(q, r)
        return Polygon.regular(float(cx), float(cy), self.radius, 6)

    def assign(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Axial (q, r) of the hex containing each point.

        Cube rounding gives a first guess; the final answer is the nearest
        center among it and its six neighbors, ties going to the smallest
        (q, r).
        """
        x = np.atleast_1d(np.asarray(x, dtype=np.float64)) - self.origin[0]
        y = np.atleast_1d(np.asarray(y, dtype=np.float64)) - self.origin[1]
        R = self.radius
        fq = (2.0 / 3.0) * x / R
        fr = (-x / 3.0 + SQRT3 / 3.0 * y) / R
        fs = -fq - fr
        q, r, s = np.round(fq), np.round(fr), np.round(fs)
        dq, dr, ds = np.abs(q - fq), np.abs(r - fr), np.abs(s - fs)
        fix_q = (dq > dr) & (dq > ds)
        fix_r = ~fix_q & (dr > ds)
        q = np.where(fix_q, -r - s, q)
        r = np.where(fix_r, -q - s, r)
        q0, r0 = q.astype(np.int64), r.astype(np.int64)
        offsets = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)]
        best_q, best_r = q0.copy(), r0.copy()
        best_d = np.full(x.shape, np.inf)
        for oq, orr in offsets:
            cq, cr = q0 + oq, r0 + orr
            cx, cy = self.center(cq, cr)
            d = (cx - self.origin[0] - x) ** 2 + (cy - self.origin[1] - y) ** 2
            better = (d < best_d) | ((d == best_d) & ((cq < best_q) | ((cq == best_q) & (cr < best_r))))
            best_q = np.where(better, cq, best_q)
            best_r = np.where(better, cr, best_r)
            best_d = np.where(better, d, best_d)
        return best_q, best_r


def hex_assign(x, y, tess: HexTessellation) -> list[str]:
    q, r = tess.assign(x, y)
    return [hex_id(a, b) for a, b in zip(q.tolist(), r.tolist())]


def hex_id(q: int, r: int) -> str:
    return f"{q}:{r}"


def scale_label(d: float) -> str:
    km = d / 1000.0
    return f"{km:g}km"


# ---------------------------------------------------------------------------
# Riemann-style assessment


@dataclass
class PlotPrediction:
    plot: PlotRecord
    prediction: float
    lc_class: int


@dataclass
class AgreementReport:
    model: str
    scale_rows: list = field(default_factory=list)
    class_rows: list = field(default_factory=list)
    hex_rows: list = field(default_factory=list)
    exclusions: dict = field(default_factory=dict)
    pairs: dict = field(default_factory=dict)  # scale label -> EvalPairs
    lines: dict = field(default_factory=dict)  # scale label -> GmfrLine
    units: dict = field(default_factory=dict)  # scale label -> plot or hex ids, pair order

    def pair_rows(self) -> list[dict]:
        rows = []
        for label, p in self.pairs.items():
            for uid, a, b in zip(self.units[label], p.y.tolist(), p.yhat.tolist()):
                rows.append({"model": self.model, "scale": label, "unit_id": uid,
                             "reference": a, "predicted": b})
        return rows

    def write(self, out_dir, stem: str = "agreement") -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{stem}.csv", out / f"{stem}_by_class.csv", out / f"{stem}_hex_residuals.csv"]
        write_csv(paths[0], REPORT_COLUMNS, self.scale_rows)
        write_csv(paths[1], CLASS_COLUMNS, self.class_rows)
        write_csv(paths[2], HEX_COLUMNS, self.hex_rows)
        return paths


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return v


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def extract_plot_predictions(plots: Sequence[PlotRecord], surfaces: Mapping[int, Grid],
                             class_grids: Mapping[int, ClassGrid] | None = None):
    """Footprint-weighted prediction and majority class for each plot.

    Plots whose footprint holds no valid prediction (outside the map or
    entirely masked) are returned separately by id.
    """
    out, skipped = [], []
    for p in plots:
        if int(p.year) not in surfaces:
            raise MissingYearSurface(int(p.year))
        g = surfaces[int(p.year)]
        w = build_footprint(p).weights(g)
        if len(w) == 0:
            skipped.append(p.plot_id)
            continue
        v = weighted_extract(w, g)
        if v == g.nodata:
            skipped.append(p.plot_id)
            continue
        code = CLASS_NODATA
        if class_grids is not None and int(p.year) in class_grids:
            try:
                code = majority_class(w, class_grids[int(p.year)])
            except AllNodata:
                code = CLASS_NODATA
        out.append(PlotPrediction(p, v, code))
    return out, skipped


def _metric_row(ms: MetricSet) -> dict:
    return ms.as_dict()


def hex_means(ref: np.ndarray, pred: np.ndarray, q: np.ndarray, r: np.ndarray):
    """Group plots by hex in order of first appearance.

    Returns (keys, counts, mean reference, mean prediction, member indices).
    """
    groups: dict = {}
    for i, key in enumerate(zip(q.tolist(), r.tolist())):
        groups.setdefault(key, []).append(i)
    keys = list(groups)
    members = [np.array(groups[k]) for k in keys]
    counts = np.array([m.size for m in members])
    my = np.array([_fsum(ref[m]) / m.size for m in members])
    mp = np.array([_fsum(pred[m]) / m.size for m in members])
    return keys, counts, my, mp, members


def riemann_assessment(plots: Sequence[PlotRecord], surfaces: Mapping[int, Grid],
                       class_grids: Mapping[int, ClassGrid] | None, scales: Sequence[float],
                       model: str = "ensemble", boot_iters: int = BOOT_ITERS, seed: int = 0,
                       origin=None, residual_scale: float = 50_000.0) -> AgreementReport:
    """Agreement at the plot:pixel scale and for hexagons of each spacing.

    Each plot is paired with the footprint-weighted prediction from the
    surface of its own year. A hexagon's pair is (mean plot AGB, mean
    prediction) over its plots. Per-hex residual summaries use spacing
    ``residual_scale`` and leave out hexagons holding a single plot.
    """
    preds, skipped = extract_plot_predictions(plots, surfaces, class_grids)
    rep = AgreementReport(model)
    rep.exclusions["plots_without_prediction"] = len(skipped)
    if not preds:
        raise DegenerateInput("no assessment plot has a valid prediction")
    ref = np.array([pp.plot.agb for pp in preds], dtype=np.float64)
    pred = np.array([pp.prediction for pp in preds], dtype=np.float64)
    xs = np.array([pp.plot.x for pp in preds], dtype=np.float64)
    ys = np.array([pp.plot.y for pp in preds], dtype=np.float64)
    if origin is None:
        origin = (float(xs.min()), float(ys.min()))

    def block(label, pairs, pph, units):
        ms = metrics(pairs, boot_iters, seed)
        line = _gmfr_or_nan(pairs)
        rep.pairs[label] = pairs
        rep.units[label] = units
        rep.lines[label] = line
        row = {"scale": label, "model": model, **_metric_row(ms), "pph": pph,
               "gmfr_slope": line.slope, "gmfr_intercept": line.intercept}
        rep.scale_rows.append(row)

    block("plot:pixel", EvalPairs(ref, pred), math.nan, [pp.plot.plot_id for pp in preds])

    for d in scales:
        tess = HexTessellation(float(d), origin)
        q, r = tess.assign(xs, ys)
        keys, counts, my, mp, _ = hex_means(ref, pred, q, r)
        block(scale_label(d), EvalPairs(my, mp), float(counts.sum()) / len(keys), [hex_id(*k) for k in keys])
        rep.exclusions[f"{scale_label(d)}_hexes"] = len(keys)

    codes = np.array([pp.lc_class for pp in preds])
    for code in sorted(set(codes.tolist())):
        if code not in VEGETATED:  # includes nodata
            continue
        sel = codes == code
        ms = metrics(EvalPairs(ref[sel], pred[sel]), boot_iters, seed)
        rep.class_rows.append({"model": model, "class": code, "class_name": CLASS_NAMES.get(code, ""),
                               **_metric_row(ms)})

    tess = HexTessellation(float(residual_scale), origin)
    q, r = tess.assign(xs, ys)
    keys, counts, my, mp, members = hex_means(ref, pred, q, r)
    single = 0
    rows = []
    for key, m in zip(keys, members):
        if m.size < 2:
            single += 1
            continue
        e = ref[m] - pred[m]
        mean_ref = _fsum(ref[m]) / m.size
        rmse = math.sqrt(_fsum(e * e) / m.size)
        cx, cy = tess.center(*key)
        rows.append({"scale": scale_label(residual_scale), "model": model, "hex_id": hex_id(*key),
                     "q": key[0], "r": key[1], "x": float(cx), "y": float(cy), "n": int(m.size),
                     "mae": _fsum(np.abs(e)) / m.size,
                     "prmse": 100.0 * rmse / mean_ref if mean_ref != 0 else math.nan,
                     "me": _fsum(e) / m.size})
    rows.sort(key=lambda row: (row["q"], row["r"]))
    rep.hex_rows = rows
    rep.exclusions["single_plot_hexes_removed"] = single
    return rep


# ---------------------------------------------------------------------------
# small-area comparison


@dataclass(frozen=True)
class SmallAreaHex:
    hex_id: str
    polygon: Polygon
    fia_estimate: float
    ci_low: float
    ci_high: float


def read_small_area_hexes(path) -> list[SmallAreaHex]:
    """CSV with columns hex_id, wkt, fia_estimate, ci_low, ci_high."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            try:
                out.append(SmallAreaHex(rec["hex_id"], parse_wkt_polygon(rec["wkt"]),
                                        float(rec["fia_estimate"]), float(rec["ci_low"]),
                                        float(rec["ci_high"])))
            except KeyError as exc:
                raise DataError(f"{path}: missing column {exc}") from None
    return out


def write_small_area_hexes(path, hexes: Sequence[SmallAreaHex]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hex_id", "wkt", "fia_estimate", "ci_low", "ci_high"])
        for h in hexes:
            w.writerow([h.hex_id, h.polygon.to_wkt(), repr(h.fia_estimate), repr(h.ci_low), repr(h.ci_high)])


def adjust_fia(estimate: float, ci_low: float, ci_high: float, veg_fraction: float):
    """Scale a per-total-area estimate to a per-vegetated-area one."""
    if not veg_fraction > 0:
        raise ZeroVegFraction("hexagon has no vegetated area")
    return estimate / veg_fraction, ci_low / veg_fraction, ci_high / veg_fraction


def vegetated_fraction(w, cg: ClassGrid) -> float:
    """Vegetated share of the covered area with a known landcover class."""
    codes = np.asarray(cg.values)[w.rows, w.cols]
    known = codes != CLASS_NODATA
    total = _fsum(w.fractions[known])
    if total == 0:
        return 0.0
    return _fsum(w.fractions[known & np.isin(codes, VEGETATED)]) / total


@dataclass
class SmallAreaResult:
    rows: list
    n_compared: int
    n_inside: int
    skipped: dict

    @property
    def percent_inside(self) -> float:
        return 100.0 * self.n_inside / self.n_compared if self.n_compared else math.nan


def small_area_comparison(surface: Grid, class_grid: ClassGrid, hexes: Sequence[SmallAreaHex],
                          min_inside: float = 0.5) -> SmallAreaResult:
    """Compare coverage-weighted means of the masked surface with FIA
    small-area estimates adjusted by each hexagon's vegetated fraction.

    Only hexagons with more than ``min_inside`` of their area on the map
    are compared.
    """
    require_aligned(surface, class_grid)
    masked = mask_nonvegetated(surface, class_grid)
    rows = []
    skipped = {"outside": 0, "zero_veg_fraction": 0, "no_prediction": 0}
    n_inside = 0
    for h in hexes:
        try:
            w = coverage_weights(h.polygon, surface)
        except EmptyIntersection:
            skipped["outside"] += 1
            continue
        if not w.covered_area(surface.ref.cellsize) / h.polygon.area > min_inside:
            skipped["outside"] += 1
            continue
        vf = vegetated_fraction(w, class_grid)
        try:
            adj, lo, hi = adjust_fia(h.fia_estimate, h.ci_low, h.ci_high, vf)
        except ZeroVegFraction:
            log.warning("hex %s skipped: no vegetated area", h.hex_id)
            skipped["zero_veg_fraction"] += 1
            continue
        mapped = weighted_extract(w, masked)
        if mapped == masked.nodata:
            skipped["no_prediction"] += 1
            continue
        inside = lo <= mapped <= hi
        n_inside += int(inside)
        rows.append({"hex_id": h.hex_id, "mapped_mean": mapped, "fia_estimate": h.fia_estimate,
                     "ci_low": h.ci_low, "ci_high": h.ci_high, "veg_fraction": vf,
                     "fia_adjusted": adj, "ci_low_adjusted": lo, "ci_high_adjusted": hi,
                     "inside_ci": inside})
    return SmallAreaResult(rows, len(rows), n_inside, skipped)
