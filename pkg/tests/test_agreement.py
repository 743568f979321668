import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forestagb.agreement import (
    EvalPairs,
    HexTessellation,
    adjust_fia,
    bootstrap_se,
    gmfr,
    hex_assign,
    hex_means,
    metrics,
    riemann_assessment,
    scale_label,
    small_area_comparison,
    vegetated_fraction,
    write_csv,
)
from forestagb.errors import DegenerateInput, ZeroVegFraction
from forestagb.grid import ClassGrid, GeoRef, Polygon, coverage_weights
from forestagb.reference import PlotRecord

SQ3 = math.sqrt(3.0)


def brute(y, yh):
    """Plain-loop evaluator of the six point metrics."""
    n = len(y)
    se = ae = e_sum = 0.0
    for a, b in zip(y, yh):
        se += (a - b) ** 2
        ae += abs(a - b)
        e_sum += a - b
    ybar = sum(y) / n
    sst = sum((a - ybar) ** 2 for a in y)
    rmse = math.sqrt(se / n)
    return {"rmse": rmse, "prmse": 100 * rmse / ybar, "mae": ae / n, "pmae": 100 * ae / n / ybar,
            "me": e_sum / n, "r2": 1 - se / sst}


def test_hand_case():
    m = metrics(EvalPairs([1.0, 3.0], [2.0, 2.0]), boot_iters=0)
    assert (m.rmse, m.prmse, m.mae, m.pmae, m.me, m.r2) == (1.0, 50.0, 1.0, 50.0, 0.0, 0.0)
    # error spread: e = (-1, 1) -> sd 1.414..., |e| = (1, 1) -> 0
    assert m.se_me == pytest.approx(math.sqrt(2.0)) and m.se_mae == 0.0


def test_sign_convention_reference_minus_prediction():
    assert metrics(EvalPairs([10.0, 10.0], [8.0, 6.0]), boot_iters=0).me == 3.0


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.floats(1, 400), st.floats(0, 400)), min_size=2, max_size=60))
def test_matches_brute_force(pairs):
    y = [a for a, _ in pairs]
    yh = [b for _, b in pairs]
    if len(set(y)) < 2:
        return
    m = metrics(EvalPairs(y, yh), boot_iters=0)
    ref = brute(y, yh)
    for k, v in ref.items():
        assert getattr(m, k) == pytest.approx(v, rel=1e-9, abs=1e-9)


def test_degenerate_inputs():
    m = metrics(EvalPairs([0.0, 0.0], [1.0, 2.0]), boot_iters=10)
    assert math.isnan(m.prmse) and math.isnan(m.r2)
    with pytest.raises(DegenerateInput):
        metrics(EvalPairs([0.0, 0.0], [1.0, 2.0]), strict=True)
    one = metrics(EvalPairs([5.0], [4.0]))
    assert one.rmse == 1.0 and math.isnan(one.se_rmse)
    with pytest.raises(DegenerateInput):
        metrics(EvalPairs([5.0], [4.0]), strict=True)
    with pytest.raises(DegenerateInput):
        EvalPairs([], [])


def test_bootstrap_reproducible_and_scaled():
    rng = np.random.default_rng(0)
    y = rng.uniform(0, 300, 80)
    yh = y + rng.normal(0, 30, 80)
    a = bootstrap_se(y, yh, 500, seed=3)
    assert a == bootstrap_se(y, yh, 500, seed=3)
    assert a != bootstrap_se(y, yh, 500, seed=4)
    # oracle: explicit loop over the same index matrix
    from forestagb import rng as rngmod

    idx = rngmod.generator(3, "bootstrap").integers(0, 80, size=(500, 80))
    rm = [math.sqrt(np.mean((y[i] - yh[i]) ** 2)) for i in idx]
    assert a[0] == pytest.approx(math.sqrt(np.var(rm, ddof=1) / 80), rel=1e-10)


def test_gmfr_slope_two_and_reciprocal():
    line = gmfr(EvalPairs([2.0, 4.0, 6.0], [1.0, 2.0, 3.0]))
    assert abs(line.slope - 2.0) <= 1e-9 and abs(line.intercept) <= 1e-9
    rng = np.random.default_rng(1)
    a, b = rng.normal(100, 30, 50), rng.normal(100, 20, 50)
    fwd, back = gmfr(EvalPairs(a, b)), gmfr(EvalPairs(b, a))
    assert abs(fwd.slope * back.slope - 1.0) <= 1e-9
    neg = gmfr(EvalPairs([3.0, 2.0, 1.0], [1.0, 2.0, 3.0]))
    assert neg.slope == -1.0
    with pytest.raises(DegenerateInput):
        gmfr(EvalPairs([1.0, 1.0], [1.0, 2.0]))


# ---------------------------------------------------------------------------
# hexagons


def test_hex_areas():
    assert abs(HexTessellation(20_000).cell_area / 1e4 - 34_641) < 1
    assert abs(HexTessellation(50_000).cell_area / 1e4 - 216_506) < 1
    t = HexTessellation(1000.0, (5.0, 7.0))
    assert t.polygon(3, -2).area == pytest.approx(t.cell_area, rel=1e-12)
    assert scale_label(20_000) == "20km" and scale_label(2_500) == "2.5km"


def test_neighbour_centres_are_spacing_apart():
    t = HexTessellation(1000.0)
    cx, cy = t.center(0, 0)
    for q, r in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)]:
        x, y = t.center(q, r)
        assert math.hypot(x - cx, y - cy) == pytest.approx(1000.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e5, 1e5), st.floats(-1e5, 1e5), st.floats(100, 60_000))
def test_assign_returns_nearest_centre(x, y, d):
    t = HexTessellation(d, (123.0, -45.0))
    q, r = t.assign(x, y)
    cx, cy = t.center(q[0], r[0])
    best = math.hypot(cx - x, cy - y)
    assert best <= t.radius * (1 + 1e-9)
    for dq in (-2, -1, 0, 1, 2):
        for dr in (-2, -1, 0, 1, 2):
            ox, oy = t.center(q[0] + dq, r[0] + dr)
            assert best <= math.hypot(ox - x, oy - y) + 1e-9 * d


def test_assign_points_inside_polygon():
    t = HexTessellation(1000.0)
    rng = np.random.default_rng(4)
    pts = rng.uniform(-5000, 5000, (300, 2))
    q, r = t.assign(pts[:, 0], pts[:, 1])
    for (x, y), a, b in zip(pts, q, r):
        ring = t.polygon(int(a), int(b)).rings[0]
        inside = False
        for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
            if (y1 > y) != (y2 > y) and x < x1 + (y - y1) * (x2 - x1) / (y2 - y1):
                inside = not inside
        assert inside
    assert hex_assign([0.0], [0.0], t) == ["0:0"]


def test_hex_means_first_appearance_order():
    ref = np.array([1.0, 2.0, 3.0, 4.0])
    pred = np.array([1.5, 2.0, 3.0, 5.0])
    q = np.array([2, 0, 2, 0])
    r = np.array([0, 0, 0, 0])
    keys, counts, my, mp, members = hex_means(ref, pred, q, r)
    assert keys == [(2, 0), (0, 0)] and counts.tolist() == [2, 2]
    assert my.tolist() == [2.0, 3.0] and mp.tolist() == [2.25, 3.5]


# ---------------------------------------------------------------------------
# assessment on the synthetic world


def test_assessment_on_truth_surfaces(small_world, tmp_path):
    w = small_world
    rep = riemann_assessment(w.plots, w.truth, w.classes, [5000, 10000], boot_iters=50, seed=1,
                             residual_scale=10000)
    labels = [r["scale"] for r in rep.scale_rows]
    assert labels == ["plot:pixel", "5km", "10km"]
    pp = rep.scale_rows[0]
    assert pp["n"] == len(w.plots) and math.isnan(pp["pph"])
    for row in rep.scale_rows[1:]:
        assert row["pph"] == pytest.approx(pp["n"] / row["n"])
    assert all(r["n"] >= 2 for r in rep.hex_rows)
    assert [(r["q"], r["r"]) for r in rep.hex_rows] == sorted((r["q"], r["r"]) for r in rep.hex_rows)
    assert {r["class"] for r in rep.class_rows} <= {3, 4, 6}
    paths = rep.write(tmp_path)
    with open(paths[0]) as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["pph"] == "" and rows[1]["scale"] == "5km"


def test_small_area_adjustment():
    assert adjust_fia(50.0, 40.0, 60.0, 0.5) == (100.0, 80.0, 120.0)
    with pytest.raises(ZeroVegFraction):
        adjust_fia(50.0, 40.0, 60.0, 0.0)
    ref = GeoRef(2, 2, 0.0, 0.0, 10.0)
    cg = ClassGrid(ref, np.array([[3, 1], [0, 4]]))
    w = coverage_weights(Polygon.rectangle(0, 0, 20, 20), ref)
    assert vegetated_fraction(w, cg) == pytest.approx(2 / 3)


def test_small_area_truth_always_inside(small_world):
    w = small_world
    year = w.years[min(2, len(w.years) - 1)]
    res = small_area_comparison(w.truth[year], w.classes[year], w.small_area)
    assert res.n_compared > 0 and res.percent_inside == 100.0
    assert sum(res.skipped.values()) + res.n_compared == len(w.small_area)


def test_write_csv_formats(tmp_path):
    write_csv(tmp_path / "x.csv", ["a", "b", "c"], [{"a": math.nan, "b": True, "c": 0.1}])
    assert (tmp_path / "x.csv").read_text().splitlines()[1] == ",true,0.1"


def test_plot_without_prediction_is_counted(small_world):
    w = small_world
    ref = w.spec.ref
    corner = PlotRecord("nowhere", w.years[0], ref.xmax - 100.0, ref.ytop - 100.0, 50.0)  # nodata notch
    rep = riemann_assessment([*w.plots[:10], corner], w.truth, None, [5000], boot_iters=0)
    assert rep.exclusions["plots_without_prediction"] == 1
