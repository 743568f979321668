import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forestagb.errors import DataError, EmptyIntersection, GridMismatch
from forestagb.grid import (
    NODATA,
    ClassGrid,
    CoverageWeights,
    GeoRef,
    Grid,
    Polygon,
    class_summary,
    coverage_weights,
    majority_class,
    mask_nonvegetated,
    parse_wkt_polygon,
    read_grid,
    subtract,
    weighted_extract,
    write_grid,
)

REF = GeoRef(20, 30, 1000.0, 2000.0, 10.0)


def _rect_oracle(x0, y0, x1, y1, ref):
    """Per-cell covered fraction of an axis-aligned rectangle by interval overlap."""
    out = np.zeros(ref.shape)
    for r in range(ref.nrows):
        top = ref.ytop - r * ref.cellsize
        dy = max(0.0, min(y1, top) - max(y0, top - ref.cellsize))
        for c in range(ref.ncols):
            left = ref.xll + c * ref.cellsize
            dx = max(0.0, min(x1, left + ref.cellsize) - max(x0, left))
            out[r, c] = dx * dy / ref.cellsize ** 2
    return out


def _dense(w: CoverageWeights, ref):
    out = np.zeros(ref.shape)
    out[w.rows, w.cols] = w.fractions
    return out


def test_cell_of_and_center_roundtrip():
    r, c = np.array([0, 19, 7]), np.array([0, 29, 11])
    x, y = REF.cell_center(r, c)
    rr, cc = REF.cell_of(x, y)
    assert rr.tolist() == r.tolist() and cc.tolist() == c.tolist()
    assert REF.cell_of(999.0, 2001.0) == (-1, -1)


@settings(max_examples=60, deadline=None)
@given(st.floats(1000, 1290), st.floats(2000, 2190), st.floats(0.5, 120), st.floats(0.5, 120))
def test_rectangle_coverage_matches_overlap_oracle(x0, y0, w, h):
    x1, y1 = min(x0 + w, 1300.0), min(y0 + h, 2200.0)
    if x1 - x0 < 1e-6 or y1 - y0 < 1e-6:
        return
    cw = coverage_weights(Polygon.rectangle(x0, y0, x1, y1), REF)
    np.testing.assert_allclose(_dense(cw, REF), _rect_oracle(x0, y0, x1, y1, REF), atol=1e-9)


def test_circle_coverage_sums_to_polygon_area():
    poly = Polygon.regular(1150.0, 2100.0, 33.0, 64)
    w = coverage_weights(poly, REF)
    assert w.covered_area(REF.cellsize) == pytest.approx(poly.area, rel=1e-12)
    assert (w.fractions > 0).all() and (w.fractions <= 1 + 1e-12).all()


def test_holes_subtract():
    outer = [(1000, 2000), (1100, 2000), (1100, 2100), (1000, 2100)]
    hole = [(1020, 2020), (1040, 2020), (1040, 2040), (1020, 2040)]
    poly = Polygon.from_coords(outer, [hole])
    w = coverage_weights(poly, REF)
    assert w.covered_area(10.0) == pytest.approx(100 * 100 - 20 * 20)
    d = _dense(w, REF)
    # rows counted from the top: y 2020..2040 -> rows 16, 17
    assert d[16, 2] == 0.0 and d[17, 3] == 0.0 and d[15, 2] == 1.0


def test_partially_outside_and_outside():
    w = coverage_weights(Polygon.rectangle(990, 1990, 1005, 2005), REF)
    assert w.covered_area(10.0) == pytest.approx(25.0)
    with pytest.raises(EmptyIntersection):
        coverage_weights(Polygon.rectangle(0, 0, 10, 10), REF)


def test_merge_sums_fractions():
    a = coverage_weights(Polygon.rectangle(1000, 2000, 1010, 2010), REF)
    m = CoverageWeights.merge([a, a], REF)
    assert m.fractions.tolist() == [2.0]


def test_weighted_extract_skips_nodata():
    vals = np.arange(REF.nrows * REF.ncols, dtype=float).reshape(REF.shape)
    vals[19, 1] = NODATA
    g = Grid(REF, vals)
    w = coverage_weights(Polygon.rectangle(1000, 2000, 1020, 2010), REF)  # cells (19,0), (19,1)
    assert weighted_extract(w, g) == vals[19, 0]
    vals2 = vals.copy()
    vals2[19, 0] = NODATA
    assert weighted_extract(w, Grid(REF, vals2)) == NODATA


def test_majority_class_tie_goes_to_smaller_code():
    codes = np.full(REF.shape, 3)
    codes[19, 1] = 4
    cg = ClassGrid(REF, codes)
    w = coverage_weights(Polygon.rectangle(1005, 2000, 1015, 2010), REF)  # half and half
    assert majority_class(w, cg) == 3


def test_mask_subtract_summary():
    vals = np.full(REF.shape, 10.0)
    codes = np.full(REF.shape, 3)
    codes[0, :] = 1  # developed
    codes[1, :] = 0  # nodata
    g = Grid(REF, vals)
    m = mask_nonvegetated(g, ClassGrid(REF, codes))
    assert (m.values[0] == NODATA).all() and (m.values[1] == NODATA).all() and m.values[2, 0] == 10.0
    d = subtract(g, m)
    assert d.values[0, 0] == NODATA and d.values[5, 5] == 0.0
    s = class_summary(g, ClassGrid(REF, codes))
    assert s[3] == (10.0, 18 * 30)
    with pytest.raises(GridMismatch):
        subtract(g, Grid(GeoRef(20, 30, 0.0, 0.0, 10.0), vals))


def test_grid_io_roundtrip(tmp_path):
    vals = np.random.default_rng(0).normal(size=REF.shape)
    g = Grid(REF, vals).quantized()
    write_grid(tmp_path / "a", g)
    assert read_grid(tmp_path / "a.bin").equals(g)
    cg = ClassGrid(REF, np.full(REF.shape, 6))
    write_grid(tmp_path / "c", cg)
    back = read_grid(tmp_path / "c")
    assert isinstance(back, ClassGrid) and (back.values == 6).all()
    (tmp_path / "c.bin").write_bytes(b"\0" * 12)
    with pytest.raises(DataError):
        read_grid(tmp_path / "c")


def test_wkt_roundtrip_is_exact():
    poly = Polygon.regular(512345.678, 4012345.125, 1234.5, 7)
    back = parse_wkt_polygon(poly.to_wkt())
    assert all(np.array_equal(a, b) for a, b in zip(poly.rings, back.rings))
    with pytest.raises(DataError):
        parse_wkt_polygon("POLYGON ((0 0, 1 x, 1 1, 0 0))")
    with pytest.raises(DataError):
        parse_wkt_polygon("LINESTRING (0 0, 1 1)")


def test_polygon_validation():
    with pytest.raises(ValueError):
        Polygon(([(0, 0), (1, 0), (1, 1)],))
    assert Polygon.regular(0, 0, 1, 6).area == pytest.approx(3 * math.sqrt(3) / 2)
