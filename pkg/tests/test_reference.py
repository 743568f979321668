import math

import numpy as np
import pytest

from forestagb.errors import ConfigError, MissingYearStack
from forestagb.grid import NODATA, ClassGrid, GeoRef, Grid
from forestagb.reference import (
    PixelSample,
    PlotRecord,
    Predictor,
    PredictorSchema,
    TrainingTable,
    assemble_table,
    build_footprint,
    expand_categorical,
    read_lidar_samples,
    read_plots,
    reference_schema,
    write_lidar_samples,
    write_plots,
)

REF = GeoRef(40, 40, 0.0, 0.0, 30.0)
SCHEMA = PredictorSchema((Predictor("A"), Predictor("B"), Predictor("LC", "categorical", (3, 4, 6))))


def _stack(a=None):
    a = np.arange(1600, dtype=float).reshape(40, 40) if a is None else a
    return {"A": Grid(REF, a), "B": Grid(REF, np.full(REF.shape, 2.5)),
            "LC": ClassGrid(REF, np.full(REF.shape, 4))}


def test_footprint_geometry():
    fp = build_footprint(PlotRecord("p", 2015, 600.0, 600.0, 100.0))
    c = np.array(fp.centers)
    assert c[0].tolist() == [600.0, 600.0]
    d = np.hypot(c[1:, 0] - 600, c[1:, 1] - 600)
    np.testing.assert_allclose(d, 36.6, rtol=1e-12)
    assert c[1, 0] == pytest.approx(600.0) and c[1, 1] == pytest.approx(636.6)  # due north
    w = fp.weights(REF)
    # four disjoint subplots of radius 7.32 m
    area = w.covered_area(REF.cellsize)
    poly_area = sum(p.area for p in fp.polygons())
    assert area == pytest.approx(poly_area, rel=1e-12)
    assert poly_area == pytest.approx(4 * math.pi * 7.32 ** 2, rel=1e-2)


def test_plot_record_validation():
    with pytest.raises(ValueError):
        PlotRecord("p", 2015, 0, 0, -1.0)
    with pytest.raises(ValueError):
        PlotRecord("p", 2015, 0, 0, 5.0, true_zero=True)
    with pytest.raises(ValueError):
        PlotRecord("p", 2015, 0, 0, 5.0, panel=6)


def test_schema_expansion_and_hash():
    assert SCHEMA.feature_names == ["A", "B", "LC=3", "LC=4", "LC=6"]
    assert PredictorSchema.from_json(SCHEMA.to_json()).schema_hash == SCHEMA.schema_hash
    np.testing.assert_array_equal(expand_categorical(np.array([4, 6]), (3, 4, 6)), [[0, 1, 0], [0, 0, 1]])
    with pytest.raises(ConfigError):
        PredictorSchema((Predictor("A"), Predictor("A")))
    with pytest.raises(ConfigError):
        Predictor("LC", "categorical", (1,))
    full = reference_schema()
    assert len(full.predictors) == 29


def test_assemble_plots_and_pixels():
    stack = _stack()
    plots = [PlotRecord("p1", 2015, 600.0, 600.0, 120.0), PlotRecord("p2", 2015, 1.0, 1.0, 50.0),
             PlotRecord("p3", 2015, -500.0, -500.0, 50.0)]
    t = assemble_table(plots, {2015: stack}, SCHEMA)
    # p2 hangs over the edge and keeps its covered part; p3 misses the grid
    assert t.n == 2 and [d.record_id for d in t.dropped] == ["p3"]
    # only the centre and north subplots land on the grid: cells (39, 0) = 1560 and (38, 0) = 1520
    assert 1520.0 < t.X[1, 0] < 1560.0
    assert t.X[0, 1] == 2.5 and t.X[0, 2:].tolist() == [0.0, 1.0, 0.0]
    px = [PixelSample("s1", 2015, 45.0, 1185.0, 80.0)]  # row 0, col 1
    tp = assemble_table(px, {2015: stack}, SCHEMA)
    assert tp.X[0, 0] == 1.0 and tp.source[0] == "lidar_pixel"
    with pytest.raises(MissingYearStack):
        assemble_table(px, {2016: stack}, SCHEMA)


def test_assemble_drops_nodata_and_unknown_class():
    a = np.arange(1600, dtype=float).reshape(40, 40)
    a[20, 20] = NODATA
    stack = _stack(a)
    x, y = REF.cell_center(20, 20)
    t = assemble_table([PixelSample("s", 2015, float(x), float(y), 1.0)], {2015: stack}, SCHEMA)
    assert t.n == 0 and "nodata" in t.dropped[0].reason
    stack["LC"] = ClassGrid(REF, np.full(REF.shape, 5))
    t = assemble_table([PixelSample("s", 2015, 45.0, 45.0, 1.0)], {2015: stack}, SCHEMA)
    assert "not among declared levels" in t.dropped[0].reason


def test_assemble_thread_count_invariant():
    stack = _stack()
    rng = np.random.default_rng(0)
    plots = [PlotRecord(f"p{i}", 2015, *rng.uniform(100, 1100, 2), 10.0) for i in range(20)]
    a = assemble_table(plots, {2015: stack}, SCHEMA, 1)
    b = assemble_table(plots, {2015: stack}, SCHEMA, 4)
    assert np.array_equal(a.X, b.X)


def test_csv_roundtrips(tmp_path):
    plots = [PlotRecord("p1", 2015, 1.25, 2.5, 0.0, False, True, 3)]
    write_plots(tmp_path / "p.csv", plots)
    assert read_plots(tmp_path / "p.csv") == plots
    px = [PixelSample("s", 2016, 3.0, 4.0, 5.5)]
    write_lidar_samples(tmp_path / "s.csv", px)
    assert read_lidar_samples(tmp_path / "s.csv") == px
    t = TrainingTable.from_arrays(np.array([[0.1, 1 / 3]]), [7.0])
    t.write_csv(tmp_path / "t.csv")
    back = TrainingTable.read_csv(tmp_path / "t.csv")
    assert np.array_equal(back.X, t.X) and back.feature_names == t.feature_names
