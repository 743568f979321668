"""Command-line interface.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, ForestAGBError

log = logging.getLogger("forestagb")


def _json_arg(text: str | None):
    """Inline JSON or @path/to/file.json."""
    if text is None:
        return None
    try:
        if text.startswith("@"):
            return json.loads(Path(text[1:]).read_text())
        return json.loads(text)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot parse JSON argument {text[:40]!r}: {exc}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _schema(args):
    from .reference import PredictorSchema

    return PredictorSchema.load(args.schema)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_gen(args) -> int:
    from .synth import SynthWorldSpec, synth_generate

    doc = _json_arg(args.spec) or {}
    if args.seed is not None:
        doc["seed"] = args.seed
    for key in ("n_plots", "nrows", "ncols", "n_years"):
        v = getattr(args, key)
        if v is not None:
            doc[key] = v
    world = synth_generate(SynthWorldSpec.from_json(doc), args.out)
    print(f"wrote world to {args.out}: {len(world.plots)} plots, {len(world.lidar_samples)} lidar samples, "
          f"years {world.years[0]}-{world.years[-1]}")
    return 0


def cmd_sample(args) -> int:
    from .grid import read_grid
    from .sampling import StratifiedSampleSpec, stratified_sample, write_samples

    spec = StratifiedSampleSpec(args.strata, args.per_stratum, args.lower, args.upper, args.seed,
                                "fail" if args.fail_underfilled else "take_all")
    res = stratified_sample(read_grid(args.surface), spec)
    write_samples(args.out, res.samples)
    print(f"{len(res)} samples -> {args.out}")
    for k, n in sorted(res.shortfalls.items()):
        print(f"stratum {k}: only {n} cells available")
    return 0


def cmd_assemble(args) -> int:
    from .reference import assemble_table, read_lidar_samples, read_plots
    from .surface import read_stacks

    schema = _schema(args)
    if args.kind == "plots":
        records = read_plots(args.records)
    else:
        records = read_lidar_samples(args.records, args.year)
    years = sorted({int(r.year) for r in records})
    stacks = read_stacks(args.stack_dir, schema, years)
    table = assemble_table(records, stacks, schema, args.threads)
    table.write_csv(args.out)
    print(f"{table.n} rows ({len(table.dropped)} dropped) -> {args.out}")
    return 0


def cmd_tune(args) -> int:
    import dataclasses

    from .reference import TrainingTable
    from .stacking import TuneGrid, grid_search, write_cv_table

    table = TrainingTable.read_csv(args.table)
    grid = TuneGrid.from_json(_json_arg(args.grid))
    best, rows = grid_search(table, grid, args.kind, args.threads)
    write_cv_table(args.out, rows)
    best_doc = dataclasses.asdict(best)
    if args.best_out:
        Path(args.best_out).write_text(json.dumps(best_doc, indent=2, sort_keys=True) + "\n")
    print(json.dumps(best_doc, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    from .learners import PARAM_TYPES, fit, load_model, save_model
    from .learners.base import params_from_json
    from .reference import TrainingTable
    from .stacking import AveragedEnsemble, ComponentSpec, loo_stack

    if args.average:
        d, i = (load_model(p) for p in args.average)
        save_model(AveragedEnsemble(d, i), args.out)
        print(f"averaged ensemble -> {args.out}")
        return 0
    if not args.table:
        raise ConfigError("train needs --table (or --average)")
    table = TrainingTable.read_csv(args.table)
    if args.components:
        comps = []
        for c in _json_arg(args.components):
            if c.get("kind") not in PARAM_TYPES:
                raise ConfigError(f"unknown component kind {c.get('kind')!r}")
            comps.append(ComponentSpec(c["kind"], params_from_json(PARAM_TYPES[c["kind"]], c.get("params", {}))))
        folds = None if args.holdout == "loo" else int(args.holdout)
        model = loo_stack(table, comps, args.threads, oof_folds=folds, seed=args.seed)
    elif args.kind:
        if args.kind not in PARAM_TYPES:
            raise ConfigError(f"unknown learner kind {args.kind!r}")
        params = params_from_json(PARAM_TYPES[args.kind], _json_arg(args.params) or {})
        model = fit(args.kind, table, params)
    else:
        raise ConfigError("train needs --components or --kind")
    save_model(model, args.out)
    print(f"{model.kind} model -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    from .grid import write_grid
    from .learners import load_model
    from .surface import predict_surface, read_stack

    schema = _schema(args)
    model = load_model(args.model)
    g = predict_surface(model, read_stack(args.stack_dir, args.year, schema), schema)
    write_grid(args.out, g.quantized())
    print(f"surface {args.year} -> {args.out}")
    return 0


def cmd_mask(args) -> int:
    from .grid import mask_nonvegetated, read_grid, write_grid

    g = mask_nonvegetated(read_grid(args.surface), read_grid(args.lcmap))
    write_grid(args.out, g)
    return 0


def cmd_diff(args) -> int:
    from .grid import write_grid
    from .surface import read_surfaces, stock_change

    surfaces = read_surfaces(args.surface_dir, args.prefix, [args.a, args.b])
    write_grid(args.out, stock_change(args.a, args.b, surfaces))
    print(f"{args.b} minus {args.a} -> {args.out}")
    return 0


def cmd_series(args) -> int:
    from .grid import read_grid
    from .surface import SERIES_COLUMNS, annual_series, read_surfaces, write_rows

    surfaces = read_surfaces(args.surface_dir, args.prefix)
    classes = {y: read_grid(Path(args.lcmap_dir) / f"lcmap_{y}") for y in surfaces}
    write_rows(args.out, SERIES_COLUMNS, annual_series(surfaces, classes))
    return 0


def cmd_trajectory(args) -> int:
    from .surface import TRAJECTORY_COLUMNS, polygon_trajectory, read_polygons, read_surfaces, write_rows

    surfaces = read_surfaces(args.surface_dir, args.prefix)
    rows = []
    for pid, poly in read_polygons(args.polygons):
        rows += [{"polygon_id": pid, **r} for r in polygon_trajectory(poly, surfaces)]
    write_rows(args.out, TRAJECTORY_COLUMNS, rows)
    return 0


def cmd_assess(args) -> int:
    from .agreement import riemann_assessment
    from .grid import read_grid
    from .reference import read_plots
    from .report import write_pairs
    from .surface import read_surfaces

    plots = read_plots(args.plots)
    if args.panel is not None:
        plots = [p for p in plots if p.panel == args.panel]
    years = sorted({int(p.year) for p in plots})
    surfaces = read_surfaces(args.surface_dir, args.prefix, years)
    classes = {y: read_grid(Path(args.lcmap_dir) / f"lcmap_{y}") for y in years} if args.lcmap_dir else None
    rep = riemann_assessment(plots, surfaces, classes, _floats(args.scales), args.model,
                             args.boot_iters, args.seed)
    paths = rep.write(args.out_dir)
    write_pairs(Path(args.out_dir) / "agreement_pairs.csv", rep.pair_rows())
    for k, v in sorted(rep.exclusions.items()):
        print(f"{k}: {v}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def cmd_small_area(args) -> int:
    from .agreement import SMALL_AREA_COLUMNS, read_small_area_hexes, small_area_comparison, write_csv
    from .grid import read_grid

    res = small_area_comparison(read_grid(args.surface), read_grid(args.lcmap),
                                read_small_area_hexes(args.hexes), args.min_inside)
    write_csv(args.out, SMALL_AREA_COLUMNS, res.rows)
    print(f"{res.n_inside}/{res.n_compared} hexagons inside the adjusted CI "
          f"({res.percent_inside:.1f}%); skipped {res.skipped}")
    return 0


def cmd_report(args) -> int:
    from .report import emit_report

    scales = [s.strip() for s in args.scales.split(",")] if args.scales else None
    for p in emit_report(args.pairs, args.out_dir, args.cap, scales):
        print(p)
    return 0


def cmd_run(args) -> int:
    from .pipeline import RunConfig, desk_config, run_pipeline

    if args.config:
        cfg = RunConfig.load(args.config)
    elif args.world:
        if not args.out:
            raise ConfigError("run --world needs --out")
        cfg = desk_config(args.world, args.out, args.approach or "ensemble")
    else:
        raise ConfigError("run needs --config or --world")
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.approach:
        cfg.approach = args.approach
    if args.threads:
        cfg.n_jobs = args.threads
    if args.cap is not None:
        cfg.cap = args.cap
    if args.boot_iters is not None:
        cfg.boot_iters = args.boot_iters
    res = run_pipeline(cfg)
    print(f"manifest -> {res['manifest']}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="forestagb", description="Forest biomass modeling, mapping and multi-scale agreement.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="WARNING")
    p.add_argument("--threads", type=int, default=1, help="global thread budget")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-gen", help="write a synthetic world")
    s.add_argument("--out", required=True)
    s.add_argument("--spec", help="SynthWorldSpec fields as JSON or @file")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-plots", dest="n_plots", type=int)
    s.add_argument("--nrows", type=int)
    s.add_argument("--ncols", type=int)
    s.add_argument("--n-years", dest="n_years", type=int)
    s.set_defaults(func=cmd_synth_gen)

    s = sub.add_parser("sample", help="stratified random sample of an AGB surface")
    s.add_argument("--surface", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--strata", type=int, default=20)
    s.add_argument("--per-stratum", type=int, default=1000)
    s.add_argument("--lower", type=float, default=0.0)
    s.add_argument("--upper", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fail-underfilled", action="store_true")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("assemble", help="extract predictors for plots or pixel samples")
    s.add_argument("--records", required=True)
    s.add_argument("--kind", choices=("plots", "lidar"), default="plots")
    s.add_argument("--year", type=int, help="year for lidar samples without a year column")
    s.add_argument("--stack-dir", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_assemble)

    s = sub.add_parser("tune", help="grid search with k-fold cross validation")
    s.add_argument("--table", required=True)
    s.add_argument("--kind", required=True, choices=("rf", "gbm", "svr"))
    s.add_argument("--grid", required=True, help="TuneGrid JSON or @file")
    s.add_argument("--out", required=True)
    s.add_argument("--best-out")
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("train", help="fit a learner or a stacked ensemble")
    s.add_argument("--table")
    s.add_argument("--components", help="[{kind, params}] JSON or @file: stacked ensemble")
    s.add_argument("--holdout", default="loo", help="'loo' or a fold count")
    s.add_argument("--kind", help="single learner kind")
    s.add_argument("--params", help="learner params JSON or @file")
    s.add_argument("--average", nargs=2, metavar=("DIRECT", "INDIRECT"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict an AGB surface for one year")
    s.add_argument("--model", required=True)
    s.add_argument("--stack-dir", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--year", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("mask", help="set non-vegetated cells to nodata")
    s.add_argument("--surface", required=True)
    s.add_argument("--lcmap", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mask)

    for name, fn, helptext in (("diff", cmd_diff, "stock change between two years (b minus a)"),
                               ("series", cmd_series, "annual mean AGB per vegetated class"),
                               ("trajectory", cmd_trajectory, "annual mean AGB inside polygons")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--surface-dir", required=True)
        s.add_argument("--prefix", default="agb_")
        s.add_argument("--out", required=True)
        if name == "diff":
            s.add_argument("--a", type=int, required=True)
            s.add_argument("--b", type=int, required=True)
        elif name == "series":
            s.add_argument("--lcmap-dir", required=True)
        else:
            s.add_argument("--polygons", required=True, help="CSV with polygon_id, wkt")
        s.set_defaults(func=fn)

    s = sub.add_parser("assess", help="plot:pixel and hexagon agreement")
    s.add_argument("--plots", required=True)
    s.add_argument("--surface-dir", required=True)
    s.add_argument("--prefix", default="agb_")
    s.add_argument("--lcmap-dir")
    s.add_argument("--panel", type=int, help="assess only plots of this panel")
    s.add_argument("--scales", default="20000,30000,50000", help="hex spacings in metres")
    s.add_argument("--model", default="ensemble")
    s.add_argument("--boot-iters", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_assess)

    s = sub.add_parser("small-area", help="compare with small-area estimates for hexagons")
    s.add_argument("--surface", required=True)
    s.add_argument("--lcmap", required=True)
    s.add_argument("--hexes", required=True)
    s.add_argument("--min-inside", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_small_area)

    s = sub.add_parser("report", help="SVG scatter plots from agreement pairs")
    s.add_argument("--pairs", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--cap", type=float, help="display cap in Mg/ha (render only)")
    s.add_argument("--scales", help="comma-separated scale labels, e.g. plot:pixel,50km")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run", help="full pipeline")
    s.add_argument("--config")
    s.add_argument("--world", help="synthetic world directory (desk-scale defaults)")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--approach", choices=("direct", "indirect", "ensemble"))
    s.add_argument("--cap", type=float)
    s.add_argument("--boot-iters", type=int)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ForestAGBError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
