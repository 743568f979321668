"""Run configuration and the end-to-end pipeline.

Stages run in order: load, sample, assemble, split, tune (optional), stack,
predict, assess, summarize, report. Every file written is listed in
``manifest.json`` with its sha256; the manifest holds no timestamps, so a
rerun with the same inputs and config reproduces it byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import _kernels
from . import rng as rngmod
from .agreement import (
    CLASS_COLUMNS,
    HEX_COLUMNS,
    REPORT_COLUMNS,
    SMALL_AREA_COLUMNS,
    EvalPairs,
    metrics,
    read_small_area_hexes,
    riemann_assessment,
    small_area_comparison,
    write_csv,
)
from .errors import ConfigError, ForestAGBError, MissingYearSurface, PipelineError
from .grid import NODATA, Grid, mask_nonvegetated, read_grid, write_grid
from .learners import PARAM_TYPES, save_model
from .learners.base import params_from_json
from .reference import PredictorSchema, assemble_table, read_lidar_samples, read_plots
from .report import emit_report, write_pairs
from .sampling import SplitSpec, StratifiedSampleSpec, partition_panels, stratified_sample, train_test_split, write_samples
from .stacking import AveragedEnsemble, ComponentSpec, TuneGrid, grid_search, loo_stack, write_cv_table
from .surface import (
    SERIES_COLUMNS,
    TRAJECTORY_COLUMNS,
    annual_series,
    polygon_trajectory,
    predict_surface,
    read_polygons,
    read_stacks,
    stock_change,
    write_rows,
)

log = logging.getLogger(__name__)

APPROACHES = ("direct", "indirect", "ensemble")
DEFAULT_SCALES = (20_000.0, 30_000.0, 50_000.0)

# component sets per approach; hyperparameters sized for desk-scale worlds
DEFAULT_COMPONENTS = {
    "direct": [
        {"kind": "rf", "params": {"num_trees": 200, "mtry": 4, "min_node_size": 2,
                                  "sample_fraction": 0.85, "replace": True}},
        {"kind": "gbm", "params": {"learning_rate": 0.05, "num_rounds": 100, "num_leaves": 16,
                                   "max_depth": 24, "extra_trees": True, "min_data_in_leaf": 16,
                                   "bagging_fraction": 0.8, "bagging_freq": 6, "feature_fraction": 0.8,
                                   "min_data_in_bin": 14, "l1": 0.1, "l2": 0.1}},
        {"kind": "svr", "params": {"sigma": 0.1, "c": 36.0, "epsilon": 0.0441942}},
    ],
    "indirect": [
        {"kind": "rf", "params": {"num_trees": 100, "mtry": 4, "min_node_size": 3,
                                  "sample_fraction": 1.0, "replace": False}},
        {"kind": "gbm", "params": {"learning_rate": 0.1, "num_rounds": 200, "num_leaves": 43,
                                   "max_depth": 24, "extra_trees": True, "min_data_in_leaf": 3,
                                   "bagging_fraction": 1.0, "bagging_freq": 5, "feature_fraction": 0.7,
                                   "min_data_in_bin": 15, "l1": 8.0, "l2": 5.0}},
    ],
}


@dataclass
class MemberConfig:
    components: list  # [{"kind": ..., "params": {...}}]
    holdout: str | int = "loo"  # "loo" or a fold count for out-of-fold stacking
    tune: dict = field(default_factory=dict)  # kind -> TuneGrid json


@dataclass
class RunConfig:
    stack_dir: str
    lcmap_dir: str
    plots_csv: str
    schema: str
    out_dir: str
    approach: str = "ensemble"
    lidar_csv: str | None = None
    lidar_surface: str | None = None
    lidar_year: int | None = None
    small_area_csv: str | None = None
    small_area_year: int | None = None
    polygons_csv: str | None = None
    years: list | None = None
    direct: MemberConfig | None = None
    indirect: MemberConfig | None = None
    sample: dict = field(default_factory=lambda: {"n_strata": 20, "per_stratum": 1000})
    split: dict = field(default_factory=lambda: {"assessment_panel": "random", "train_fraction": 0.8})
    scales: list = field(default_factory=lambda: list(DEFAULT_SCALES))
    seed: int = 0
    boot_iters: int = 1000
    n_jobs: int = 1
    cap: float | None = None

    @property
    def members(self) -> list[str]:
        return ["direct", "indirect"] if self.approach == "ensemble" else [self.approach]

    def validate(self) -> None:
        if self.approach not in APPROACHES:
            raise ConfigError(f"approach must be one of {APPROACHES}")
        for m in self.members:
            if getattr(self, m) is None:
                raise ConfigError(f"approach {self.approach!r} needs a {m!r} member config")
            mc = getattr(self, m)
            if not mc.components:
                raise ConfigError(f"{m} member has no components")
            for c in mc.components:
                if c.get("kind") not in PARAM_TYPES:
                    raise ConfigError(f"unknown component kind {c.get('kind')!r}")
            if mc.holdout != "loo" and not (isinstance(mc.holdout, int) and mc.holdout >= 2):
                raise ConfigError("holdout must be 'loo' or a fold count >= 2")
        for name in ("stack_dir", "lcmap_dir", "plots_csv", "schema"):
            if not Path(getattr(self, name)).exists():
                raise ConfigError(f"{name} does not exist: {getattr(self, name)}")
        if "indirect" in self.members:
            if self.lidar_surface is None and self.lidar_csv is None:
                raise ConfigError("the indirect approach needs lidar_surface or lidar_csv")
            if self.lidar_surface is not None and not Path(self.lidar_surface).with_suffix(".json").exists():
                raise ConfigError(f"lidar_surface does not exist: {self.lidar_surface}")
            if self.lidar_surface is None and not Path(self.lidar_csv).exists():
                raise ConfigError(f"lidar_csv does not exist: {self.lidar_csv}")
            if self.lidar_surface is not None and self.lidar_year is None:
                raise ConfigError("lidar_surface needs lidar_year")
        for name in ("small_area_csv", "polygons_csv"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{name} does not exist: {p}")
        if not self.scales or any(not float(s) > 0 for s in self.scales):
            raise ConfigError("scales must be positive spacings in metres")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, doc: dict, base_dir=None) -> "RunConfig":
        doc = dict(doc)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names - {"world_dir"}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        world = doc.pop("world_dir", None)
        if world is not None:
            for k, v in world_paths(world).items():
                doc.setdefault(k, v)
        for m in ("direct", "indirect"):
            if isinstance(doc.get(m), dict):
                doc[m] = MemberConfig(**doc[m])
        missing = [k for k in ("stack_dir", "lcmap_dir", "plots_csv", "schema", "out_dir") if k not in doc]
        if missing:
            raise ConfigError(f"config is missing {missing}")
        if base_dir is not None:
            for k in ("stack_dir", "lcmap_dir", "plots_csv", "schema", "out_dir", "lidar_csv",
                      "lidar_surface", "small_area_csv", "polygons_csv"):
                if doc.get(k) is not None and not Path(doc[k]).is_absolute():
                    doc[k] = str(Path(base_dir) / doc[k])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(doc, base_dir=Path(path).parent)

    def result_fields(self) -> dict:
        """Config minus fields that cannot change any output byte."""
        doc = self.to_json()
        for k in ("out_dir", "n_jobs"):
            doc.pop(k)
        return doc

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.result_fields(), sort_keys=True).encode()).hexdigest()


def world_paths(world_dir) -> dict:
    """Config paths for a directory written by the synthetic-world generator."""
    w = Path(world_dir)
    out = {
        "stack_dir": str(w / "stacks"),
        "lcmap_dir": str(w / "lcmap"),
        "plots_csv": str(w / "plots.csv"),
        "schema": str(w / "schema.json"),
        "lidar_csv": str(w / "lidar_samples.csv"),
    }
    meta_p = w / "world.json"
    if meta_p.exists():
        meta = json.loads(meta_p.read_text())
        ly = meta.get("lidar_year")
        if ly is not None:
            out["lidar_surface"] = str(w / "lidar" / f"lidar_agb_{ly}")
            out["lidar_year"] = ly
    if (w / "small_area_hexes.csv").exists():
        out["small_area_csv"] = str(w / "small_area_hexes.csv")
    if (w / "disturbances.csv").exists():
        out["polygons_csv"] = str(w / "disturbances.csv")
    return out


def desk_config(world_dir, out_dir, approach: str = "ensemble", seed: int = 0) -> RunConfig:
    """Defaults sized for a synthetic world: 20 strata of 100 LiDAR samples,
    exact leave-one-out stacking for the plot-based member and 10-fold
    out-of-fold stacking for the LiDAR-based member."""
    doc = {
        "world_dir": str(world_dir),
        "out_dir": str(out_dir),
        "approach": approach,
        "direct": {"components": [dict(c) for c in DEFAULT_COMPONENTS["direct"]], "holdout": "loo"},
        "indirect": {"components": [dict(c) for c in DEFAULT_COMPONENTS["indirect"]], "holdout": 10},
        "sample": {"n_strata": 20, "per_stratum": 100},
        "seed": seed,
    }
    return RunConfig.from_json(doc)


# ---------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Run:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.outputs: list[Path] = []
        self.seeds: dict = {}
        self.notes: dict = {}

    def seed(self, label: str) -> int:
        s = rngmod.derive_seed(self.cfg.seed, label)
        self.seeds[label] = s
        return s

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def wrote(self, *paths) -> None:
        for p in paths:
            p = Path(p)
            if p.suffix == "" or p.suffix == ".bin":
                self.outputs.extend([p.with_suffix(".bin"), p.with_suffix(".json")])
            else:
                self.outputs.append(p)

    def manifest(self, status: str, failed_stage: str | None = None) -> Path:
        files = {}
        for p in sorted(set(self.outputs)):
            if p.exists():
                files[str(p.relative_to(self.out))] = sha256_file(p)
        doc = {
            "format": "forestagb-manifest",
            "status": status,
            "failed_stage": failed_stage,
            "config_hash": self.cfg.config_hash(),
            "config": self.cfg.result_fields(),
            "seed": self.cfg.seed,
            "seeds": dict(sorted(self.seeds.items())),
            "versions": {"forestagb": __version__, "numpy": np.__version__,
                         "python": platform.python_version(), "kernels": _kernels.backend.NAME},
            "notes": self.notes,
            "outputs": files,
        }
        p = self.out / "manifest.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return p


def _components(member: str, mc: MemberConfig, run: _Run) -> list[ComponentSpec]:
    comps = []
    for k, c in enumerate(mc.components):
        kind = c["kind"]
        params = dict(c.get("params", {}))
        if "seed" in {f.name for f in dataclasses.fields(PARAM_TYPES[kind])}:
            params.setdefault("seed", run.seed(f"{member}:{kind}:{k}"))
        try:
            comps.append(ComponentSpec(kind, params_from_json(PARAM_TYPES[kind], params)))
        except (TypeError, ForestAGBError) as exc:
            raise ConfigError(f"{member} {kind} params: {exc}") from None
    return comps


def _surface_mean(a: Grid, b: Grid) -> Grid:
    ok = a.valid & b.valid
    return a.with_values(np.where(ok, (a.values + b.values) / 2.0, NODATA)).quantized()


def run_pipeline(cfg: RunConfig) -> dict:
    """Execute the configured run; returns {"manifest": path, ...}.

    A stage failure writes a manifest marked ``partial`` and raises
    PipelineError tagged with the stage name.
    """
    cfg.validate()
    run = _Run(cfg)
    run.out.mkdir(parents=True, exist_ok=True)
    stage = "load"
    try:
        schema = PredictorSchema.load(cfg.schema)
        stacks = read_stacks(cfg.stack_dir, schema, cfg.years)
        years = sorted(stacks)
        lcmap = {y: read_grid(Path(cfg.lcmap_dir) / f"lcmap_{y}") for y in years}
        plots = read_plots(cfg.plots_csv)

        stage = "split"
        split = SplitSpec(cfg.split.get("assessment_panel", "random"), cfg.split.get("train_fraction", 0.8),
                          run.seed("split"))
        panel = split.resolve_panel()
        run.notes["assessment_panel"] = panel
        dev, assess = partition_panels(plots, dataclasses.replace(split, assessment_panel=panel))
        run.notes["model_dev_plots"] = len(dev)
        run.notes["assessment_plots"] = len(assess)

        tables = {}
        if "direct" in cfg.members:
            stage = "assemble"
            t = assemble_table(dev, stacks, schema, cfg.n_jobs)
            run.notes["direct_rows_dropped"] = len(t.dropped)
            p = run.path("tables/direct_train.csv")
            t.write_csv(p)
            run.wrote(p)
            tables["direct"] = t
        if "indirect" in cfg.members:
            stage = "sample"
            if cfg.lidar_surface is not None:
                surf = read_grid(cfg.lidar_surface)
                spec = StratifiedSampleSpec(seed=run.seed("sample"), **cfg.sample)
                res = stratified_sample(surf, spec)
                run.notes["sample_shortfalls"] = {str(k): v for k, v in res.shortfalls.items()}
                p = run.path("tables/lidar_samples.csv")
                write_samples(p, res.samples)
                run.wrote(p)
                pixels = [s.as_pixel(cfg.lidar_year) for s in res.samples]
            else:
                pixels = read_lidar_samples(cfg.lidar_csv, cfg.lidar_year)
            stage = "assemble"
            full = assemble_table(pixels, stacks, schema, cfg.n_jobs)
            run.notes["indirect_rows_dropped"] = len(full.dropped)
            train, test = train_test_split(full, split)
            for name, t in (("indirect_train", train), ("indirect_test", test)):
                p = run.path(f"tables/{name}.csv")
                t.write_csv(p)
                run.wrote(p)
            tables["indirect"] = train
            tables["indirect_test"] = test

        models = {}
        for member in cfg.members:
            mc = getattr(cfg, member)
            comps = _components(member, mc, run)
            if mc.tune:
                stage = "tune"
                tuned = []
                for c in comps:
                    if c.kind not in mc.tune:
                        tuned.append(c)
                        continue
                    doc = dict(mc.tune[c.kind])
                    doc.setdefault("seed", run.seed(f"tune:{member}:{c.kind}"))
                    base = dataclasses.asdict(c.params)
                    doc["base"] = {**base, **doc.get("base", {})}
                    for k in doc["axes"]:
                        doc["base"].pop(k, None)
                    best, rows = grid_search(tables[member], TuneGrid.from_json(doc), c.kind, cfg.n_jobs)
                    p = run.path(f"tuning/{member}_{c.kind}_cv.csv")
                    write_cv_table(p, rows)
                    run.wrote(p)
                    tuned.append(ComponentSpec(c.kind, best))
                comps = tuned
            stage = "stack"
            folds = None if mc.holdout == "loo" else int(mc.holdout)
            ens = loo_stack(tables[member], comps, cfg.n_jobs, oof_folds=folds, seed=run.seed(f"stack:{member}"))
            models[member] = ens
            p = run.path(f"models/{member}.json")
            save_model(ens, p)
            run.wrote(*sorted(p.parent.glob(f"{member}*.json")))
        if cfg.approach == "ensemble":
            models["ensemble"] = AveragedEnsemble(models["direct"], models["indirect"])
            p = run.path("models/ensemble.json")
            models["ensemble"].save(p, {"direct": "direct.json", "indirect": "indirect.json"})
            run.wrote(p)

        if "indirect_test" in tables and tables["indirect_test"].n > 0:
            t = tables["indirect_test"]
            ms = metrics(EvalPairs(t.y, models["indirect"].predict(t)), cfg.boot_iters, run.seed("holdout-boot"))
            p = run.path("reports/indirect_holdout.csv")
            write_csv(p, ["model", *ms.as_dict()], [{"model": "indirect", **ms.as_dict()}])
            run.wrote(p)

        stage = "predict"
        surfaces: dict = {}
        for member in cfg.members:
            surfaces[member] = {}
            for y in years:
                g = predict_surface(models[member], stacks[y], schema)
                g = mask_nonvegetated(g, lcmap[y]).quantized()
                p = run.path(f"surfaces/{member}/agb_{y}")
                write_grid(p, g)
                run.wrote(p)
                surfaces[member][y] = g
        if cfg.approach == "ensemble":
            surfaces["ensemble"] = {}
            for y in years:
                g = _surface_mean(surfaces["direct"][y], surfaces["indirect"][y])
                p = run.path(f"surfaces/ensemble/agb_{y}")
                write_grid(p, g)
                run.wrote(p)
                surfaces["ensemble"][y] = g
        reported = list(surfaces)

        stage = "assess"
        scale_rows, class_rows, hex_rows, pair_rows = [], [], [], []
        boot_seed = run.seed("assess-boot")
        for name in reported:
            rep = riemann_assessment(assess, surfaces[name], lcmap, cfg.scales, model=name,
                                     boot_iters=cfg.boot_iters, seed=boot_seed)
            scale_rows += rep.scale_rows
            class_rows += rep.class_rows
            hex_rows += rep.hex_rows
            pair_rows += rep.pair_rows()
            run.notes[f"{name}_exclusions"] = rep.exclusions
        for rel, cols, rows in (("reports/agreement.csv", REPORT_COLUMNS, scale_rows),
                                ("reports/agreement_by_class.csv", CLASS_COLUMNS, class_rows),
                                ("reports/hex_residuals.csv", HEX_COLUMNS, hex_rows)):
            p = run.path(rel)
            write_csv(p, cols, rows)
            run.wrote(p)
        p = run.path("reports/agreement_pairs.csv")
        write_pairs(p, pair_rows)
        run.wrote(p)

        if cfg.small_area_csv is not None:
            hexes = read_small_area_hexes(cfg.small_area_csv)
            sa_year = cfg.small_area_year if cfg.small_area_year is not None else years[min(2, len(years) - 1)]
            primary = reported[-1]
            if sa_year not in surfaces[primary]:
                raise MissingYearSurface(sa_year)
            res = small_area_comparison(surfaces[primary][sa_year], lcmap[sa_year], hexes)
            p = run.path("reports/small_area.csv")
            write_csv(p, SMALL_AREA_COLUMNS, res.rows)
            run.wrote(p)
            run.notes["small_area"] = {"model": primary, "year": sa_year, "compared": res.n_compared,
                                       "inside_ci": res.n_inside, "percent_inside": res.percent_inside,
                                       "skipped": res.skipped}

        stage = "summarize"
        series = []
        for name in reported:
            series += [{"model": name, **r} for r in annual_series(surfaces[name], lcmap)]
        p = run.path("reports/series.csv")
        write_csv(p, ["model", *SERIES_COLUMNS], series)
        run.wrote(p)
        if len(years) > 1:
            for name in reported:
                d = stock_change(years[0], years[-1], surfaces[name])
                p = run.path(f"surfaces/{name}/diff_{years[0]}_{years[-1]}")
                write_grid(p, d)
                run.wrote(p)
        if cfg.polygons_csv is not None:
            traj = []
            for pid, poly in read_polygons(cfg.polygons_csv):
                for name in reported:
                    traj += [{"model": name, "polygon_id": pid, **r} for r in polygon_trajectory(poly, surfaces[name])]
            p = run.path("reports/trajectories.csv")
            write_rows(p, ["model", *TRAJECTORY_COLUMNS], traj)
            run.wrote(p)

        stage = "report"
        svgs = emit_report(run.out / "reports" / "agreement_pairs.csv", run.out / "reports" / "figures", cfg.cap)
        run.wrote(*svgs)
    except ForestAGBError as exc:
        run.manifest("partial", stage)
        raise PipelineError(stage, exc) from exc
    manifest = run.manifest("complete")
    return {"manifest": manifest, "models": models, "surfaces": surfaces, "out_dir": run.out}
