"""Command-line entry point: ``countyir <subcommand> [options]``.

Configuration comes from a plain ``key = value`` file (``#`` starts a
comment) given with ``--config``; command-line flags override file values.
Relative paths in a config file are resolved against the file's directory.

Exit codes: 0 success, 1 runtime failure, 2 input or validation failure.
"""

from __future__ import annotations

import argparse
import os
import platform
import shutil
import sys
import tempfile
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as ds
from . import dual_model as dm
from . import harness
from . import regressors as reg
from . import report
from . import spatial as sp
from . import synth
from .errors import CountyIRError, InputError, ParameterError, StageError

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2
MANIFEST_NAME = "run_manifest.txt"
# manifest lines under these prefixes are records, not settings
RECORD_PREFIXES = ("derived.", "version.", "result.")
PATH_KEYS = ("counties", "taxonomy", "centroids", "adjacency", "geometry")


@dataclass
class RunConfig:
    counties: str | None = None
    taxonomy: str | None = None
    centroids: str | None = None
    adjacency: str | None = None
    geometry: str | None = None
    out: str = "out"
    model: str = "lasso"
    n_lambda: int = 100
    lambda_min_ratio: float = 1e-4
    knn_max_k: int = 30
    seed: int = 0
    min_female_pop: int = 10_000
    scheme: str = "invdist:100"
    permutations: int = 999
    alpha: float = 0.05
    threads: int = 1
    predictions: str = "final"
    paired_seeds: bool = False
    row_standardize: bool = True
    impute: bool = False
    tol: float = reg.DEFAULT_TOL
    max_sweeps: int = reg.DEFAULT_MAX_SWEEPS

    # settings that change how fast a run is, not what it produces
    EXECUTION_ONLY = ("threads", "out")

    def grid(self):
        if self.model in ("lasso", "ridge"):
            return harness.LambdaGrid(self.n_lambda, self.lambda_min_ratio)
        if self.model == "knn":
            return tuple(range(1, self.knn_max_k + 1))
        return None

    def validate(self, need=("counties", "taxonomy")) -> "RunConfig":
        for key in need:
            if getattr(self, key) is None:
                raise ParameterError(f"config key {key!r} is required")
        for key in PATH_KEYS:
            value = getattr(self, key)
            if value is not None and not Path(value).exists():
                raise ParameterError(f"{key} file not found: {value}")
        if not 0 < self.alpha < 1:
            raise ParameterError("alpha must lie in (0, 1)")
        if self.permutations < 99:
            raise ParameterError("permutations must be at least 99")
        if self.model not in reg.MODEL_KINDS:
            raise ParameterError(f"model must be one of {', '.join(reg.MODEL_KINDS)}")
        if self.predictions not in dm.PREDICTION_MODES:
            raise ParameterError("predictions must be 'final' or 'oof'")
        if self.threads < 1:
            raise ParameterError("threads must be positive")
        if self.min_female_pop < 0:
            raise ParameterError("min_female_pop must be nonnegative")
        sp.parse_scheme(self.scheme)
        return self

    def settings(self) -> dict[str, str]:
        """Result-determining settings as strings (execution-only keys omitted)."""
        out = {}
        for f in fields(self):
            if f.name in self.EXECUTION_ONLY:
                continue
            out[f.name] = _to_text(getattr(self, f.name))
        return out


def _to_text(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(name, text):
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise ParameterError(f"unknown config key {name!r}")
    kind = str(types[name])
    text = text.strip()
    if "None" in kind and text == "":
        return None
    try:
        if kind.startswith("bool"):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise ParameterError(f"config key {name!r}: cannot parse {text!r}") from None
    return text


def parse_config_file(path) -> dict[str, object]:
    """Parse a ``key = value`` file into typed settings.

    Manifest record lines (``derived.*``, ``version.*``, ``result.*``) are
    skipped, so a run manifest can be fed back as a config.
    """
    path = Path(path)
    if not path.exists():
        raise ParameterError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith(RECORD_PREFIXES):
            continue
        value = _coerce(key, value)
        if key in PATH_KEYS and value:
            value = str((path.parent / value).resolve())
        values[key] = value
    return values


def build_config(args) -> RunConfig:
    values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = str(Path(v).resolve()) if f.name in PATH_KEYS else v
    return RunConfig(**values)


# -- loading ---------------------------------------------------------------------------


@dataclass
class Inputs:
    table: ds.CountyTable  # after the population filter
    full_table: ds.CountyTable
    taxonomy: ds.FeatureTaxonomy
    centroids: dict | None
    adjacency: list | None
    geometry: dict | None


def load_inputs(cfg: RunConfig) -> Inputs:
    table = ds.load_county_table(cfg.counties, allow_missing=cfg.impute)
    taxonomy = ds.load_taxonomy(cfg.taxonomy)
    taxonomy = ds.align_taxonomy(taxonomy, table.feature_names)
    table = ds.align_table(table, taxonomy)
    known = set(table.fips)
    centroids = sp.load_centroids(cfg.centroids) if cfg.centroids else None
    adjacency = None
    if cfg.adjacency:
        adjacency = sp.load_adjacency(cfg.adjacency)
        for a, b in adjacency:
            if a not in known or b not in known:
                raise sp.UnknownIdError(f"adjacency edge ({a}, {b}) references unknown fips")
    geometry = report.load_geojson(cfg.geometry) if cfg.geometry else None
    kept = ds.filter_by_female_population(table, cfg.min_female_pop)
    return Inputs(kept, table, taxonomy, centroids, adjacency, geometry)


def weights_for(cfg: RunConfig, inputs: Inputs) -> sp.SpatialWeights:
    scheme = sp.parse_scheme(cfg.scheme)
    ids = inputs.table.fips
    if scheme.kind == "contiguity":
        if inputs.adjacency is None:
            raise ParameterError("contiguity scheme needs an adjacency file")
        keep = set(ids)
        edges = [(a, b) for a, b in inputs.adjacency if a in keep and b in keep]
        return sp.build_weights(scheme, ids, adjacency=edges)
    if inputs.centroids is None:
        raise ParameterError(f"{scheme.kind} scheme needs a centroids file")
    return sp.build_weights(scheme, ids, centroids=inputs.centroids)


# -- subcommands ---------------------------------------------------------------------------


def _say(msg):
    print(msg, flush=True)


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr, flush=True)


def cmd_validate(cfg: RunConfig) -> int:
    cfg.validate()
    inputs = load_inputs(cfg)
    n_nm, n_mod, n_exp = inputs.taxonomy.counts()
    _say(f"counties: {len(inputs.full_table.fips)} loaded, {len(inputs.table.fips)} "
         f"with female population > {cfg.min_female_pop}")
    _say(f"features: {len(inputs.taxonomy.names)} total, {n_nm} non-modifiable, "
         f"{n_mod} modifiable, {n_exp} expert")
    if inputs.centroids is not None:
        missing = [f for f in inputs.full_table.fips if f not in inputs.centroids]
        if missing:
            raise sp.UnknownIdError(f"no centroid for fips {missing[0]}")
        _say(f"centroids: {len(inputs.centroids)}")
    if inputs.adjacency is not None:
        _say(f"adjacency edges: {len(inputs.adjacency)}")
    if inputs.geometry is not None:
        _say(f"geometry features: {len(inputs.geometry['features'])}")
    if cfg.centroids or cfg.adjacency:
        w = weights_for(cfg, inputs)
        _say(f"weights ({w.scheme}): {len(w.isolates)} isolates")
    _say("ok")
    return EXIT_OK


class _Staging:
    """Collects outputs in a scratch directory and moves them in on success."""

    def __init__(self, out):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=self.out))
        self.names: list[str] = []

    def path(self, name) -> Path:
        self.names.append(name)
        return self.tmp / name

    def commit(self):
        for name in self.names:
            if (self.tmp / name).exists():
                os.replace(self.tmp / name, self.out / name)
        shutil.rmtree(self.tmp, ignore_errors=True)

    def discard(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError as exc:
        raise StageError(f"{name}: {exc.stage}", exc.cause) from exc
    except CountyIRError as exc:
        raise StageError(name, exc) from exc


def _write_manifest(path, cfg: RunConfig, records: dict[str, object]):
    lines = ["# countyir run manifest; pass back with --config to reproduce"]
    lines += [f"{k} = {v}" for k, v in cfg.settings().items()]
    lines += [f"{k} = {_to_text(v)}" for k, v in records.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _versions():
    return {
        "version.countyir": __version__,
        "version.numpy": np.__version__,
        "version.python": platform.python_version(),
    }


def _lisa_stage(name, values, w, cfg, seed, stage):
    try:
        return _stage(stage, sp.permutation_inference, values, w, cfg.permutations, seed,
                      cfg.alpha, cfg.threads, cfg.row_standardize)
    except StageError as exc:
        if isinstance(exc.cause, sp.DegenerateError):
            _warn(f"{name} field is constant; {stage} skipped")
            return None
        raise


def cmd_pipeline(cfg: RunConfig) -> int:
    cfg.validate(need=("counties", "taxonomy"))
    if cfg.model not in reg.LINEAR_KINDS:
        raise ParameterError("pipeline needs a linear model kind (coefficient files)")
    inputs = _stage("load", load_inputs, cfg)
    table, taxonomy = inputs.table, inputs.taxonomy
    w = _stage("weights", weights_for, cfg, inputs)
    stage = _Staging(cfg.out)
    try:
        s1, s2 = dm.model_seeds(cfg.seed, cfg.paired_seeds)
        opts = dict(tol=cfg.tol, max_sweeps=cfg.max_sweeps, impute=cfg.impute)
        grid = cfg.grid()
        cv1 = _stage("cv model1", harness.nested_cv_evaluate, table, taxonomy, "non_modifiable_only",
                     cfg.model, grid, s1, n_jobs=cfg.threads, **opts)
        cv2 = _stage("cv model2", harness.nested_cv_evaluate, table, taxonomy, "all", cfg.model,
                     grid, s2, n_jobs=cfg.threads, **opts)
        harness.write_cv_report({"model1": cv1, "model2": cv2}, stage.path("cv_report.csv"))
        harness.write_fold_plan(cv1.plan, table.fips, stage.path("fold_plan_model1.csv"))
        harness.write_fold_plan(cv2.plan, table.fips, stage.path("fold_plan_model2.csv"))

        f1 = _stage("fit model1", harness.fit_final_model, table, taxonomy, "non_modifiable_only",
                    cfg.model, grid, s1, **opts)
        f2 = _stage("fit model2", harness.fit_final_model, table, taxonomy, "all", cfg.model,
                    grid, s2, **opts)
        reg.write_linear_model(f1.model, stage.path("model1.coef"))
        reg.write_linear_model(f2.model, stage.path("model2.coef"))

        if cfg.predictions == "final":
            dual = dm.dual_predictions(table, dm.DualFit(f1, f2))
        else:
            dual = dm.dual_from_cv(table, cv1, cv2)
        dm.write_dual_results(dual, stage.path("dual_results.csv"))

        seed_res = harness.derive_seed(cfg.seed, 30, 1)
        seed_imp = harness.derive_seed(cfg.seed, 30, 2)
        lisa_res = _lisa_stage("residual", sp.align_values(dual.fips, dual.residual, w), w, cfg,
                               seed_res, "lisa residual")
        if lisa_res is not None:
            sp.write_lisa(lisa_res, stage.path("lisa_residual.csv"))
        lisa_imp = None
        if len(taxonomy.modifiable) == 0:
            _warn("no modifiable features; impact is identically zero, lisa impact skipped")
        else:
            lisa_imp = _lisa_stage("impact", sp.align_values(dual.fips, dual.impact, w), w, cfg,
                                   seed_imp, "lisa impact")
            if lisa_imp is not None:
                sp.write_lisa(lisa_imp, stage.path("lisa_impact.csv"))

        if inputs.geometry is not None:
            cols = {"observed": dual.observed, "pred1": dual.pred1, "pred2": dual.pred2,
                    "residual": dual.residual, "impact": dual.impact}
            if lisa_res is not None:
                cols["residual_class"] = _classes_for(dual.fips, lisa_res)
            if lisa_imp is not None:
                cols["impact_class"] = _classes_for(dual.fips, lisa_imp)
            joined = report.export_geojson(inputs.geometry, report.columns_to_rows(dual.fips, **cols))
            if joined.unmatched:
                _warn(f"{joined.warning_count} geometry features have no results")
            report.write_geojson(joined.geojson, stage.path("results.geojson"))
            for col in ("residual_class", "impact_class"):
                if col in cols:
                    report.render_choropleth_svg(joined.geojson, col,
                                                 path=stage.path(f"map_{col}.svg"))

        records = {
            "derived.seed.model1": s1,
            "derived.seed.model2": s2,
            "derived.seed.model1_outer_folds": harness.derive_seed(s1, 0),
            "derived.seed.model2_outer_folds": harness.derive_seed(s2, 0),
            "derived.seed.model1_final_inner": harness.derive_seed(s1, 2),
            "derived.seed.model2_final_inner": harness.derive_seed(s2, 2),
            "derived.seed.lisa_residual": seed_res,
            "derived.seed.lisa_impact": seed_imp,
            "derived.n_counties": len(table.fips),
            "derived.lambda.model1": f1.hyper,
            "derived.lambda.model2": f2.hyper,
            "result.lisa_impact": "written" if lisa_imp is not None else "skipped",
            **_versions(),
        }
        _write_manifest(stage.path(MANIFEST_NAME), cfg, records)
    except BaseException:
        stage.discard()
        raise
    stage.commit()
    _say(f"model1 CV mse {cv1.mean['mse']:.4g}, model2 CV mse {cv2.mean['mse']:.4g}")
    if lisa_res is not None:
        _say(f"unexpectedly high: {len(lisa_res.members('HH'))}, "
             f"unexpectedly low: {len(lisa_res.members('LL'))}")
    _say(f"outputs written to {cfg.out}")
    return EXIT_OK


def _classes_for(fips, lisa):
    lookup = dict(zip(lisa.ids, lisa.cluster_class))
    return [str(lookup[f]) for f in fips]


def cmd_train(cfg: RunConfig, universe: str) -> int:
    cfg.validate()
    inputs = load_inputs(cfg)
    opts = dict(tol=cfg.tol, max_sweeps=cfg.max_sweeps, impute=cfg.impute)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cv = _stage("cv", harness.nested_cv_evaluate, inputs.table, inputs.taxonomy, universe,
                cfg.model, cfg.grid(), cfg.seed, n_jobs=cfg.threads, **opts)
    harness.write_cv_report({universe: cv}, out / "cv_report.csv")
    harness.write_fold_plan(cv.plan, inputs.table.fips, out / "fold_plan.csv")
    fit = _stage("final fit", harness.fit_final_model, inputs.table, inputs.taxonomy, universe,
                 cfg.model, cfg.grid(), cfg.seed, **opts)
    if isinstance(fit.model, reg.TrainedLinearModel):
        reg.write_linear_model(fit.model, out / "model.coef")
        _say(f"selected {len(reg.selected_variables(fit.model))} of {len(fit.model.feature_names)}")
    _say(f"CV mse {cv.mean['mse']:.4g} (sd {cv.std['mse']:.4g}), "
         f"r {cv.mean['pearson_corr']:.4g}")
    return EXIT_OK


def cmd_dual(cfg: RunConfig) -> int:
    cfg.validate()
    inputs = load_inputs(cfg)
    opts = dict(tol=cfg.tol, max_sweeps=cfg.max_sweeps, impute=cfg.impute)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.predictions == "oof":
        s1, s2 = dm.model_seeds(cfg.seed, cfg.paired_seeds)
        cv1 = harness.nested_cv_evaluate(inputs.table, inputs.taxonomy, "non_modifiable_only",
                                         cfg.model, cfg.grid(), s1, n_jobs=cfg.threads, **opts)
        cv2 = harness.nested_cv_evaluate(inputs.table, inputs.taxonomy, "all", cfg.model,
                                         cfg.grid(), s2, n_jobs=cfg.threads, **opts)
        dual = dm.dual_from_cv(inputs.table, cv1, cv2)
    else:
        fit = dm.fit_dual_models(inputs.table, inputs.taxonomy, cfg.model, cfg.grid(), cfg.seed,
                                 cfg.paired_seeds, **opts)
        for k, model in enumerate(fit, start=1):
            if isinstance(model, reg.TrainedLinearModel):
                reg.write_linear_model(model, out / f"model{k}.coef")
        dual = dm.dual_predictions(inputs.table, fit)
    dm.write_dual_results(dual, out / "dual_results.csv")
    _say(f"{len(dual.fips)} counties; {int(np.sum(dual.residual < 0))} below expectation")
    return EXIT_OK


def cmd_lisa(cfg: RunConfig, values_path, column) -> int:
    cfg.validate(need=())
    for key in ("centroids", "adjacency"):
        if getattr(cfg, key) and not Path(getattr(cfg, key)).exists():
            raise ParameterError(f"{key} file not found")
    dual = dm.read_dual_results(values_path)
    centroids = sp.load_centroids(cfg.centroids) if cfg.centroids else None
    adjacency = sp.load_adjacency(cfg.adjacency) if cfg.adjacency else None
    scheme = sp.parse_scheme(cfg.scheme)
    if scheme.kind == "contiguity":
        if adjacency is None:
            raise ParameterError("contiguity scheme needs an adjacency file")
        w = sp.build_weights(scheme, dual.fips, adjacency=adjacency)
    else:
        if centroids is None:
            raise ParameterError(f"{scheme.kind} scheme needs a centroids file")
        w = sp.build_weights(scheme, dual.fips, centroids=centroids)
    values = getattr(dual, column)
    lisa = sp.permutation_inference(values, w, cfg.permutations, cfg.seed, cfg.alpha,
                                    cfg.threads, cfg.row_standardize)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sp.write_lisa(lisa, out / f"lisa_{column}.csv")
    _say(" ".join(f"{c}:{int(np.sum(lisa.cluster_class == c))}" for c in sp.CLASSES))
    return EXIT_OK


def _parse_cluster(text):
    try:
        r, c, radius, offset = text.split(",")
        return synth.PlantedCluster((int(r), int(c)), int(radius), float(offset))
    except ValueError:
        raise ParameterError(f"cluster must be row,col,radius,offset; got {text!r}") from None


def cmd_synth(args) -> int:
    config = synth.SynthConfig(
        rows=args.rows, cols=args.cols, spacing_km=args.spacing_km,
        n_non_modifiable=args.non_modifiable, n_modifiable=args.modifiable,
        noise_sd=args.noise_sd, clusters=tuple(_parse_cluster(c) for c in args.cluster),
        seed=args.seed if args.seed is not None else 0,
    )
    bundle = synth.generate_synthetic(config)
    paths = synth.write_bundle(bundle, args.out or "synth")
    cfg_path = Path(args.out or "synth") / "run.cfg"
    cfg_path.write_text(
        "\n".join(f"{k} = {paths[k].name}" for k in ("counties", "taxonomy", "centroids",
                                                      "adjacency", "geometry")) + "\n",
        encoding="utf-8",
    )
    _say(f"{config.n_counties} counties, {config.n_features} features written to {cfg_path.parent}")
    return EXIT_OK


def cmd_render(args) -> int:
    geometry = report.load_geojson(args.geometry)
    if args.table:
        joined = report.export_geojson(geometry, report.read_csv_table(args.table))
        if joined.unmatched:
            _warn(f"{joined.warning_count} geometry features have no matching row")
        doc = joined.geojson
        if args.geojson_out:
            report.write_geojson(doc, args.geojson_out)
    else:
        doc = geometry
    breaks = args.breaks
    if breaks not in ("auto", "class", "quantile"):
        breaks = [float(b) for b in breaks.split(",")]
    out = args.out or f"map_{args.column}.svg"
    report.render_choropleth_svg(doc, args.column, breaks=breaks, n_classes=args.classes,
                                 title=args.title, path=out)
    _say(f"wrote {out}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------------------


def _shared(p):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--alpha", type=float, help="significance level for LISA classes")
    p.add_argument("--permutations", type=int, help="conditional permutations per county")
    p.add_argument("--scheme", help="contiguity | band:<km> | invdist:<km>")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")


def _inputs(p):
    for key in PATH_KEYS:
        p.add_argument(f"--{key}", help=f"{key} file")
    p.add_argument("--model", choices=reg.MODEL_KINDS)
    p.add_argument("--min-female-pop", dest="min_female_pop", type=int)
    p.add_argument("--predictions", choices=dm.PREDICTION_MODES,
                   help="final all-data fits (default) or out-of-fold predictions")
    p.add_argument("--impute", action="store_const", const=True,
                   help="median-impute missing feature values within each training partition")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="countyir", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"countyir {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("validate", "check inputs and print counts"),
                            ("pipeline", "full run: CV, both models, residuals, impacts, LISA"),
                            ("dual", "fit both models and write dual_results.csv")):
        p = sub.add_parser(name, help=help_text)
        _shared(p)
        _inputs(p)

    p = sub.add_parser("train", help="nested CV and final fit on one feature universe")
    _shared(p)
    _inputs(p)
    p.add_argument("--universe", default="all", choices=ds.FEATURE_MODES)

    p = sub.add_parser("lisa", help="local Moran's I on a dual_results.csv column")
    _shared(p)
    p.add_argument("--centroids")
    p.add_argument("--adjacency")
    p.add_argument("--values", required=True, help="dual_results.csv")
    p.add_argument("--column", default="residual", choices=("residual", "impact"))

    p = sub.add_parser("synth", help="write a synthetic lattice bundle")
    _shared(p)
    p.add_argument("--rows", type=int, default=10)
    p.add_argument("--cols", type=int, default=10)
    p.add_argument("--spacing-km", dest="spacing_km", type=float, default=25.0)
    p.add_argument("--non-modifiable", dest="non_modifiable", type=int, default=6)
    p.add_argument("--modifiable", type=int, default=4)
    p.add_argument("--noise-sd", dest="noise_sd", type=float, default=5.0)
    p.add_argument("--cluster", action="append", default=[], help="row,col,radius,offset")

    p = sub.add_parser("render", help="join a CSV into GeoJSON and draw an SVG map")
    _shared(p)
    p.add_argument("--geometry", required=True)
    p.add_argument("--table", help="CSV with a fips column")
    p.add_argument("--column", required=True)
    p.add_argument("--breaks", default="auto", help="auto | class | quantile | b1,b2,...")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--title")
    p.add_argument("--geojson-out", dest="geojson_out")
    return parser


def _dispatch(args) -> int:
    if args.command == "synth":
        return cmd_synth(args)
    if args.command == "render":
        return cmd_render(args)
    cfg = build_config(args)
    if args.command == "validate":
        return cmd_validate(cfg)
    if args.command == "pipeline":
        return cmd_pipeline(cfg)
    if args.command == "train":
        return cmd_train(cfg, args.universe)
    if args.command == "dual":
        return cmd_dual(cfg)
    if args.command == "lisa":
        return cmd_lisa(cfg, args.values, args.column)
    raise ParameterError(f"unknown command {args.command}")


def _is_input_failure(exc) -> bool:
    while isinstance(exc, StageError):
        exc = exc.cause
    return isinstance(exc, (InputError, FileNotFoundError, TypeError))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=harness.HarnessWarning)
            return _dispatch(args)
    except (CountyIRError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT if _is_input_failure(exc) else EXIT_RUNTIME
    except Exception as exc:  # anything unexpected is a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
