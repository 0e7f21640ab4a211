"""Nested cross-validation with two-round variable selection.

Per outer fold, on the nine training folds:

1. grid search over an inner 10-fold split,
2. refit each inner training set at the winning hyperparameter and keep the
   variables selected in *every* inner fold,
3. add the expert-flagged variables of the active feature universe,
4. grid search again on the merged set, fit, and score the held-out fold.

Standardization and response centering are refit inside every training
partition. All randomness comes from seeds derived from one master seed, and
outer folds write into pre-allocated slots, so results do not depend on the
number of worker threads.
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import regressors as reg
from .dataset import (
    CountyTable,
    FeatureTaxonomy,
    Standardizer,
    apply_standardizer,
    fit_standardizer,
    resolve_feature_set,
)
from .errors import ParameterError, StageError

N_FOLDS = 10


class HarnessWarning(UserWarning):
    pass


def derive_seed(master: int, *keys: int) -> int:
    """Independent 63-bit seed for a work unit identified by ``keys``."""
    ss = np.random.SeedSequence([int(master), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class LambdaGrid:
    """Penalty grid resolved against the data it is searched on."""

    n_lambda: int = 100
    min_ratio: float = 1e-4

    def resolve(self, Z, y) -> np.ndarray:
        return reg.lambda_grid(reg.lambda_max(Z, y), self.n_lambda, self.min_ratio)


DEFAULT_KNN_GRID = tuple(range(1, 31))


@dataclass(frozen=True)
class FoldPlan:
    seed: int
    k: int
    assignments: np.ndarray
    inner: tuple[np.ndarray, ...] = ()

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()


def partition_folds(n: int, k: int = N_FOLDS, seed: int = 0) -> FoldPlan:
    """Seeded shuffle, then deal positions round-robin into ``k`` folds."""
    if k < 2:
        raise ParameterError("need at least 2 folds")
    if n < k:
        raise ParameterError(f"cannot split {n} rows into {k} folds")
    order = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = np.arange(n) % k
    return FoldPlan(seed=seed, k=k, assignments=assignments)


def nested_plan(n: int, seed: int, k_outer: int = N_FOLDS, k_inner: int = N_FOLDS) -> FoldPlan:
    outer = partition_folds(n, k_outer, derive_seed(seed, 0))
    inner = tuple(
        partition_folds(int(np.sum(outer.assignments != f)), k_inner, derive_seed(seed, 1, f)).assignments
        for f in range(k_outer)
    )
    return FoldPlan(seed=seed, k=k_outer, assignments=outer.assignments, inner=inner)


# -- hyperparameter grids -----------------------------------------------------------


def resolve_grid(kind: str, grid, X, y, impute=False) -> list:
    """Concrete hyperparameter values ordered from most to least regularized.

    ``grid`` may be a LambdaGrid (resolved on the standardized ``X``), an
    explicit sequence, or None for the kind's default.
    """
    if kind in ("ols", "bic"):
        return [None]
    if kind in ("lasso", "ridge"):
        if grid is None:
            grid = LambdaGrid()
        if isinstance(grid, LambdaGrid):
            Z = apply_standardizer(fit_standardizer(X, impute=impute), X) if len(X) >= 2 else X
            values = grid.resolve(Z, y)
        else:
            values = np.asarray(list(grid), dtype=float)
        if len(values) == 0:
            raise ParameterError("empty hyperparameter grid")
        if np.any(values < 0):
            raise ParameterError("penalties must be nonnegative")
        return [float(v) for v in sorted(values, reverse=True)]
    if kind == "knn":
        values = DEFAULT_KNN_GRID if grid is None else list(grid)
        if len(values) == 0:
            raise ParameterError("empty hyperparameter grid")
        return [int(v) for v in sorted(values, reverse=True)]
    raise ParameterError(f"unknown model kind {kind!r}")


# -- inner cross-validation core ---------------------------------------------------------


@dataclass
class InnerCV:
    hypers: list
    mse: np.ndarray  # (k_inner, n_grid)
    # per inner fold, per grid point: boolean selection mask (linear kinds only)
    selected: list[list[np.ndarray]] | None

    @property
    def mean_mse(self) -> np.ndarray:
        return self.mse.mean(axis=0)

    @property
    def best_index(self) -> int:
        # grid is ordered most-regularized first; argmin returns the first minimum
        return int(np.argmin(self.mean_mse))

    @property
    def best(self):
        return self.hypers[self.best_index]


def _inner_cv(kind, X, y, hypers, assignments, tol, max_sweeps, impute) -> InnerCV:
    k = int(assignments.max()) + 1
    mse = np.empty((k, len(hypers)))
    selected = [] if reg.supports_selection(kind) else None
    for t in range(k):
        tr = assignments != t
        va = ~tr
        std = fit_standardizer(X[tr], y[tr], impute=impute)
        Ztr = apply_standardizer(std, X[tr])
        Zva = apply_standardizer(std, X[va])
        ytr, yva = y[tr], y[va]
        masks = []
        if kind == "lasso":
            y_mean = float(ytr.mean())
            if Ztr.shape[1]:
                G, c, yy = reg._gram(Ztr, ytr - y_mean)
            beta = np.zeros(Ztr.shape[1])
            for g, lam in enumerate(hypers):
                if Ztr.shape[1]:
                    beta, _, _ = reg.lasso_path_solve(G, c, yy, lam, beta, tol, max_sweeps)
                r = yva - (y_mean + Zva @ beta)
                mse[t, g] = r @ r / len(r)
                masks.append(beta != 0.0)
        elif kind == "knn":
            model = reg.knn_fit(Ztr, ytr, max(hypers))
            d2 = (
                np.einsum("ij,ij->i", Zva, Zva)[:, None]
                - 2.0 * Zva @ Ztr.T
                + np.einsum("ij,ij->i", Ztr, Ztr)[None, :]
            )
            order = np.argsort(np.maximum(d2, 0.0), axis=1, kind="stable")[:, : max(hypers)]
            csum = np.cumsum(model.train_response[order], axis=1)
            for g, kk in enumerate(hypers):
                r = yva - csum[:, kk - 1] / kk
                mse[t, g] = r @ r / len(r)
        else:
            for g, h in enumerate(hypers):
                model = reg.fit_standardized(kind, Ztr, ytr, h, tol=tol, max_sweeps=max_sweeps)
                r = yva - reg.predict_linear(model, Zva)
                mse[t, g] = r @ r / len(r)
                masks.append(model.coefficients != 0.0)
        if selected is not None:
            selected.append(masks)
    return InnerCV(list(hypers), mse, selected)


def _check_knn_grid(kind, hypers, assignments):
    if kind != "knn":
        return hypers
    k = int(assignments.max()) + 1
    smallest = min(int(np.sum(assignments != t)) for t in range(k))
    usable = [h for h in hypers if 1 <= h <= smallest]
    if not usable:
        raise ParameterError(f"no k in grid fits inner training size {smallest}")
    return usable


# -- public operations ---------------------------------------------------------------


def grid_search_inner(X, y, kind, grid=None, inner_k: int = N_FOLDS, seed: int = 0,
                      assignments=None, tol=reg.DEFAULT_TOL, max_sweeps=reg.DEFAULT_MAX_SWEEPS,
                      impute=False):
    """Grid point with the lowest mean inner validation MSE.

    Equal mean MSE resolves toward the more regularized point (larger
    penalty, larger k).
    """
    return _grid_cv(X, y, kind, grid, inner_k, seed, assignments, tol, max_sweeps, impute).best


def _grid_cv(X, y, kind, grid, inner_k, seed, assignments, tol, max_sweeps, impute) -> InnerCV:
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if assignments is None:
        assignments = partition_folds(len(y), inner_k, seed).assignments
    hypers = resolve_grid(kind, grid, X, y, impute)
    hypers = _check_knn_grid(kind, hypers, assignments)
    return _inner_cv(kind, X, y, hypers, assignments, tol, max_sweeps, impute)


@dataclass(frozen=True)
class SelectionResult:
    stable: tuple[str, ...]
    per_fold: tuple[tuple[str, ...], ...]
    hyper: object


def stable_variable_selection(X, y, feature_names: Sequence[str], kind, grid=None,
                              inner_k: int = N_FOLDS, seed: int = 0, assignments=None,
                              tol=reg.DEFAULT_TOL, max_sweeps=reg.DEFAULT_MAX_SWEEPS,
                              impute=False, _cv: InnerCV | None = None) -> SelectionResult:
    """Variables selected in every inner fold at the grid-search winner."""
    if not reg.supports_selection(kind):
        raise ParameterError(f"model kind {kind!r} does not select variables")
    names = tuple(feature_names)
    cv = _cv or _grid_cv(X, y, kind, grid, inner_k, seed, assignments, tol, max_sweeps, impute)
    b = cv.best_index
    masks = [fold[b] for fold in cv.selected]
    per_fold = tuple(tuple(n for n, m in zip(names, mask) if m) for mask in masks)
    common = np.logical_and.reduce(masks) if masks else np.zeros(len(names), bool)
    return SelectionResult(tuple(n for n, m in zip(names, common) if m), per_fold, cv.best)


def merge_expert_variables(selected: Sequence[str], taxonomy: FeatureTaxonomy,
                           universe: Sequence[str] | None = None) -> tuple[str, ...]:
    """Union of ``selected`` with expert features, restricted to ``universe``.

    Output follows taxonomy order.
    """
    universe = set(taxonomy.names if universe is None else universe)
    keep = set(selected) | (set(taxonomy.expert) & universe)
    return tuple(n for n in taxonomy.names if n in keep and n in universe)


def retune_on_merged(X, y, feature_names: Sequence[str], merged: Sequence[str], kind, grid=None,
                     inner_k: int = N_FOLDS, seed: int = 0, assignments=None,
                     tol=reg.DEFAULT_TOL, max_sweeps=reg.DEFAULT_MAX_SWEEPS, impute=False):
    """Second grid search restricted to the merged columns.

    An empty merged set yields ``None`` (intercept-only model) and a warning.
    """
    if not merged:
        warnings.warn("merged variable set is empty; using intercept-only model",
                      HarnessWarning, stacklevel=2)
        return None
    index = {n: j for j, n in enumerate(feature_names)}
    cols = [index[n] for n in merged]
    return grid_search_inner(np.asarray(X)[:, cols], y, kind, grid, inner_k, seed, assignments,
                             tol, max_sweeps, impute)


@dataclass(frozen=True)
class ProtocolResult:
    """Outcome of selection + expert merge + retune + fit on one training set."""

    model: object
    merged: tuple[str, ...]
    hyper: object
    selection: SelectionResult | None


def _intercept_only(kind, X, y, universe, impute):
    std = fit_standardizer(X, y, impute=impute)
    return reg.TrainedLinearModel(
        intercept=float(np.mean(y)),
        coefficients=np.zeros(len(universe)),
        standardizer=std,
        lam=float("nan"),
        feature_names=tuple(universe),
        kind=kind,
    )


def run_protocol(X, y, universe: Sequence[str], taxonomy: FeatureTaxonomy, kind, grid,
                 assignments, tol=reg.DEFAULT_TOL, max_sweeps=reg.DEFAULT_MAX_SWEEPS,
                 impute=False) -> ProtocolResult:
    """Selection, expert merge, retune and final fit on a single training set.

    Linear models are returned over the whole ``universe``; columns outside
    the merged set carry a zero coefficient.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    universe = tuple(universe)
    selection = None
    if reg.supports_selection(kind):
        selection = stable_variable_selection(X, y, universe, kind, grid, assignments=assignments,
                                              tol=tol, max_sweeps=max_sweeps, impute=impute)
        merged = merge_expert_variables(selection.stable, taxonomy, universe)
    else:
        merged = universe
    if not merged:
        warnings.warn("stable and expert sets are both empty; using intercept-only model",
                      HarnessWarning, stacklevel=2)
        if kind == "knn":
            raise ParameterError("KNN needs at least one feature")
        return ProtocolResult(_intercept_only(kind, X, y, universe, impute), (), None, selection)

    cols = [universe.index(n) for n in merged]
    Xm = np.ascontiguousarray(X[:, cols])
    hyper = grid_search_inner(Xm, y, kind, grid, assignments=assignments, tol=tol,
                              max_sweeps=max_sweeps, impute=impute)
    std = fit_standardizer(X, y, impute=impute)
    Z = apply_standardizer(std, X)
    if kind == "knn":
        sub = Standardizer(std.mean[cols], std.sd[cols], std.response_mean,
                           None if std.medians is None else std.medians[cols])
        model = reg.knn_fit(Z[:, cols], y, hyper, merged, sub)
        return ProtocolResult(model, merged, hyper, selection)
    fitted = reg.fit_standardized(kind, Z[:, cols], y, hyper, merged, tol=tol,
                                  max_sweeps=max_sweeps)
    coef = np.zeros(len(universe))
    coef[cols] = fitted.coefficients
    model = reg.TrainedLinearModel(
        intercept=fitted.intercept,
        coefficients=coef,
        standardizer=std,
        lam=fitted.lam,
        feature_names=universe,
        kind=kind,
        sweeps=fitted.sweeps,
    )
    return ProtocolResult(model, merged, hyper, selection)


# -- nested evaluation -------------------------------------------------------------------


@dataclass(frozen=True)
class FoldOutcome:
    fold: int
    n_train: int
    n_test: int
    metrics: reg.RegressionMetrics
    hyper: object
    stable: tuple[str, ...]
    merged: tuple[str, ...]
    n_selected: int


METRIC_FIELDS = ("mse", "pearson_corr", "r2_sse", "r2_corr")


@dataclass
class CvReport:
    kind: str
    universe: tuple[str, ...]
    plan: FoldPlan
    folds: list[FoldOutcome]
    oof_predictions: np.ndarray
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in METRIC_FIELDS:
            vals = np.array([getattr(f.metrics, name) for f in self.folds])
            self.mean[name] = float(np.mean(vals))
            self.std[name] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0


def _outer_fold(f, X, y, universe, taxonomy, kind, grid, plan, tol, max_sweeps, impute):
    tr = plan.train_index(f)
    te = plan.test_index(f)
    try:
        res = run_protocol(X[tr], y[tr], universe, taxonomy, kind, grid, plan.inner[f],
                           tol, max_sweeps, impute)
        pred = reg.predict(res.model, X[te])
        metrics = reg.compute_metrics(y[te], pred)
    except Exception as exc:
        raise StageError(f"outer fold {f}", exc) from exc
    n_sel = (len(reg.selected_variables(res.model)) if reg.supports_selection(kind)
             else len(res.merged))
    outcome = FoldOutcome(
        fold=f,
        n_train=len(tr),
        n_test=len(te),
        metrics=metrics,
        hyper=res.hyper,
        stable=res.selection.stable if res.selection else (),
        merged=res.merged,
        n_selected=n_sel,
    )
    return outcome, te, pred


def nested_cv_evaluate(table: CountyTable, taxonomy: FeatureTaxonomy, universe, kind="lasso",
                       grid=None, seed: int = 0, n_jobs: int = 1, k_outer: int = N_FOLDS,
                       k_inner: int = N_FOLDS, tol=reg.DEFAULT_TOL,
                       max_sweeps=reg.DEFAULT_MAX_SWEEPS, impute=False) -> CvReport:
    """Outer-fold performance of the full selection/tuning protocol."""
    if len(table) == 0:
        raise ParameterError("empty county table")
    names = resolve_feature_set(taxonomy, universe)
    X = table.columns(names)
    y = np.asarray(table.observed_ir, dtype=float)
    plan = nested_plan(len(y), seed, k_outer, k_inner)
    args = (X, y, names, taxonomy, kind, grid, plan, tol, max_sweeps, impute)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(lambda f: _outer_fold(f, *args), range(k_outer)))
    else:
        results = [_outer_fold(f, *args) for f in range(k_outer)]
    oof = np.empty(len(y))
    for _, te, pred in results:
        oof[te] = pred
    return CvReport(kind, names, plan, [r[0] for r in results], oof)


@dataclass(frozen=True)
class FinalFit:
    model: object
    merged: tuple[str, ...]
    hyper: object
    selection: SelectionResult | None
    seed: int


def fit_final_model(table: CountyTable, taxonomy: FeatureTaxonomy, universe, kind="lasso",
                    grid=None, seed: int = 0, k_inner: int = N_FOLDS, tol=reg.DEFAULT_TOL,
                    max_sweeps=reg.DEFAULT_MAX_SWEEPS, impute=False) -> FinalFit:
    """Run the selection + retune protocol once on all rows and fit."""
    names = resolve_feature_set(taxonomy, universe)
    X = table.columns(names)
    y = np.asarray(table.observed_ir, dtype=float)
    assignments = partition_folds(len(y), k_inner, derive_seed(seed, 2)).assignments
    try:
        res = run_protocol(X, y, names, taxonomy, kind, grid, assignments, tol, max_sweeps, impute)
    except Exception as exc:
        raise StageError("final fit", exc) from exc
    return FinalFit(res.model, res.merged, res.hyper, res.selection, seed)


# -- serialization -------------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


CV_COLUMNS = ("model", "fold", "n_train", "n_test", "mse", "pearson_corr", "r2_sse", "r2_corr",
              "hyperparameter", "n_stable", "n_merged", "n_selected")


def cv_report_rows(report: CvReport, label: str = "") -> list[list[str]]:
    rows = []
    for f in report.folds:
        m = f.metrics
        rows.append([label, str(f.fold), str(f.n_train), str(f.n_test), _fmt(m.mse),
                     _fmt(m.pearson_corr), _fmt(m.r2_sse), _fmt(m.r2_corr), _fmt(f.hyper),
                     str(len(f.stable)), str(len(f.merged)), str(f.n_selected)])
    for stat, values in (("mean", report.mean), ("std", report.std)):
        rows.append([label, stat, "", ""] + [_fmt(values[k]) for k in METRIC_FIELDS]
                    + ["", "", "", ""])
    return rows


def write_cv_report(reports, path) -> None:
    """``reports`` is a CvReport or a mapping of label -> CvReport."""
    if isinstance(reports, CvReport):
        reports = {reports.kind: reports}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CV_COLUMNS)
        for label, rep in reports.items():
            w.writerows(cv_report_rows(rep, label))


def write_fold_plan(plan: FoldPlan, fips: Sequence[str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips", "outer_fold"])
        for code, a in zip(fips, plan.assignments):
            w.writerow([code, int(a)])
