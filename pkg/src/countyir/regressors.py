"""Regression models behind a common fit / predict / selected-variables contract.

All linear fitters take an already *standardized* design matrix ``Z`` and a
response ``y``. The response is centered internally and its mean becomes the
intercept, so coefficients live on the standardized scale. ``fit_model``
wraps the standardization step for raw feature matrices.

LASSO objective::

    (1 / 2n) * ||y - Z b||^2 + lam * ||b||_1

solved by cyclic coordinate descent in fixed column order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .dataset import Standardizer, apply_standardizer, fit_standardizer
from .errors import (
    AlignmentError,
    ConvergenceError,
    FormatError,
    InsufficientDataError,
    ParameterError,
    ShapeError,
    SingularityError,
)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_SWEEPS = 10_000
MODEL_KINDS = ("lasso", "ridge", "ols", "bic", "knn")
LINEAR_KINDS = ("lasso", "ridge", "ols", "bic")


@dataclass(frozen=True)
class TrainedLinearModel:
    intercept: float
    coefficients: np.ndarray
    standardizer: Standardizer
    lam: float = float("nan")
    feature_names: tuple[str, ...] = ()
    kind: str = "lasso"
    sweeps: int = 0

    def __post_init__(self):
        if len(self.coefficients) != self.standardizer.n_features:
            raise ShapeError("coefficient count does not match standardizer")
        if self.feature_names and len(self.feature_names) != len(self.coefficients):
            raise ShapeError("feature name count does not match coefficients")
        self.coefficients.setflags(write=False)


@dataclass(frozen=True)
class KnnModel:
    k: int
    train_matrix: np.ndarray  # standardized
    train_response: np.ndarray
    standardizer: Standardizer
    feature_names: tuple[str, ...] = ()
    kind: str = "knn"

    def __post_init__(self):
        if not 1 <= self.k <= len(self.train_response):
            raise ParameterError(
                f"k={self.k} must lie in [1, {len(self.train_response)}]"
            )


@dataclass(frozen=True)
class RegressionMetrics:
    mse: float
    pearson_corr: float
    r2_sse: float
    r2_corr: float
    n: int
    corr_defined: bool = True


# -- LASSO ------------------------------------------------------------------------


def soft_threshold(z: float, gamma: float) -> float:
    if gamma < 0:
        raise ParameterError("gamma must be nonnegative")
    return math.copysign(abs(z) - gamma, z) if abs(z) > gamma else 0.0


@njit(cache=True, nogil=True)
def _cd_gram(G, c, yy, lam, beta, tol, max_sweeps, track):
    """Cyclic coordinate descent on the Gram form of the LASSO objective.

    ``G = Z'Z/n``, ``c = Z'y/n``, ``yy = y'y/n``. ``beta`` is updated in place.
    Returns (sweeps, last max change, per-sweep objective history).
    """
    p = c.shape[0]
    grad = np.zeros(p)  # G @ beta
    for j in range(p):
        if beta[j] != 0.0:
            for k in range(p):
                grad[k] += G[k, j] * beta[j]
    history = np.empty(max_sweeps + 1 if track else 0)
    if track:
        obj = 0.5 * yy
        for j in range(p):
            obj += -c[j] * beta[j] + 0.5 * beta[j] * grad[j] + lam * abs(beta[j])
        history[0] = obj
    max_change = 0.0
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            gjj = G[j, j]
            old = beta[j]
            new = 0.0
            if gjj > 0.0:
                rho = c[j] - grad[j] + gjj * old
                if rho > lam:
                    new = (rho - lam) / gjj
                elif rho < -lam:
                    new = (rho + lam) / gjj
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                for k in range(p):
                    grad[k] += delta * G[k, j]
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if track:
            obj = 0.5 * yy
            for j in range(p):
                obj += -c[j] * beta[j] + 0.5 * beta[j] * grad[j] + lam * abs(beta[j])
            history[sweep + 1] = obj
        if max_change < tol:
            return sweep + 1, max_change, history[: sweep + 2] if track else history
    return max_sweeps, max_change, history


def lasso_objective(Z, y, beta, lam) -> float:
    """Objective value evaluated directly from residuals (y is centered here)."""
    Z = np.asarray(Z, dtype=float)
    yc = np.asarray(y, dtype=float) - np.mean(y)
    r = yc - Z @ beta
    return float(r @ r / (2 * len(yc)) + lam * np.abs(beta).sum())


def _gram(Z, yc):
    n = Z.shape[0]
    return Z.T @ Z / n, Z.T @ yc / n, float(yc @ yc / n)


def lambda_max(Z, y) -> float:
    """Smallest penalty at which the LASSO solution is identically zero."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape[1] == 0:
        return 0.0
    yc = np.asarray(y, dtype=float) - np.mean(y)
    return float(np.max(np.abs(Z.T @ yc / Z.shape[0])))


def _check_xy(Z, y):
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if Z.ndim != 2 or y.ndim != 1 or Z.shape[0] != y.shape[0]:
        raise ShapeError(f"incompatible shapes {Z.shape} and {y.shape}")
    if Z.shape[0] < 1:
        raise InsufficientDataError("no rows to fit")
    return Z, y


def _finish(kind, intercept, beta, lam, feature_names, standardizer, sweeps=0):
    p = len(beta)
    if standardizer is None:
        standardizer = Standardizer.identity(p, intercept)
    return TrainedLinearModel(
        intercept=float(intercept),
        coefficients=np.asarray(beta, dtype=float),
        standardizer=standardizer,
        lam=float(lam),
        feature_names=tuple(feature_names or ()),
        kind=kind,
        sweeps=sweeps,
    )


def lasso_path_solve(G, c, yy, lam, beta0=None, tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS,
                     track=False):
    """Run coordinate descent on precomputed Gram quantities.

    Returns ``(beta, sweeps, history)``; raises ConvergenceError.
    """
    if lam < 0:
        raise ParameterError("lambda must be nonnegative")
    beta = np.zeros(len(c)) if beta0 is None else np.array(beta0, dtype=float)
    sweeps, change, history = _cd_gram(G, c, yy, float(lam), beta, float(tol), int(max_sweeps),
                                       bool(track))
    if change >= tol:
        raise ConvergenceError(beta.copy(), sweeps, change)
    return beta, sweeps, history


def lasso_fit(Z, y, lam, tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS, beta0=None,
              feature_names=None, standardizer=None, return_history=False):
    """Fit the LASSO by cyclic coordinate descent.

    With ``return_history=True`` a ``(model, objective_per_sweep)`` tuple is
    returned; entry 0 is the objective at the starting point.
    """
    Z, y = _check_xy(Z, y)
    y_mean = float(np.mean(y))
    yc = y - y_mean
    if Z.shape[1] == 0:
        model = _finish("lasso", y_mean, np.zeros(0), lam, feature_names, standardizer)
        return (model, np.array([0.5 * float(yc @ yc) / len(yc)])) if return_history else model
    G, c, yy = _gram(Z, yc)
    beta, sweeps, history = lasso_path_solve(G, c, yy, lam, beta0, tol, max_sweeps,
                                             track=return_history)
    model = _finish("lasso", y_mean, beta, lam, feature_names, standardizer, sweeps)
    return (model, history) if return_history else model


def lambda_grid(lam_max: float, n_lambda: int = 100, min_ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced penalties from ``lam_max`` down to ``min_ratio * lam_max``."""
    if n_lambda < 1:
        raise ParameterError("n_lambda must be positive")
    if lam_max <= 0:
        return np.zeros(1)
    if n_lambda == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambda)


# -- OLS / ridge / stepwise ---------------------------------------------------------


def ols_fit(Z, y, feature_names=None, standardizer=None, max_condition=1e12):
    Z, y = _check_xy(Z, y)
    y_mean = float(np.mean(y))
    if Z.shape[1] == 0:
        return _finish("ols", y_mean, np.zeros(0), 0.0, feature_names, standardizer)
    Zc = Z - Z.mean(axis=0)
    sv = np.linalg.svd(Zc, compute_uv=False)
    if sv[-1] == 0 or sv[0] / sv[-1] > max_condition or Z.shape[0] <= Z.shape[1]:
        raise SingularityError("design matrix is rank deficient")
    beta, *_ = np.linalg.lstsq(Zc, y - y_mean, rcond=None)
    return _finish("ols", y_mean, beta, 0.0, feature_names, standardizer)


def ridge_fit(Z, y, lam, feature_names=None, standardizer=None):
    """Solve ``(Z'Z/n + lam I) b = Z'y/n``."""
    if lam < 0:
        raise ParameterError("lambda must be nonnegative")
    Z, y = _check_xy(Z, y)
    y_mean = float(np.mean(y))
    if Z.shape[1] == 0:
        return _finish("ridge", y_mean, np.zeros(0), lam, feature_names, standardizer)
    G, c, _ = _gram(Z, y - y_mean)
    A = G + lam * np.eye(len(c))
    try:
        beta = np.linalg.solve(A, c)
    except np.linalg.LinAlgError:
        raise SingularityError("ridge system is singular (lambda = 0 on rank-deficient data)") from None
    return _finish("ridge", y_mean, beta, lam, feature_names, standardizer)


def bic_score(sse: float, n: int, k: int) -> float:
    """BIC of a Gaussian linear model with ``k`` slopes plus an intercept."""
    with np.errstate(divide="ignore"):
        return float(n * np.log(sse / n) + (k + 1) * np.log(n))


def stepwise_bic_fit(Z, y, feature_names=None, standardizer=None, collinear_tol=1e-10):
    """Forward selection, adding the column that lowers BIC most until none does.

    Candidates are scored through an orthonormal basis of the selected
    columns, so each step costs one projection of the remaining columns.
    Ties go to the lower column index.
    """
    Z, y = _check_xy(Z, y)
    n, p = Z.shape
    if n <= 2:
        raise InsufficientDataError("stepwise BIC needs more than 2 rows")
    y_mean = float(np.mean(y))
    r = y - y_mean
    Zc = Z - Z.mean(axis=0)
    sse = float(r @ r)
    best_bic = bic_score(sse, n, 0)
    selected: list[int] = []
    Q = np.empty((n, 0))
    col_norm = np.einsum("ij,ij->j", Zc, Zc)
    while len(selected) < min(p, n - 2):
        U = Zc - Q @ (Q.T @ Zc)
        U = U - Q @ (Q.T @ U)
        unorm = np.einsum("ij,ij->j", U, U)
        ok = unorm > collinear_tol * np.maximum(col_norm, 1e-300)
        ok[selected] = False
        if not ok.any():
            break
        gain = np.zeros(p)
        gain[ok] = (U[:, ok].T @ r) ** 2 / unorm[ok]
        cand = np.full(p, np.inf)
        cand[ok] = [bic_score(max(sse - g, 0.0), n, len(selected) + 1) for g in gain[ok]]
        j = int(np.argmin(cand))
        if not cand[j] < best_bic:
            break
        q = U[:, j] / np.sqrt(unorm[j])
        Q = np.column_stack([Q, q])
        r = r - q * (q @ r)
        sse = float(r @ r)
        best_bic = cand[j]
        selected.append(j)
    beta = np.zeros(p)
    if selected:
        cols = sorted(selected)
        coef, *_ = np.linalg.lstsq(Zc[:, cols], y - y_mean, rcond=None)
        beta[cols] = coef
    return _finish("bic", y_mean, beta, float("nan"), feature_names, standardizer)


# -- KNN ------------------------------------------------------------------------------


def knn_fit(Z, y, k, feature_names=None, standardizer=None) -> KnnModel:
    Z, y = _check_xy(Z, y)
    if standardizer is None:
        standardizer = Standardizer.identity(Z.shape[1], float(np.mean(y)))
    return KnnModel(int(k), Z.copy(), y.copy(), standardizer, tuple(feature_names or ()))


def _knn_standardized(model: KnnModel, Zq):
    Zq = np.asarray(Zq, dtype=float)
    if Zq.ndim != 2 or Zq.shape[1] != model.train_matrix.shape[1]:
        raise ShapeError(
            f"query has shape {Zq.shape}, model expects {model.train_matrix.shape[1]} columns"
        )
    d2 = (
        np.einsum("ij,ij->i", Zq, Zq)[:, None]
        - 2.0 * Zq @ model.train_matrix.T
        + np.einsum("ij,ij->i", model.train_matrix, model.train_matrix)[None, :]
    )
    d2 = np.maximum(d2, 0.0)
    # stable sort keeps lower training index first among equal distances
    order = np.argsort(d2, axis=1, kind="stable")[:, : model.k]
    return model.train_response[order].mean(axis=1)


def knn_predict(model: KnnModel, rows) -> np.ndarray:
    """Mean response of the ``k`` nearest training rows (Euclidean, standardized)."""
    Zq = apply_standardizer(model.standardizer, _as_matrix(rows, model.standardizer.n_features))
    return _knn_standardized(model, Zq)


# -- shared contract --------------------------------------------------------------------


def _as_matrix(rows, p):
    X = np.asarray(rows, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if p else X.reshape(-1, 0)
    return X


def predict_linear(model: TrainedLinearModel, rows, feature_names: Sequence[str] | None = None):
    """Standardize raw rows with the model's statistics and apply coefficients.

    If ``feature_names`` is given the rows' columns are matched to the
    model's features by name (extra columns are ignored).
    """
    X = _as_matrix(rows, len(model.coefficients))
    if feature_names is not None:
        feature_names = list(feature_names)
        if X.shape[1] != len(feature_names):
            raise AlignmentError("row width does not match feature_names")
        index = {name: j for j, name in enumerate(feature_names)}
        missing = [f for f in model.feature_names if f not in index]
        if missing:
            raise AlignmentError(f"rows lack model feature {missing[0]!r}")
        X = X[:, [index[f] for f in model.feature_names]]
    if X.ndim != 2 or X.shape[1] != len(model.coefficients):
        raise AlignmentError(
            f"rows have {X.shape[1] if X.ndim == 2 else '?'} columns, "
            f"model has {len(model.coefficients)} features"
        )
    Z = apply_standardizer(model.standardizer, X)
    return model.intercept + Z @ model.coefficients


def predict(model, rows) -> np.ndarray:
    if isinstance(model, KnnModel):
        return knn_predict(model, rows)
    return predict_linear(model, rows)


def selected_variables(model: TrainedLinearModel) -> list[str]:
    if not isinstance(model, TrainedLinearModel):
        raise ParameterError(f"{type(model).__name__} does not select variables")
    names = model.feature_names or tuple(f"x{j}" for j in range(len(model.coefficients)))
    return [name for name, b in zip(names, model.coefficients) if b != 0.0]


def supports_selection(kind: str) -> bool:
    return kind in LINEAR_KINDS


def fit_standardized(kind, Z, y, hyper=None, feature_names=None, standardizer=None,
                     tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS, beta0=None):
    """Dispatch to a fitter on an already standardized matrix."""
    if kind == "lasso":
        return lasso_fit(Z, y, float(hyper), tol, max_sweeps, beta0, feature_names, standardizer)
    if kind == "ridge":
        return ridge_fit(Z, y, float(hyper), feature_names, standardizer)
    if kind == "ols":
        return ols_fit(Z, y, feature_names, standardizer)
    if kind == "bic":
        return stepwise_bic_fit(Z, y, feature_names, standardizer)
    if kind == "knn":
        return knn_fit(Z, y, int(hyper), feature_names, standardizer)
    raise ParameterError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def fit_model(kind, X, y, hyper=None, feature_names=None, impute=False, **kwargs):
    """Standardize raw ``X`` on itself, then fit ``kind``."""
    X = np.asarray(X, dtype=float)
    std = fit_standardizer(X, y, impute=impute)
    Z = apply_standardizer(std, X)
    return fit_standardized(kind, Z, y, hyper, feature_names, std, **kwargs)


def compute_metrics(observed, predicted) -> RegressionMetrics:
    obs = np.asarray(observed, dtype=float)
    pred = np.asarray(predicted, dtype=float)
    if obs.shape != pred.shape or obs.ndim != 1:
        raise ShapeError(f"observed {obs.shape} and predicted {pred.shape} differ")
    if len(obs) < 2:
        raise InsufficientDataError("need at least 2 observations")
    resid = obs - pred
    sse = float(resid @ resid)
    mse = sse / len(obs)
    dev = obs - obs.mean()
    sst = float(dev @ dev)
    r2_sse = 1.0 - sse / sst if sst > 0 else float("nan")
    pdev = pred - pred.mean()
    denom = math.sqrt(sst * float(pdev @ pdev))
    if denom > 0:
        corr = float(np.clip((dev @ pdev) / denom, -1.0, 1.0))
        return RegressionMetrics(mse, corr, r2_sse, corr * corr, len(obs), True)
    return RegressionMetrics(mse, float("nan"), r2_sse, float("nan"), len(obs), False)


# -- coefficient files ----------------------------------------------------------------------


def write_linear_model(model: TrainedLinearModel, path) -> None:
    """Write ``key=value`` header lines followed by a per-feature CSV block."""
    std = model.standardizer
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"kind={model.kind}\n")
        fh.write(f"intercept={model.intercept!r}\n")
        fh.write(f"lambda={model.lam!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature", "coefficient", "mean", "sd"])
        names = model.feature_names or tuple(f"x{j}" for j in range(len(model.coefficients)))
        for j, name in enumerate(names):
            writer.writerow(
                [name, repr(float(model.coefficients[j])), repr(float(std.mean[j])),
                 repr(float(std.sd[j]))]
            )


def read_linear_model(path) -> TrainedLinearModel:
    """Read a coefficient file.

    The ``mean``/``sd`` columns are optional; without them the model expects
    already standardized input. Blank coefficients read as zero.
    """
    path = Path(path)
    header = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines) and (lines[i].startswith("#") or "=" in lines[i] or not lines[i].strip()):
        line = lines[i].strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
        i += 1
    if "intercept" not in header:
        raise FormatError(f"{path}: missing intercept= line")
    rows = list(csv.reader(lines[i:]))
    if not rows or rows[0][:2] != ["feature", "coefficient"]:
        raise FormatError(f"{path}: expected 'feature,coefficient' header")
    has_stats = rows[0][2:4] == ["mean", "sd"]
    names, coefs, means, sds = [], [], [], []
    for row in rows[1:]:
        if not row:
            continue
        names.append(row[0])
        coefs.append(float(row[1]) if row[1].strip() else 0.0)
        if has_stats:
            means.append(float(row[2]))
            sds.append(float(row[3]))
    intercept = float(header["intercept"])
    if has_stats:
        std = Standardizer(np.array(means), np.array(sds), intercept)
    else:
        std = Standardizer.identity(len(names), intercept)
    return TrainedLinearModel(
        intercept=intercept,
        coefficients=np.array(coefs, dtype=float),
        standardizer=std,
        lam=float(header.get("lambda", "nan")),
        feature_names=tuple(names),
        kind=header.get("kind", "lasso"),
    )
