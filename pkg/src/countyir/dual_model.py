"""Two-model comparison: non-modifiable-only versus all features.

Model 1 sees only non-modifiable features and gives the expected rate for a
county's circumstances; Model 2 adds the modifiable ones. The residual
``observed - pred1`` flags counties doing better or worse than expected and
the impact ``pred2 - pred1`` estimates how much the modifiable factors move
the prediction (negative means they lower it).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import harness
from . import regressors as reg
from .dataset import CountyTable, FeatureTaxonomy
from .errors import AlignmentError, ParseError, SchemaError, ShapeError

DUAL_COLUMNS = ("fips", "observed", "pred1", "pred2", "residual", "impact")
PREDICTION_MODES = ("final", "oof")


def _pair(a, b, what):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"{what}: vectors of shape {a.shape} and {b.shape}")
    return a, b


def residuals(observed, pred1) -> np.ndarray:
    """``observed - pred1``; negative means the observed rate is lower than expected."""
    observed, pred1 = _pair(observed, pred1, "residuals")
    return observed - pred1


def modifiable_impact(pred1, pred2) -> np.ndarray:
    """``pred2 - pred1``; negative means modifiable factors reduced the prediction."""
    pred1, pred2 = _pair(pred1, pred2, "modifiable_impact")
    return pred2 - pred1


@dataclass(frozen=True)
class DualModelResult:
    fips: tuple[str, ...]
    observed: np.ndarray
    pred1: np.ndarray
    pred2: np.ndarray
    residual: np.ndarray
    impact: np.ndarray
    mode: str = "final"

    @classmethod
    def from_predictions(cls, fips, observed, pred1, pred2, mode="final") -> "DualModelResult":
        observed = np.asarray(observed, dtype=float)
        pred1 = np.asarray(pred1, dtype=float)
        pred2 = np.asarray(pred2, dtype=float)
        if not (len(fips) == len(observed) == len(pred1) == len(pred2)):
            raise ShapeError("fips, observed and predictions must have equal length")
        return cls(tuple(fips), observed, pred1, pred2, residuals(observed, pred1),
                   modifiable_impact(pred1, pred2), mode)

    @property
    def observed_ir(self) -> np.ndarray:
        return self.observed

    @property
    def lower_than_expected(self) -> np.ndarray:
        return self.residual < 0


@dataclass(frozen=True)
class DualFit:
    """Final fits of both models; iterates as ``(model1, model2)``."""

    final1: harness.FinalFit
    final2: harness.FinalFit

    @property
    def model1(self):
        return self.final1.model

    @property
    def model2(self):
        return self.final2.model

    def __iter__(self) -> Iterator:
        return iter((self.model1, self.model2))


def model_seeds(seed: int, paired: bool = False) -> tuple[int, int]:
    """Per-model seeds derived from the master seed; ``paired`` reuses the first."""
    s1 = harness.derive_seed(seed, 10, 1)
    return (s1, s1) if paired else (s1, harness.derive_seed(seed, 10, 2))


def fit_dual_models(table: CountyTable, taxonomy: FeatureTaxonomy, kind: str = "lasso",
                    grid=None, seed: int = 0, paired: bool = False, **kwargs) -> DualFit:
    """Fit Model 1 on the non-modifiable universe and Model 2 on all features.

    Extra keyword arguments go to :func:`harness.fit_final_model`.
    """
    s1, s2 = model_seeds(seed, paired)
    f1 = harness.fit_final_model(table, taxonomy, "non_modifiable_only", kind, grid, s1, **kwargs)
    f2 = harness.fit_final_model(table, taxonomy, "all", kind, grid, s2, **kwargs)
    return DualFit(f1, f2)


def _predict(model, table):
    return reg.predict(model, table.columns(model.feature_names))


def dual_predictions(table: CountyTable, fit) -> DualModelResult:
    """Residuals and impacts from final all-data fits (in-sample predictions)."""
    m1, m2 = fit
    return DualModelResult.from_predictions(table.fips, table.observed_ir, _predict(m1, table),
                                            _predict(m2, table), "final")


def dual_from_cv(table: CountyTable, report1: harness.CvReport,
                 report2: harness.CvReport) -> DualModelResult:
    """Residuals and impacts from out-of-fold predictions of two CV runs."""
    return DualModelResult.from_predictions(table.fips, table.observed_ir, report1.oof_predictions,
                                            report2.oof_predictions, "oof")


def write_dual_results(result: DualModelResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DUAL_COLUMNS)
        for i, code in enumerate(result.fips):
            w.writerow([code] + [repr(float(v[i])) for v in (result.observed, result.pred1,
                                                             result.pred2, result.residual,
                                                             result.impact)])


def read_dual_results(path) -> DualModelResult:
    """Read ``dual_results.csv``; residual and impact are recomputed and checked."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        for col in DUAL_COLUMNS:
            if col not in header:
                raise SchemaError(col, path)
        pos = {c: header.index(c) for c in DUAL_COLUMNS}
        fips, cols = [], {c: [] for c in DUAL_COLUMNS[1:]}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            fips.append(row[pos["fips"]].strip())
            for c in cols:
                try:
                    cols[c].append(float(row[pos[c]]))
                except ValueError:
                    raise ParseError("non-numeric value", row=lineno, column=c, path=path) from None
    res = DualModelResult.from_predictions(fips, cols["observed"], cols["pred1"], cols["pred2"])
    if not (np.array_equal(res.residual, cols["residual"]) and np.array_equal(res.impact, cols["impact"])):
        raise AlignmentError(f"{path}: residual/impact columns disagree with predictions")
    return res
