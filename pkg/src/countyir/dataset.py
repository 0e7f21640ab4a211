"""County feature table, feature taxonomy, and standardization.

File formats
------------
counties.csv
    ``fips,name,state,female_pop,ir,<feature...>``. UTF-8, ``.`` decimal
    separator, no thousands separators. ``ir`` is the age-adjusted incidence
    rate per 100,000 females.
taxonomy.csv
    ``feature,category,non_modifiable,modifiable,expert,definition`` with
    literal 0/1 flags.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AlignmentError,
    DomainError,
    DuplicateKeyError,
    InsufficientDataError,
    ParameterError,
    ParseError,
    SchemaError,
    ShapeError,
    TaxonomyError,
)

REQUIRED_COLUMNS = ("fips", "name", "state", "female_pop", "ir")
TAXONOMY_COLUMNS = ("feature", "category", "non_modifiable", "modifiable", "expert", "definition")
CATEGORIES = ("socioeconomics", "family", "healthcare", "lifestyle", "environment")
MISSING_TOKENS = frozenset({"", "na", "nan", "null"})

_FIPS_RE = re.compile(r"^[0-9]{5}$")


@dataclass(frozen=True)
class CountyRecord:
    fips: str
    name: str
    state: str
    female_pop: int
    observed_ir: float
    features: np.ndarray


@dataclass(frozen=True)
class CountyTable:
    """Column-oriented county table.

    ``features`` is an ``(n_counties, n_features)`` float array whose column
    order follows ``feature_names``. Missing cells are NaN and only appear
    when the table was loaded with ``allow_missing=True``.
    """

    fips: tuple[str, ...]
    names: tuple[str, ...]
    states: tuple[str, ...]
    female_pop: np.ndarray
    observed_ir: np.ndarray
    features: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        n = len(self.fips)
        if self.features.shape != (n, len(self.feature_names)):
            raise ShapeError(
                f"feature matrix shape {self.features.shape} does not match "
                f"{n} counties x {len(self.feature_names)} features"
            )
        for arr in (self.female_pop, self.observed_ir, self.features):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.fips)

    @property
    def has_missing(self) -> bool:
        return bool(np.isnan(self.features).any())

    def record(self, i: int) -> CountyRecord:
        return CountyRecord(
            fips=self.fips[i],
            name=self.names[i],
            state=self.states[i],
            female_pop=int(self.female_pop[i]),
            observed_ir=float(self.observed_ir[i]),
            features=self.features[i],
        )

    def records(self):
        return [self.record(i) for i in range(len(self))]

    def subset(self, rows) -> "CountyTable":
        rows = np.asarray(rows, dtype=np.intp)
        return CountyTable(
            fips=tuple(self.fips[i] for i in rows),
            names=tuple(self.names[i] for i in rows),
            states=tuple(self.states[i] for i in rows),
            female_pop=self.female_pop[rows].copy(),
            observed_ir=self.observed_ir[rows].copy(),
            features=self.features[rows].copy(),
            feature_names=self.feature_names,
        )

    def columns(self, names: Sequence[str]) -> np.ndarray:
        index = {name: j for j, name in enumerate(self.feature_names)}
        try:
            cols = [index[name] for name in names]
        except KeyError as exc:
            raise AlignmentError(f"feature {exc.args[0]!r} not in table") from None
        # C order so reductions round identically however the columns were picked
        return np.ascontiguousarray(self.features[:, cols]) if cols else np.empty((len(self), 0))


def _parse_float(text, row, column, path, allow_missing):
    stripped = text.strip()
    if stripped.lower() in MISSING_TOKENS:
        if allow_missing:
            return float("nan")
        raise ParseError("missing value", row=row, column=column, path=path)
    try:
        value = float(stripped)
    except ValueError:
        raise ParseError(f"non-numeric value {text!r}", row=row, column=column, path=path) from None
    if not np.isfinite(value):
        raise ParseError(f"non-finite value {text!r}", row=row, column=column, path=path)
    return value


def load_county_table(path, allow_missing: bool = False) -> CountyTable:
    """Read ``counties.csv``.

    Row numbers in error messages are 1-based file lines (the header is
    line 1). Missing feature cells raise unless ``allow_missing`` is set, in
    which case they become NaN and must be imputed downstream.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("fips", path) from None
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise SchemaError(col, path)
        pos = {name: header.index(name) for name in REQUIRED_COLUMNS}
        feature_cols = [j for j, h in enumerate(header) if h not in REQUIRED_COLUMNS]
        feature_names = tuple(header[j] for j in feature_cols)
        if len(set(feature_names)) != len(feature_names):
            dup = next(f for f in feature_names if feature_names.count(f) > 1)
            raise DuplicateKeyError(dup, path)

        fips, names, states, pops, irs, rows = [], [], [], [], [], []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}", row=lineno, path=path
                )
            code = row[pos["fips"]].strip()
            if not _FIPS_RE.match(code):
                raise ParseError(f"malformed fips {code!r}", row=lineno, column="fips", path=path)
            if code in seen:
                raise DuplicateKeyError(code, path)
            seen.add(code)
            pop = _parse_float(row[pos["female_pop"]], lineno, "female_pop", path, False)
            if pop < 0 or pop != int(pop):
                raise ParseError(
                    "female_pop must be a nonnegative integer", row=lineno, column="female_pop", path=path
                )
            ir = _parse_float(row[pos["ir"]], lineno, "ir", path, False)
            if ir < 0:
                raise ParseError("ir must be nonnegative", row=lineno, column="ir", path=path)
            fips.append(code)
            names.append(row[pos["name"]].strip())
            states.append(row[pos["state"]].strip())
            pops.append(int(pop))
            irs.append(ir)
            rows.append(
                [_parse_float(row[j], lineno, header[j], path, allow_missing) for j in feature_cols]
            )

    features = np.array(rows, dtype=float).reshape(len(rows), len(feature_names))
    return CountyTable(
        fips=tuple(fips),
        names=tuple(names),
        states=tuple(states),
        female_pop=np.array(pops, dtype=np.int64),
        observed_ir=np.array(irs, dtype=float),
        features=features,
        feature_names=feature_names,
    )


def _fmt(value: float) -> str:
    return "" if np.isnan(value) else repr(float(value))


def write_county_table(table: CountyTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(REQUIRED_COLUMNS) + list(table.feature_names))
        for i in range(len(table)):
            writer.writerow(
                [table.fips[i], table.names[i], table.states[i], int(table.female_pop[i]),
                 _fmt(table.observed_ir[i])]
                + [_fmt(v) for v in table.features[i]]
            )


# -- taxonomy -----------------------------------------------------------------


@dataclass(frozen=True)
class TaxonomyEntry:
    feature_name: str
    category: str
    non_modifiable: bool
    modifiable: bool
    expert: bool
    definition: str = ""


@dataclass(frozen=True)
class FeatureTaxonomy:
    entries: tuple[TaxonomyEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.feature_name in seen:
                raise TaxonomyError(f"duplicate feature {e.feature_name!r}")
            seen.add(e.feature_name)
            if e.non_modifiable == e.modifiable:
                raise TaxonomyError(
                    f"feature {e.feature_name!r} must be exactly one of non-modifiable/modifiable"
                )

    def __len__(self):
        return len(self.entries)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.feature_name for e in self.entries)

    @property
    def non_modifiable(self) -> tuple[str, ...]:
        return tuple(e.feature_name for e in self.entries if e.non_modifiable)

    @property
    def modifiable(self) -> tuple[str, ...]:
        return tuple(e.feature_name for e in self.entries if e.modifiable)

    @property
    def expert(self) -> tuple[str, ...]:
        return tuple(e.feature_name for e in self.entries if e.expert)

    def counts(self) -> tuple[int, int, int]:
        """(non-modifiable, modifiable, expert) entry counts."""
        return len(self.non_modifiable), len(self.modifiable), len(self.expert)

    def restrict(self, names: Iterable[str]) -> "FeatureTaxonomy":
        keep = set(names)
        return FeatureTaxonomy(tuple(e for e in self.entries if e.feature_name in keep))


def _parse_flag(text, row, column, path):
    value = text.strip()
    if value not in ("0", "1"):
        raise ParseError(f"flag must be 0 or 1, got {text!r}", row=row, column=column, path=path)
    return value == "1"


def load_taxonomy(path, feature_names: Sequence[str] | None = None) -> FeatureTaxonomy:
    """Read ``taxonomy.csv``.

    When ``feature_names`` is given (normally a county table's columns),
    every one of them must have an entry; entries for features that are not
    in the table are dropped. Order always follows the taxonomy file.
    """
    path = Path(path)
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("feature", path) from None
        for col in TAXONOMY_COLUMNS:
            if col not in header:
                raise SchemaError(col, path)
        pos = {name: header.index(name) for name in TAXONOMY_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}", row=lineno, path=path
                )
            name = row[pos["feature"]].strip()
            category = row[pos["category"]].strip().lower()
            if category not in CATEGORIES:
                raise ParseError(
                    f"unknown category {category!r}", row=lineno, column="category", path=path
                )
            nm = _parse_flag(row[pos["non_modifiable"]], lineno, "non_modifiable", path)
            mod = _parse_flag(row[pos["modifiable"]], lineno, "modifiable", path)
            if nm == mod:
                raise TaxonomyError(
                    f"{path}: line {lineno}: feature {name!r} must be exactly one of "
                    "non-modifiable/modifiable"
                )
            entries.append(
                TaxonomyEntry(
                    feature_name=name,
                    category=category,
                    non_modifiable=nm,
                    modifiable=mod,
                    expert=_parse_flag(row[pos["expert"]], lineno, "expert", path),
                    definition=row[pos["definition"]].strip(),
                )
            )
    taxonomy = FeatureTaxonomy(tuple(entries))
    if feature_names is not None:
        taxonomy = align_taxonomy(taxonomy, feature_names)
    return taxonomy


def align_taxonomy(taxonomy: FeatureTaxonomy, feature_names: Sequence[str]) -> FeatureTaxonomy:
    known = set(taxonomy.names)
    for name in feature_names:
        if name not in known:
            raise AlignmentError(f"feature {name!r} has no taxonomy entry")
    return taxonomy.restrict(feature_names)


def align_table(table: CountyTable, taxonomy: FeatureTaxonomy) -> CountyTable:
    """Reorder the table's feature columns to taxonomy order."""
    taxonomy = align_taxonomy(taxonomy, table.feature_names)
    if taxonomy.names == table.feature_names:
        return table
    return CountyTable(
        fips=table.fips,
        names=table.names,
        states=table.states,
        female_pop=table.female_pop,
        observed_ir=table.observed_ir,
        features=table.columns(taxonomy.names),
        feature_names=taxonomy.names,
    )


def write_taxonomy(taxonomy: FeatureTaxonomy, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TAXONOMY_COLUMNS)
        for e in taxonomy.entries:
            writer.writerow(
                [e.feature_name, e.category, int(e.non_modifiable), int(e.modifiable),
                 int(e.expert), e.definition]
            )


# -- row/column operations ------------------------------------------------------


def filter_by_female_population(table: CountyTable, threshold: int) -> CountyTable:
    """Keep counties whose female population is strictly above ``threshold``."""
    if threshold < 0:
        raise ParameterError("threshold must be nonnegative")
    keep = np.flatnonzero(table.female_pop > threshold)
    if len(keep) == len(table):
        return table
    return table.subset(keep)


def percent_normalize(count: float, denominator: float) -> float:
    if not denominator > 0:
        raise DomainError(f"denominator must be positive, got {denominator}")
    if count < 0 or count > denominator:
        raise DomainError(f"count {count} outside [0, {denominator}]")
    return 100.0 * count / denominator


FEATURE_MODES = ("non_modifiable_only", "modifiable_only", "all")


def resolve_feature_set(taxonomy: FeatureTaxonomy, mode) -> tuple[str, ...]:
    """Feature names for ``mode``: one of FEATURE_MODES or an explicit list."""
    if isinstance(mode, str):
        if mode == "non_modifiable_only":
            return taxonomy.non_modifiable
        if mode == "modifiable_only":
            return taxonomy.modifiable
        if mode == "all":
            return taxonomy.names
        raise ParameterError(f"unknown feature mode {mode!r}")
    requested = set(mode)
    known = set(taxonomy.names)
    for name in mode:
        if name not in known:
            raise AlignmentError(f"unknown feature {name!r}")
    return tuple(n for n in taxonomy.names if n in requested)


def select_feature_set(table: CountyTable, taxonomy: FeatureTaxonomy, mode):
    """Return ``(names, matrix)`` for the requested feature universe."""
    names = resolve_feature_set(taxonomy, mode)
    return names, table.columns(names)


# -- standardization -------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    """Column means/sample sds of a training partition plus the response mean.

    Columns with zero sd are treated as carrying no signal and standardize to
    zero. ``medians`` is set only when the standardizer was fit with
    imputation enabled; NaN cells are then replaced by the training median.
    """

    mean: np.ndarray
    sd: np.ndarray
    response_mean: float = 0.0
    medians: np.ndarray | None = None

    @property
    def constant(self) -> np.ndarray:
        return self.sd == 0

    @property
    def n_features(self) -> int:
        return len(self.mean)

    @classmethod
    def identity(cls, n_features: int, response_mean: float = 0.0) -> "Standardizer":
        return cls(np.zeros(n_features), np.ones(n_features), float(response_mean))


def fit_standardizer(matrix, response=None, impute: bool = False) -> Standardizer:
    X = np.ascontiguousarray(matrix, dtype=float)
    if X.ndim != 2:
        raise ShapeError("feature matrix must be 2-D")
    if X.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 rows to standardize, got {X.shape[0]}")
    medians = None
    if np.isnan(X).any():
        if not impute:
            i, j = np.argwhere(np.isnan(X))[0]
            raise ParseError("missing value (imputation disabled)", row=int(i), column=int(j))
        medians = np.nanmedian(X, axis=0)
        if np.isnan(medians).any():
            j = int(np.flatnonzero(np.isnan(medians))[0])
            raise InsufficientDataError(f"column {j} has no observed values")
        X = np.where(np.isnan(X), medians, X)
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    # Exact constants can still produce sd ~ 1e-17 from rounding of the mean.
    sd = np.where(np.all(X == X[0], axis=0), 0.0, sd)
    response_mean = 0.0 if response is None else float(np.mean(response))
    return Standardizer(mean, sd, response_mean, medians)


def apply_standardizer(std: Standardizer, matrix) -> np.ndarray:
    X = np.ascontiguousarray(matrix, dtype=float)
    if X.ndim != 2 or X.shape[1] != std.n_features:
        raise ShapeError(
            f"expected {std.n_features} columns, got shape {X.shape}"
        )
    if np.isnan(X).any():
        if std.medians is None:
            i, j = np.argwhere(np.isnan(X))[0]
            raise ParseError("missing value (imputation disabled)", row=int(i), column=int(j))
        X = np.where(np.isnan(X), std.medians, X)
    safe_sd = np.where(std.sd > 0, std.sd, 1.0)
    Z = (X - std.mean) / safe_sd
    Z[:, std.sd == 0] = 0.0
    return Z
