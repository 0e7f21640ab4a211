"""Spatial weights, local Moran's I and conditional-permutation inference.

Local Moran's I for location i::

    I_i = (z_i / m2) * sum_j w_ij z_j,   z = x - mean(x),   m2 = sum(z^2) / n

Significance uses conditional permutation: x_i stays put while the other
n-1 values are randomly reassigned to the other locations. Each county draws
from its own RNG stream seeded by ``(seed, county index)``, so results are
identical for any number of worker threads.
"""

from __future__ import annotations

import csv
import itertools
import math
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateError,
    DegenerateGeometryError,
    DomainError,
    ParameterError,
    ParseError,
    SchemaError,
    ShapeError,
    UnknownIdError,
)

EARTH_RADIUS_KM = 6371.0
DISTANCE_RTOL = 1e-9
CLASSES = ("HH", "LL", "HL", "LH", "NS", "ISOLATE")


class SpatialWarning(UserWarning):
    pass


# -- distances -------------------------------------------------------------------


def _check_coords(lat, lon):
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if np.any(~np.isfinite(lat)) or np.any(np.abs(lat) > 90):
        raise DomainError("latitude outside [-90, 90]")
    if np.any(~np.isfinite(lon)) or np.any(np.abs(lon) > 180):
        raise DomainError("longitude outside [-180, 180]")
    return lat, lon


def haversine_km(a, b) -> float:
    """Great-circle distance between two (lat, lon) points in degrees."""
    (lat1, lon1), (lat2, lon2) = a, b
    _check_coords([lat1, lat2], [lon1, lon2])
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dphi = p2 - p1
    dlmb = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_matrix(lat, lon) -> np.ndarray:
    """Symmetric pairwise distance matrix (km) with an exact zero diagonal."""
    lat, lon = _check_coords(lat, lon)
    phi = np.radians(lat)
    lmb = np.radians(lon)
    h = (
        np.sin((phi[:, None] - phi[None, :]) / 2) ** 2
        + np.cos(phi)[:, None] * np.cos(phi)[None, :] * np.sin((lmb[:, None] - lmb[None, :]) / 2) ** 2
    )
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))
    upper = np.triu(d, 1)
    return upper + upper.T


# -- weights ----------------------------------------------------------------------


@dataclass(frozen=True)
class Scheme:
    kind: str  # contiguity | band | invdist
    distance_km: float | None = None

    def __str__(self):
        return self.kind if self.distance_km is None else f"{self.kind}:{self.distance_km:g}"


_SCHEME_RE = re.compile(r"^(contiguity|band|invdist)(?::([0-9.eE+-]+))?$")


def parse_scheme(text) -> Scheme:
    if isinstance(text, Scheme):
        return text
    m = _SCHEME_RE.match(str(text).strip())
    if not m:
        raise ParameterError(f"bad scheme {text!r}; use contiguity, band:<km> or invdist:<km>")
    kind, dist = m.group(1), m.group(2)
    if kind == "contiguity":
        if dist is not None:
            raise ParameterError("contiguity takes no distance")
        return Scheme(kind)
    if dist is None:
        raise ParameterError(f"{kind} requires a distance in km, e.g. {kind}:100")
    value = float(dist)
    if not value > 0:
        raise ParameterError("distance threshold must be positive")
    return Scheme(kind, value)


@dataclass(frozen=True)
class SpatialWeights:
    """Neighbor lists with weights; neighbor indices are sorted ascending."""

    ids: tuple[str, ...]
    neighbors: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]
    scheme: str
    row_standardized: bool = False

    def __post_init__(self):
        if not (len(self.ids) == len(self.neighbors) == len(self.weights)):
            raise ShapeError("ids, neighbors and weights must align")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def cardinalities(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    @property
    def isolate_mask(self) -> np.ndarray:
        return self.cardinalities == 0

    @property
    def isolates(self) -> tuple[str, ...]:
        return tuple(i for i, nb in zip(self.ids, self.neighbors) if len(nb) == 0)

    def to_dense(self) -> np.ndarray:
        W = np.zeros((self.n, self.n))
        for i, (nb, w) in enumerate(zip(self.neighbors, self.weights)):
            W[i, nb] = w
        return W

    def _flat(self):
        rows = np.repeat(np.arange(self.n), self.cardinalities)
        cols = np.concatenate(self.neighbors) if self.n else np.zeros(0, dtype=np.int64)
        data = np.concatenate(self.weights) if self.n else np.zeros(0)
        return rows, cols.astype(np.int64), data

    def lag(self, z) -> np.ndarray:
        """Spatial lag ``sum_j w_ij z_j`` (zero for isolates)."""
        z = np.asarray(z, dtype=float)
        rows, cols, data = self._flat()
        return np.bincount(rows, weights=data * z[cols], minlength=self.n)


def _from_pairs(ids, pairs_i, pairs_j, values, scheme):
    n = len(ids)
    order = np.lexsort((pairs_j, pairs_i))
    pi, pj, pv = pairs_i[order], pairs_j[order], values[order]
    bounds = np.searchsorted(pi, np.arange(n + 1))
    neighbors = tuple(pj[bounds[i]:bounds[i + 1]].astype(np.int64) for i in range(n))
    weights = tuple(pv[bounds[i]:bounds[i + 1]].astype(float) for i in range(n))
    return SpatialWeights(tuple(ids), neighbors, weights, scheme)


def build_weights(scheme, ids: Sequence[str], centroids=None, adjacency=None) -> SpatialWeights:
    """Construct raw (not yet row-standardized) weights.

    ``contiguity`` uses ``adjacency``, an iterable of id pairs (symmetric
    closure applied). ``band:d`` gives weight 1 for 0 < dist <= d and
    ``invdist:c`` gives 1/dist for 0 < dist <= c; both need ``centroids``
    as an (n, 2) lat/lon array aligned with ``ids`` or a mapping id -> (lat, lon).
    """
    scheme = parse_scheme(scheme)
    ids = tuple(ids)
    index = {code: i for i, code in enumerate(ids)}
    if len(index) != len(ids):
        raise ParameterError("ids must be unique")
    n = len(ids)
    if scheme.kind == "contiguity":
        if adjacency is None:
            raise ParameterError("contiguity weights need an adjacency edge list")
        edges = set()
        for a, b in adjacency:
            if a not in index or b not in index:
                raise UnknownIdError(f"adjacency edge ({a}, {b}) references unknown fips")
            if a != b:
                edges.add((index[a], index[b]))
                edges.add((index[b], index[a]))
        if edges:
            arr = np.array(sorted(edges), dtype=np.int64)
            pi, pj = arr[:, 0], arr[:, 1]
        else:
            pi = pj = np.zeros(0, dtype=np.int64)
        return _from_pairs(ids, pi, pj, np.ones(len(pi)), str(scheme))

    if centroids is None:
        raise ParameterError(f"{scheme.kind} weights need centroids")
    if isinstance(centroids, dict):
        try:
            coords = np.array([centroids[code] for code in ids], dtype=float).reshape(n, 2)
        except KeyError as exc:
            raise UnknownIdError(f"no centroid for fips {exc.args[0]}") from None
    else:
        coords = np.asarray(centroids, dtype=float).reshape(n, 2)
    D = haversine_matrix(coords[:, 0], coords[:, 1])
    off = ~np.eye(n, dtype=bool)
    if np.any((D == 0) & off):
        i, j = np.argwhere((D == 0) & off)[0]
        raise DegenerateGeometryError(f"counties {ids[i]} and {ids[j]} share a centroid")
    # relative slack so a lattice spacing equal to the cutoff is included
    # despite last-bit rounding in the trigonometry
    within = (D > 0) & (D <= scheme.distance_km * (1 + DISTANCE_RTOL))
    pi, pj = np.nonzero(within)
    if scheme.kind == "band":
        values = np.ones(len(pi))
    else:
        values = 1.0 / D[pi, pj]
    return _from_pairs(ids, pi, pj, values, str(scheme))


def row_standardize(w: SpatialWeights) -> SpatialWeights:
    if w.row_standardized:
        return w
    weights = tuple(wt / wt.sum() if len(wt) else wt for wt in w.weights)
    return SpatialWeights(w.ids, w.neighbors, weights, w.scheme, row_standardized=True)


def load_adjacency(path) -> list[tuple[str, str]]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        for col in ("fips_a", "fips_b"):
            if col not in header:
                raise SchemaError(col, path)
        ia, ib = header.index("fips_a"), header.index("fips_b")
        return [(row[ia].strip(), row[ib].strip()) for row in reader if row]


def load_centroids(path) -> dict[str, tuple[float, float]]:
    path = Path(path)
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        for col in ("fips", "lat", "lon"):
            if col not in header:
                raise SchemaError(col, path)
        pos = [header.index(c) for c in ("fips", "lat", "lon")]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                lat, lon = float(row[pos[1]]), float(row[pos[2]])
            except ValueError:
                raise ParseError("non-numeric coordinate", row=lineno, path=path) from None
            _check_coords(lat, lon)
            out[row[pos[0]].strip()] = (lat, lon)
    return out


# -- statistics -----------------------------------------------------------------------


def _deviations(values):
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise ShapeError("need a 1-D vector of at least 2 values")
    z = x - x.mean()
    m2 = float(z @ z) / len(z)
    if m2 == 0:
        raise DegenerateError("values are constant; local Moran's I is undefined")
    return z, m2


def local_moran(values, w: SpatialWeights, standardize: bool = True) -> np.ndarray:
    """Local Moran's I per location; NaN for isolates.

    Weights are row-standardized first unless ``standardize`` is False.
    """
    if standardize:
        w = row_standardize(w)
    if len(values) != w.n:
        raise ShapeError(f"{len(values)} values for {w.n} locations")
    z, m2 = _deviations(values)
    out = z / m2 * w.lag(z)
    out[w.isolate_mask] = np.nan
    return out


def global_moran(values, w: SpatialWeights, standardize: bool = True) -> float:
    if standardize:
        w = row_standardize(w)
    z, _ = _deviations(values)
    return float(z @ w.lag(z) / (z @ z))


def _sample_without_replacement(rng, m, k, size):
    """``size`` ordered samples of ``k`` distinct indices from ``range(m)``."""
    if k * k <= m:
        out = rng.integers(0, m, size=(size, k))
        if k > 1:
            while True:
                s = np.sort(out, axis=1)
                bad = np.flatnonzero(np.any(s[:, 1:] == s[:, :-1], axis=1))
                if len(bad) == 0:
                    break
                out[bad] = rng.integers(0, m, size=(len(bad), k))
        return out
    return np.argsort(rng.random((size, m)), axis=1)[:, :k]


@dataclass(frozen=True)
class LisaResult:
    ids: tuple[str, ...]
    values: np.ndarray
    local_i: np.ndarray
    z_score: np.ndarray
    pseudo_p: np.ndarray
    lag: np.ndarray  # spatial lag of deviations
    cluster_class: np.ndarray
    degenerate: np.ndarray
    permutations: int
    alpha: float

    @property
    def significant(self) -> np.ndarray:
        return np.isin(self.cluster_class, ("HH", "LL", "HL", "LH"))

    def members(self, cls: str) -> list[str]:
        return [i for i, c in zip(self.ids, self.cluster_class) if c == cls]


def _permute_county(i, z, m2, w, permutations, seed):
    nb = w.neighbors[i]
    wt = w.weights[i]
    n = len(z)
    observed = z[i] / m2 * float(z[nb] @ wt)
    rng = np.random.default_rng([seed, i])
    idx = _sample_without_replacement(rng, n - 1, len(nb), permutations)
    idx = idx + (idx >= i)  # skip location i itself
    sims = z[i] / m2 * (z[idx] @ wt)
    ge = int(np.sum(sims >= observed))
    le = int(np.sum(sims <= observed))
    sd = float(sims.std())
    p = min(1.0, 2.0 * (min(ge, le) + 1) / (permutations + 1))
    if sd == 0:
        return observed, float("nan"), 1.0, True
    return observed, (observed - float(sims.mean())) / sd, p, False


def _enumerate_county(i, z, m2, w):
    """Exact tail fractions over every arrangement of the other n-1 values."""
    nb = w.neighbors[i]
    wt = w.weights[i]
    others = np.array([j for j in range(len(z)) if j != i])
    slot = np.searchsorted(others, nb)
    observed = z[i] / m2 * float(z[nb] @ wt)
    perms = np.array(list(itertools.permutations(others)))
    sims = z[i] / m2 * (z[perms[:, slot]] @ wt)
    # the identity arrangement is among the enumerated ones; compare with a
    # relative slack so it counts on both sides despite summation order
    tol = 1e-12 * max(1.0, abs(observed))
    ge = int(np.sum(sims >= observed - tol))
    le = int(np.sum(sims <= observed + tol))
    sd = float(sims.std())
    p = min(1.0, 2.0 * min(ge, le) / len(perms))
    if sd == 0:
        return observed, float("nan"), 1.0, True
    return observed, (observed - float(sims.mean())) / sd, p, False


def classify_lisa(values, lisa: LisaResult, alpha: float) -> np.ndarray:
    """Quadrant labels for significant counties, NS otherwise."""
    z = np.asarray(values, dtype=float) - np.mean(values)
    lag = lisa.lag
    classes = np.full(len(z), "NS", dtype="<U7")
    sig = (lisa.pseudo_p <= alpha) & ~lisa.degenerate
    classes[sig & (z > 0) & (lag > 0)] = "HH"
    classes[sig & (z < 0) & (lag < 0)] = "LL"
    classes[sig & (z > 0) & (lag < 0)] = "HL"
    classes[sig & ~((z > 0) & (lag > 0)) & ~((z < 0) & (lag < 0)) & ~((z > 0) & (lag < 0))] = "LH"
    classes[np.isnan(lisa.local_i)] = "ISOLATE"
    return classes


def permutation_inference(values, w: SpatialWeights, permutations: int = 999, seed: int = 0,
                          alpha: float = 0.05, n_jobs: int = 1, standardize: bool = True,
                          exhaustive: bool = False) -> LisaResult:
    """Local Moran's I with conditional-permutation z-scores and pseudo p-values.

    The pseudo p-value doubles the smaller tail count
    ``min(#{I* >= I}, #{I* <= I}) + 1`` over ``permutations + 1`` (capped at 1),
    so roughly ``alpha`` of counties test significant under spatial randomness.
    Isolates get NaN statistics and class ISOLATE.

    With ``exhaustive=True`` (n <= 9 only) every arrangement of the other
    values is enumerated and the p-value is the exact doubled tail fraction.
    """
    if exhaustive:
        if w.n > 9:
            raise ParameterError("exhaustive enumeration is limited to n <= 9")
        permutations = math.factorial(w.n - 1)
    elif permutations < 99:
        raise ParameterError("need at least 99 permutations")
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")
    if standardize:
        w = row_standardize(w)
    values = np.asarray(values, dtype=float)
    local_i = local_moran(values, w, standardize=False)
    z, m2 = _deviations(values)
    n = w.n
    zs = np.full(n, np.nan)
    ps = np.full(n, np.nan)
    degenerate = np.zeros(n, dtype=bool)
    todo = np.flatnonzero(~w.isolate_mask)

    def run(chunk):
        for i in chunk:
            if exhaustive:
                _, zs[i], ps[i], degenerate[i] = _enumerate_county(i, z, m2, w)
            else:
                _, zs[i], ps[i], degenerate[i] = _permute_county(i, z, m2, w, permutations, seed)

    if n_jobs > 1 and len(todo):
        chunks = np.array_split(todo, n_jobs * 4)
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(run, chunks))
    else:
        run(todo)
    result = LisaResult(
        ids=w.ids,
        values=values,
        local_i=local_i,
        z_score=zs,
        pseudo_p=ps,
        lag=w.lag(z),
        cluster_class=np.full(n, "NS", dtype="<U7"),
        degenerate=degenerate,
        permutations=permutations,
        alpha=alpha,
    )
    classes = classify_lisa(values, result, alpha)
    return LisaResult(**{**result.__dict__, "cluster_class": classes})


def align_values(ids: Sequence[str], values, w: SpatialWeights) -> np.ndarray:
    """Reorder ``values`` (aligned with ``ids``) into the weights' id order."""
    lookup = dict(zip(ids, np.asarray(values, dtype=float)))
    try:
        return np.array([lookup[i] for i in w.ids])
    except KeyError as exc:
        raise UnknownIdError(f"no value for fips {exc.args[0]}") from None


@dataclass(frozen=True)
class OutlierReport:
    residual: LisaResult | None
    impact: LisaResult | None
    unexpectedly_high: tuple[str, ...]
    unexpectedly_low: tuple[str, ...]
    impact_increased: tuple[str, ...]
    impact_reduced: tuple[str, ...]
    notes: tuple[str, ...] = ()


def outlier_counties(dual, w: SpatialWeights, permutations: int = 999, seed: int = 0,
                     alpha: float = 0.05, n_jobs: int = 1, standardize: bool = True) -> OutlierReport:
    """LISA on residuals (unexpectedly high/low) and on modifiable impacts.

    ``dual`` is a DualModelResult. A constant field (e.g. all residuals zero)
    is reported as degenerate and yields no labels.
    """
    notes = []
    results = {}
    for key in ("residual", "impact"):
        vals = align_values(dual.fips, getattr(dual, key), w)
        try:
            results[key] = permutation_inference(vals, w, permutations, seed, alpha, n_jobs, standardize)
        except DegenerateError:
            msg = f"{key} field is constant; LISA skipped"
            warnings.warn(msg, SpatialWarning, stacklevel=2)
            notes.append(msg)
            results[key] = None

    def members(res, cls):
        return tuple(res.members(cls)) if res is not None else ()

    return OutlierReport(
        residual=results["residual"],
        impact=results["impact"],
        unexpectedly_high=members(results["residual"], "HH"),
        unexpectedly_low=members(results["residual"], "LL"),
        impact_increased=members(results["impact"], "HH"),
        impact_reduced=members(results["impact"], "LL"),
        notes=tuple(notes),
    )


def write_lisa(lisa: LisaResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips", "value", "local_i", "z_score", "pseudo_p", "class"])
        for k, code in enumerate(lisa.ids):
            w.writerow([code] + [_fmt(v) for v in (lisa.values[k], lisa.local_i[k],
                                                   lisa.z_score[k], lisa.pseudo_p[k])]
                       + [lisa.cluster_class[k]])


def _fmt(v):
    return "" if np.isnan(v) else repr(float(v))
