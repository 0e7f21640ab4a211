"""Synthetic county bundles with planted ground truth, plus test oracles.

The oracles here deliberately share no numeric code with ``regressors`` or
``spatial``: ISTA instead of coordinate descent, plain double loops instead
of vectorized neighbor sums. They are slow and only meant for tests.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (
    CATEGORIES,
    CountyTable,
    FeatureTaxonomy,
    TaxonomyEntry,
    write_county_table,
    write_taxonomy,
)
from .errors import DegenerateError, ParameterError

KM_PER_DEGREE = math.pi * 6371.0 / 180.0


@dataclass(frozen=True)
class PlantedCluster:
    center: tuple[int, int]
    radius: int = 1
    offset: float = 30.0


@dataclass(frozen=True)
class SynthConfig:
    rows: int = 10
    cols: int = 10
    spacing_km: float = 25.0
    origin: tuple[float, float] = (0.0, 0.0)  # lat/lon of the lattice center
    n_non_modifiable: int = 6
    n_modifiable: int = 4
    # Standardized-scale coefficients, non-modifiable features first.
    # None draws nothing and uses a default pattern (see _default_beta).
    beta: tuple[float, ...] | None = None
    intercept: float = 120.0
    noise_sd: float = 5.0
    clusters: tuple[PlantedCluster, ...] = ()
    expert: tuple[str, ...] = ()
    percent_fraction: float = 0.5
    seed: int = 0

    @property
    def n_counties(self) -> int:
        return self.rows * self.cols

    @property
    def n_features(self) -> int:
        return self.n_non_modifiable + self.n_modifiable

    def validate(self):
        if self.rows < 1 or self.cols < 1:
            raise ParameterError("lattice must have at least one cell")
        if self.noise_sd < 0:
            raise ParameterError("noise_sd must be nonnegative")
        if self.beta is not None and len(self.beta) != self.n_features:
            raise ParameterError(f"beta needs {self.n_features} entries, got {len(self.beta)}")
        for c in self.clusters:
            if c.radius < 0:
                raise ParameterError("cluster radius must be nonnegative")
            if not (0 <= c.center[0] < self.rows and 0 <= c.center[1] < self.cols):
                raise ParameterError(f"cluster center {c.center} outside lattice")
        if self.n_counties > 99_999:
            raise ParameterError("lattice too large for 5-digit fips codes")


@dataclass
class SynthBundle:
    config: SynthConfig
    table: CountyTable
    taxonomy: FeatureTaxonomy
    centroids: np.ndarray  # (n, 2) lat, lon
    adjacency: list[tuple[str, str]]
    beta: np.ndarray
    beta_contribution: np.ndarray
    cluster_id: np.ndarray
    noiseless_response: np.ndarray
    geometry: dict = field(repr=False, default_factory=dict)

    @property
    def cell(self) -> np.ndarray:
        """(row, col) lattice position per county."""
        n = self.config.n_counties
        return np.column_stack(np.divmod(np.arange(n), self.config.cols))


def feature_names_for(config: SynthConfig) -> tuple[str, ...]:
    return tuple(f"nm{j:02d}" for j in range(config.n_non_modifiable)) + tuple(
        f"mod{j:02d}" for j in range(config.n_modifiable)
    )


def _default_beta(config):
    beta = np.zeros(config.n_features)
    strengths = (4.0, -3.0, 2.5, -2.0, 1.5)
    for j in range(min(config.n_non_modifiable, len(strengths))):
        beta[j] = strengths[j]
    if config.n_modifiable:
        beta[config.n_non_modifiable] = 2.0
    return beta


def _taxonomy(config, names):
    nm_cats = ("socioeconomics", "family")
    mod_cats = ("healthcare", "lifestyle", "environment")
    entries = []
    for j, name in enumerate(names):
        nm = j < config.n_non_modifiable
        cats = nm_cats if nm else mod_cats
        k = j if nm else j - config.n_non_modifiable
        entries.append(
            TaxonomyEntry(
                feature_name=name,
                category=cats[k % len(cats)],
                non_modifiable=nm,
                modifiable=not nm,
                expert=name in config.expert,
                definition=f"synthetic {'non-modifiable' if nm else 'modifiable'} feature {k}",
            )
        )
    assert all(e.category in CATEGORIES for e in entries)
    return FeatureTaxonomy(tuple(entries))


def lattice_centroids(config: SynthConfig) -> np.ndarray:
    lat0, lon0 = config.origin
    step = config.spacing_km / KM_PER_DEGREE
    r = np.arange(config.rows) - (config.rows - 1) / 2
    c = np.arange(config.cols) - (config.cols - 1) / 2
    lat = lat0 + r * step
    lon = lon0 + c * step / math.cos(math.radians(lat0))
    rr, cc = np.meshgrid(lat, lon, indexing="ij")
    return np.column_stack([rr.ravel(), cc.ravel()])


def queen_adjacency(rows: int, cols: int) -> list[tuple[int, int]]:
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            for dr, dc in ((0, 1), (1, -1), (1, 0), (1, 1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    edges.append((i, rr * cols + cc))
    return edges


def _cell_geometry(config, centroids, fips):
    lat0, _ = config.origin
    half_lat = config.spacing_km / KM_PER_DEGREE / 2
    half_lon = half_lat / math.cos(math.radians(lat0))
    features = []
    for code, (lat, lon) in zip(fips, centroids):
        ring = [
            [round(lon - half_lon, 6), round(lat - half_lat, 6)],
            [round(lon + half_lon, 6), round(lat - half_lat, 6)],
            [round(lon + half_lon, 6), round(lat + half_lat, 6)],
            [round(lon - half_lon, 6), round(lat + half_lat, 6)],
            [round(lon - half_lon, 6), round(lat - half_lat, 6)],
        ]
        features.append(
            {"type": "Feature", "properties": {"fips": code},
             "geometry": {"type": "Polygon", "coordinates": [ring]}}
        )
    return {"type": "FeatureCollection", "features": features}


def generate_synthetic(config: SynthConfig) -> SynthBundle:
    """Draw a lattice of counties with a known linear response.

    Latent features are unit Gaussians rescaled to exact sample mean 0 and
    sample sd 1, so ``beta`` is exactly the coefficient vector on the
    standardized scale. A fraction of columns is then stored percent-like
    (``50 + 10 z``, clipped to [0, 100]); the rest are stored as ``z``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, p = config.n_counties, config.n_features
    names = feature_names_for(config)
    latent = rng.standard_normal((n, p))
    if n >= 2:
        latent -= latent.mean(axis=0)
        latent /= latent.std(axis=0, ddof=1)
    n_percent = int(round(config.percent_fraction * p))
    stored = latent.copy()
    stored[:, :n_percent] = 50.0 + 10.0 * latent[:, :n_percent]
    if np.any((stored[:, :n_percent] < 0) | (stored[:, :n_percent] > 100)):
        raise DegenerateError("percent-like feature left [0, 100]; use another seed")
    # Exact standardization of stored columns: recompute latent from stored so
    # the fitted standardizer sees the same numbers the response was built on.
    latent = (stored - stored.mean(axis=0)) / stored.std(axis=0, ddof=1) if n >= 2 else stored

    beta = np.asarray(config.beta, dtype=float) if config.beta is not None else _default_beta(config)
    contribution = latent @ beta
    cells = np.column_stack(np.divmod(np.arange(n), config.cols))
    cluster_id = np.zeros(n, dtype=np.int64)
    offset = np.zeros(n)
    for k, cl in enumerate(config.clusters, start=1):
        inside = np.max(np.abs(cells - np.asarray(cl.center)), axis=1) <= cl.radius
        cluster_id[inside] = k
        offset[inside] = cl.offset
    noiseless = config.intercept + contribution + offset
    noise = rng.standard_normal(n) * config.noise_sd if config.noise_sd > 0 else np.zeros(n)
    response = noiseless + noise
    if np.any(response < 0):
        raise DegenerateError("negative incidence rate generated; raise the intercept")
    female_pop = rng.integers(10_001, 500_000, size=n)

    fips = tuple(f"{i + 1:05d}" for i in range(n))
    table = CountyTable(
        fips=fips,
        names=tuple(f"Cell {r}-{c}" for r, c in cells),
        states=("SY",) * n,
        female_pop=female_pop.astype(np.int64),
        observed_ir=response,
        features=stored,
        feature_names=names,
    )
    centroids = lattice_centroids(config)
    adjacency = [(fips[a], fips[b]) for a, b in queen_adjacency(config.rows, config.cols)]
    return SynthBundle(
        config=config,
        table=table,
        taxonomy=_taxonomy(config, names),
        centroids=centroids,
        adjacency=adjacency,
        beta=beta,
        beta_contribution=contribution,
        cluster_id=cluster_id,
        noiseless_response=noiseless,
        geometry=_cell_geometry(config, centroids, fips),
    )


def write_bundle(bundle: SynthBundle, outdir) -> dict[str, Path]:
    """Write counties/taxonomy/centroids/adjacency/ground truth/geometry files."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "counties": out / "counties.csv",
        "taxonomy": out / "taxonomy.csv",
        "centroids": out / "centroids.csv",
        "adjacency": out / "adjacency.csv",
        "ground_truth": out / "ground_truth.csv",
        "geometry": out / "counties.geojson",
        "config": out / "synth_config.json",
    }
    write_county_table(bundle.table, paths["counties"])
    write_taxonomy(bundle.taxonomy, paths["taxonomy"])
    with open(paths["centroids"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips", "lat", "lon"])
        for code, (lat, lon) in zip(bundle.table.fips, bundle.centroids):
            w.writerow([code, repr(float(lat)), repr(float(lon))])
    with open(paths["adjacency"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips_a", "fips_b"])
        w.writerows(bundle.adjacency)
    with open(paths["ground_truth"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fips", "true_beta_contribution", "cluster_id", "noiseless_response"])
        for i, code in enumerate(bundle.table.fips):
            w.writerow([code, repr(float(bundle.beta_contribution[i])), int(bundle.cluster_id[i]),
                        repr(float(bundle.noiseless_response[i]))])
    with open(paths["geometry"], "w") as fh:
        json.dump(bundle.geometry, fh, separators=(",", ":"))
        fh.write("\n")
    cfg = asdict(bundle.config)
    cfg["beta"] = [float(b) for b in bundle.beta]
    with open(paths["config"], "w") as fh:
        json.dump(cfg, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return paths


# -- oracles ----------------------------------------------------------------------------


def power_iteration_max_eig(A, iterations=1000, tol=1e-13, seed=0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    A = np.asarray(A, dtype=float)
    if A.shape[0] == 0:
        return 0.0
    v = np.random.default_rng(seed).standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        new = float(v @ A @ v)
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            return new
        lam = new
    return lam


def ista_lasso_oracle(X, y, lam, iterations=200_000, stop_tol=0.0):
    """Proximal gradient (ISTA) on ``(1/2n)||y - Xb||^2 + lam ||b||_1``.

    ``y`` is centered first. The step is ``1 / L`` with ``L`` the top
    eigenvalue of ``X'X/n`` (inflated by 1e-12 relative for safety). When
    ``stop_tol`` > 0 the loop ends early once an iterate moves by less than
    that amount in every coordinate.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    b = np.zeros(p)
    if p == 0:
        return b
    yc = y - y.mean()
    L = power_iteration_max_eig(X.T @ X / n) * (1 + 1e-12)
    if L == 0:
        return b
    step = 1.0 / L
    for _ in range(iterations):
        g = -(X.T @ (yc - X @ b)) / n
        u = b - step * g
        nb = np.sign(u) * np.maximum(np.abs(u) - step * lam, 0.0)
        if stop_tol > 0 and np.max(np.abs(nb - b)) < stop_tol:
            return nb
        b = nb
    return b


def brute_force_moran_oracle(values, W):
    """Local Moran's I by explicit double loop over a dense weight matrix."""
    x = [float(v) for v in values]
    n = len(x)
    mean = sum(x) / n
    z = [v - mean for v in x]
    m2 = sum(v * v for v in z) / n
    if m2 == 0:
        raise DegenerateError("constant field")
    out = []
    for i in range(n):
        s = 0.0
        for j in range(n):
            if j != i:
                s += W[i][j] * z[j]
        out.append(z[i] / m2 * s)
    return np.array(out)


def brute_force_global_moran(values, W) -> float:
    x = [float(v) for v in values]
    n = len(x)
    mean = sum(x) / n
    z = [v - mean for v in x]
    num = 0.0
    for i in range(n):
        for j in range(n):
            num += W[i][j] * z[i] * z[j]
    return num / sum(v * v for v in z)


def exhaustive_pseudo_p(values, W, i):
    """Exact conditional-permutation p for county ``i`` (small n only).

    Enumerates every assignment of the other n-1 values to the other
    locations. Returns ``(p_two_sided, frac_ge, frac_le)`` where the
    fractions count arrangements with I >= or <= the observed I (the
    observed arrangement included); the two-sided value doubles the
    smaller tail and caps at 1.
    """
    x = [float(v) for v in values]
    n = len(x)
    if n > 9:
        raise ParameterError("exhaustive enumeration limited to n <= 9")
    mean = sum(x) / n
    z = [v - mean for v in x]
    m2 = sum(v * v for v in z) / n
    others = [j for j in range(n) if j != i]

    def stat(assign):
        s = 0.0
        for loc, val in zip(others, assign):
            s += W[i][loc] * val
        return z[i] / m2 * s

    observed = stat([z[j] for j in others])
    ge = le = total = 0
    for perm in itertools.permutations([z[j] for j in others]):
        v = stat(perm)
        ge += v >= observed
        le += v <= observed
        total += 1
    fge, fle = ge / total, le / total
    return min(1.0, 2.0 * min(fge, fle)), fge, fle


def exhaustive_bic_subset(X, y):
    """Best subset under n*ln(SSE/n) + (k+1)*ln(n), all subsets enumerated."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    yc = y - y.mean()
    Xc = X - X.mean(axis=0)
    best, best_set = math.inf, ()
    for k in range(p + 1):
        for subset in itertools.combinations(range(p), k):
            if subset:
                A = Xc[:, subset]
                coef = np.linalg.solve(A.T @ A, A.T @ yc)
                r = yc - A @ coef
            else:
                r = yc
            sse = float(r @ r)
            score = n * math.log(sse / n) + (k + 1) * math.log(n) if sse > 0 else -math.inf
            if score < best:
                best, best_set = score, subset
    return best_set, best
