import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from countyir import dual_model as dm
from countyir import spatial as sp
from countyir import synth
from countyir.errors import (DegenerateError, DegenerateGeometryError, DomainError, ParameterError,
                             ShapeError, UnknownIdError)

KM_PER_DEG = math.pi * 6371.0 / 180.0
lat = st.floats(-90, 90)
lon = st.floats(-180, 180)


def _line(n, spacing_km=100.0):
    """n points on the equator, ``spacing_km`` apart."""
    return np.column_stack([np.zeros(n), np.arange(n) * spacing_km / KM_PER_DEG])


def _ids(n):
    return tuple(f"{i + 1:05d}" for i in range(n))


def _chain(n):
    ids = _ids(n)
    return sp.build_weights("contiguity", ids, adjacency=list(zip(ids[:-1], ids[1:])))


# -- haversine ------------------------------------------------------------------------------------


def test_haversine_examples():
    assert sp.haversine_km((12.0, 34.0), (12.0, 34.0)) == 0
    assert sp.haversine_km((0, 0), (0, 1)) == pytest.approx(math.pi * 6371.0 / 180, abs=1e-3)
    assert sp.haversine_km((0, 0), (0, 1)) == pytest.approx(111.1949, abs=1e-3)
    assert sp.haversine_km((0, 0), (90, 0)) == pytest.approx(10007.543, abs=1e-2)


@pytest.mark.parametrize("a,b", [((91, 0), (0, 0)), ((0, 181), (0, 0)), ((0, 0), (-90.5, 0))])
def test_haversine_domain(a, b):
    with pytest.raises(DomainError):
        sp.haversine_km(a, b)


@given(lat, lon, lat, lon, lat, lon)
def test_haversine_metric(la1, lo1, la2, lo2, la3, lo3):
    a, b, c = (la1, lo1), (la2, lo2), (la3, lo3)
    assert sp.haversine_km(a, b) == pytest.approx(sp.haversine_km(b, a), abs=1e-9)
    assert sp.haversine_km(a, c) <= sp.haversine_km(a, b) + sp.haversine_km(b, c) + 1e-6


def test_haversine_matrix_matches_scalar(rng):
    pts = np.column_stack([rng.uniform(-60, 60, 8), rng.uniform(-170, 170, 8)])
    D = sp.haversine_matrix(pts[:, 0], pts[:, 1])
    assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0)
    assert D[2, 5] == pytest.approx(sp.haversine_km(pts[2], pts[5]), rel=1e-12)


# -- weights ----------------------------------------------------------------------------------------


def test_parse_scheme():
    assert sp.parse_scheme("contiguity").kind == "contiguity"
    s = sp.parse_scheme("invdist:100")
    assert (s.kind, s.distance_km, str(s)) == ("invdist", 100.0, "invdist:100")
    for bad in ("band", "band:-3", "queen", "contiguity:5", "invdist:abc"):
        with pytest.raises(ParameterError):
            sp.parse_scheme(bad)


def test_band_on_line():
    w = sp.build_weights("band:150", _ids(3), centroids=_line(3))
    assert w.cardinalities.tolist() == [1, 2, 1]
    assert all(np.all(x == 1.0) for x in w.weights)


def test_invdist_on_line():
    w = sp.build_weights("invdist:100", _ids(3), centroids=_line(3))
    assert w.cardinalities.tolist() == [1, 2, 1]
    for x in w.weights:
        assert np.allclose(x, 1 / 100, rtol=1e-9)


def test_centroid_mapping_input():
    ids = _ids(3)
    mapping = {code: tuple(c) for code, c in zip(ids, _line(3))}
    w = sp.build_weights("band:150", ids, centroids=mapping)
    assert w.cardinalities.tolist() == [1, 2, 1]
    with pytest.raises(UnknownIdError):
        sp.build_weights("band:150", ids + ("99999",), centroids=mapping)


def test_empty_adjacency_all_isolates():
    w = sp.build_weights("contiguity", _ids(4), adjacency=[])
    assert w.isolates == _ids(4)


def test_adjacency_errors_and_symmetry():
    ids = _ids(3)
    with pytest.raises(UnknownIdError, match="00009"):
        sp.build_weights("contiguity", ids, adjacency=[("00001", "00009")])
    w = sp.build_weights("contiguity", ids, adjacency=[("00001", "00002"), ("00002", "00001"),
                                                        ("00003", "00003")])
    W = w.to_dense()
    assert np.array_equal(W, W.T) and np.all(np.diag(W) == 0)
    assert w.isolates == ("00003",)


def test_zero_distance_is_degenerate():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    with pytest.raises(DegenerateGeometryError):
        sp.build_weights("band:500", _ids(3), centroids=pts)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["band:80", "invdist:120"]))
def test_weights_invariants(seed, scheme):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(-2, 2, 25), rng.uniform(-2, 2, 25)])
    w = sp.build_weights(scheme, _ids(25), centroids=pts)
    W = w.to_dense()
    assert np.all(np.diag(W) == 0) and np.all(W >= 0)
    assert np.array_equal(W > 0, (W > 0).T)
    rs = sp.row_standardize(w)
    sums = rs.to_dense().sum(axis=1)
    active = ~w.isolate_mask
    assert np.all(np.abs(sums[active] - 1) < 1e-12)
    assert np.all(sums[~active] == 0)


def test_row_standardize_examples():
    ids = _ids(3)
    w = sp.build_weights("invdist:250", ids, centroids=_line(3, 100.0))
    rs = sp.row_standardize(w)
    assert np.allclose(rs.weights[0], [2 / 3, 1 / 3])
    assert np.allclose(rs.weights[1], [0.5, 0.5])
    assert sp.row_standardize(rs) is rs
    raw_again = sp.SpatialWeights(rs.ids, rs.neighbors, rs.weights, rs.scheme)
    twice = sp.row_standardize(raw_again)
    for a, b in zip(twice.weights, rs.weights):
        assert np.allclose(a, b, rtol=0, atol=1e-15)


def test_load_files(tmp_path):
    (tmp_path / "adj.csv").write_text("fips_a,fips_b\n00001,00002\n00002,00003\n")
    (tmp_path / "cent.csv").write_text("fips,lat,lon\n00001,10.5,-80.25\n")
    assert sp.load_adjacency(tmp_path / "adj.csv") == [("00001", "00002"), ("00002", "00003")]
    assert sp.load_centroids(tmp_path / "cent.csv") == {"00001": (10.5, -80.25)}
    (tmp_path / "bad.csv").write_text("fips,lat,lon\n00001,100,0\n")
    with pytest.raises(DomainError):
        sp.load_centroids(tmp_path / "bad.csv")


# -- local Moran --------------------------------------------------------------------------------------


def test_two_node_example():
    w = _chain(2)
    assert sp.local_moran([1.0, -1.0], w).tolist() == [-1.0, -1.0]
    assert list(synth.brute_force_moran_oracle([1.0, -1.0], w.to_dense())) == [-1.0, -1.0]


def test_separated_clusters_positive():
    ids = _ids(6)
    edges = [("00001", "00002"), ("00002", "00003"), ("00001", "00003"),
             ("00004", "00005"), ("00005", "00006"), ("00004", "00006")]
    w = sp.build_weights("contiguity", ids, adjacency=edges)
    vals = [5.0, 5.0, 5.0, -3.0, -3.0, -3.0]
    out = sp.local_moran(vals, w)
    assert np.all(out > 0)
    ref = synth.brute_force_moran_oracle(vals, sp.row_standardize(w).to_dense())
    assert np.allclose(out, ref, atol=1e-12)


def test_constant_field_degenerate():
    with pytest.raises(DegenerateError):
        sp.local_moran([2.0, 2.0, 2.0], _chain(3))


def test_shape_checks():
    with pytest.raises(ShapeError):
        sp.local_moran([1.0, 2.0], _chain(3))


def test_isolates_are_nan():
    ids = _ids(3)
    w = sp.build_weights("contiguity", ids, adjacency=[("00001", "00002")])
    out = sp.local_moran([1.0, 2.0, 5.0], w)
    assert np.isnan(out[2]) and np.all(np.isfinite(out[:2]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 50), st.floats(-100, 100))
def test_moran_properties(seed, a, b):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(10, 60))
    pts = np.column_stack([rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)])
    w = sp.build_weights("invdist:400", _ids(n), centroids=pts)
    x = rng.normal(size=n)
    base = sp.local_moran(x, w)
    ref = synth.brute_force_moran_oracle(x, sp.row_standardize(w).to_dense())
    ok = ~np.isnan(base)
    assert np.max(np.abs(base[ok] - np.asarray(ref)[ok])) < 1e-12
    for scale in (a, -a):
        assert np.nanmax(np.abs(sp.local_moran(scale * x + b, w) - base)) < 1e-9
    if not w.isolate_mask.any():
        assert abs(base.mean() - sp.global_moran(x, w)) < 1e-9
        assert abs(sp.global_moran(x, w) - synth.brute_force_global_moran(x, sp.row_standardize(w).to_dense())) < 1e-12


def test_unstandardized_option_matches_raw_oracle(rng):
    pts = np.column_stack([rng.uniform(-1, 1, 30), rng.uniform(-1, 1, 30)])
    w = sp.build_weights("invdist:300", _ids(30), centroids=pts)
    x = rng.normal(size=30)
    out = sp.local_moran(x, w, standardize=False)
    ref = synth.brute_force_moran_oracle(x, w.to_dense())
    ok = ~np.isnan(out)
    assert np.allclose(out[ok], np.asarray(ref)[ok], atol=1e-12)


# -- permutation inference --------------------------------------------------------------------------


def test_exhaustive_matches_enumeration_oracle():
    w = _chain(6)
    rng = np.random.default_rng(21)
    x = rng.normal(size=6) * 1e-3
    res = sp.permutation_inference(x, w, exhaustive=True)
    W = sp.row_standardize(w).to_dense()
    expected = [synth.exhaustive_pseudo_p(x, W, i)[0] for i in range(6)]
    assert np.allclose(res.pseudo_p, expected, atol=1e-12)
    assert res.permutations == 120


def test_inference_determinism_and_threads(rng):
    pts = np.column_stack([rng.uniform(-1, 1, 80), rng.uniform(-1, 1, 80)])
    w = sp.build_weights("invdist:60", _ids(80), centroids=pts)
    x = rng.normal(size=80)
    a = sp.permutation_inference(x, w, 199, seed=5)
    b = sp.permutation_inference(x, w, 199, seed=5, n_jobs=4)
    for field in ("local_i", "z_score", "pseudo_p"):
        assert np.array_equal(getattr(a, field), getattr(b, field), equal_nan=True)
    assert np.array_equal(a.cluster_class, b.cluster_class)
    c = sp.permutation_inference(x, w, 199, seed=6)
    assert not np.array_equal(a.pseudo_p, c.pseudo_p, equal_nan=True)


def test_inference_invariants(rng):
    n = 120
    pts = np.column_stack([rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)])
    w = sp.build_weights("invdist:50", _ids(n), centroids=pts)
    x = rng.normal(size=n)
    P = 199
    res = sp.permutation_inference(x, w, P, seed=1, alpha=0.1)
    ok = ~np.isnan(res.pseudo_p)
    assert np.all(res.pseudo_p[ok] >= 1 / (P + 1)) and np.all(res.pseudo_p[ok] <= 1)
    assert np.all(res.pseudo_p[res.significant] <= 0.1)
    assert np.all(res.cluster_class[w.isolate_mask] == "ISOLATE")
    counts = [int(np.sum(sp.classify_lisa(x, res, a) != "NS") - np.sum(w.isolate_mask))
              for a in (0.1, 0.05, 0.01)]
    assert counts[0] >= counts[1] >= counts[2]


def test_permutation_parameter_checks():
    w = _chain(5)
    with pytest.raises(ParameterError):
        sp.permutation_inference(np.arange(5.0), w, 50)
    with pytest.raises(ParameterError):
        sp.permutation_inference(np.arange(5.0), w, 199, alpha=1.5)
    with pytest.raises(ParameterError):
        sp.permutation_inference(np.arange(12.0), _chain(12), exhaustive=True)


def test_null_rate_near_alpha():
    # spatially random fields: about 5% of counties significant
    cfg = synth.SynthConfig(rows=15, cols=20, n_non_modifiable=1, n_modifiable=0, seed=0)
    cents = synth.lattice_centroids(cfg)
    w = sp.build_weights("invdist:40", _ids(cfg.n_counties), centroids=cents)
    rates = []
    for seed in range(10):
        x = np.random.default_rng(1000 + seed).normal(size=cfg.n_counties)
        rates.append(sp.permutation_inference(x, w, 199, seed=seed).significant.mean())
    total = np.mean(rates)
    sd = math.sqrt(0.05 * 0.95 / (cfg.n_counties * len(rates)))
    assert abs(total - 0.05) < 4 * sd + 0.01


def test_classification_quadrants():
    ids = _ids(4)
    w = sp.build_weights("contiguity", ids, adjacency=[("00001", "00002"), ("00003", "00004")])
    x = np.array([10.0, 9.0, -10.0, -9.0])
    base = sp.permutation_inference(x, w, 99, seed=0)
    forced = sp.LisaResult(**{**base.__dict__, "pseudo_p": np.full(4, 0.01)})
    assert sp.classify_lisa(x, forced, 0.05).tolist() == ["HH", "HH", "LL", "LL"]
    weak = sp.LisaResult(**{**base.__dict__, "pseudo_p": np.full(4, 0.2)})
    assert sp.classify_lisa(x, weak, 0.05).tolist() == ["NS"] * 4
    y = np.array([10.0, -9.0, 1.0, -2.0])
    lag_base = sp.permutation_inference(y, w, 99, seed=0)
    forced_y = sp.LisaResult(**{**lag_base.__dict__, "pseudo_p": np.full(4, 0.01)})
    assert sp.classify_lisa(y, forced_y, 0.05).tolist() == ["HL", "LH", "HL", "LH"]


def _planted(seed=3):
    cfg = synth.SynthConfig(rows=20, cols=25, n_non_modifiable=4, n_modifiable=2, noise_sd=10.0,
                            clusters=(synth.PlantedCluster((10, 12), 1, 30.0),), seed=seed)
    return synth.generate_synthetic(cfg)


def test_planted_cluster_classified_hh():
    b = _planted()
    w = sp.build_weights("invdist:40", b.table.fips, centroids=b.centroids)
    resid = b.table.observed_ir - b.noiseless_response + 30.0 * (b.cluster_id == 1)
    res = sp.permutation_inference(resid, w, 999, seed=2)
    assert np.mean(res.cluster_class[b.cluster_id == 1] == "HH") >= 0.8


def test_outlier_counties_and_sign_symmetry():
    b = _planted()
    resid = b.table.observed_ir - b.noiseless_response + 30.0 * (b.cluster_id == 1)
    dual = dm.DualModelResult.from_predictions(b.table.fips, b.table.observed_ir,
                                               b.table.observed_ir - resid,
                                               b.table.observed_ir - resid + 0.1 * resid)
    w = sp.build_weights("invdist:40", b.table.fips, centroids=b.centroids)
    rep = sp.outlier_counties(dual, w, 999, seed=4)
    planted = {f for f, c in zip(b.table.fips, b.cluster_id) if c == 1}
    assert len(planted & set(rep.unexpectedly_high)) >= 0.8 * len(planted)
    neg = dm.DualModelResult.from_predictions(b.table.fips, -dual.observed, -dual.pred1,
                                              -dual.pred2)
    rep_neg = sp.outlier_counties(neg, w, 999, seed=4)
    assert rep_neg.unexpectedly_high == rep.unexpectedly_low
    assert rep_neg.unexpectedly_low == rep.unexpectedly_high


def test_outliers_all_zero_residuals():
    ids = _ids(5)
    w = _chain(5)
    dual = dm.DualModelResult.from_predictions(ids, np.ones(5), np.ones(5), np.ones(5))
    with pytest.warns(sp.SpatialWarning):
        rep = sp.outlier_counties(dual, w, 99)
    assert rep.residual is None and rep.unexpectedly_high == () and rep.unexpectedly_low == ()


def test_lisa_file(tmp_path):
    w = _chain(5)
    res = sp.permutation_inference(np.array([1.0, 3.0, 2.0, 8.0, 5.0]), w, 99, seed=1)
    sp.write_lisa(res, tmp_path / "l.csv")
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0] == "fips,value,local_i,z_score,pseudo_p,class"
    assert len(lines) == 6
