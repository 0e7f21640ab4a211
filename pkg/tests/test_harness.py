import warnings

import numpy as np
import pytest

from countyir import dataset as ds
from countyir import fixtures
from countyir import harness
from countyir import regressors as reg
from countyir import synth
from countyir.errors import ParameterError


@pytest.fixture(scope="module")
def bundle():
    cfg = synth.SynthConfig(rows=12, cols=15, n_non_modifiable=8, n_modifiable=4, noise_sd=4.0,
                            expert=("mod01",), seed=11)
    return synth.generate_synthetic(cfg)


@pytest.fixture(scope="module")
def noiseless():
    cfg = synth.SynthConfig(rows=10, cols=12, n_non_modifiable=6, n_modifiable=3, noise_sd=0.0,
                            seed=4)
    return synth.generate_synthetic(cfg)


FINE_GRID = harness.LambdaGrid(n_lambda=60, min_ratio=1e-8)


# -- folds -------------------------------------------------------------------------------------


def test_fold_sizes_1754():
    plan = harness.partition_folds(1754, 10, seed=3)
    assert sorted(plan.sizes()) == [175] * 6 + [176] * 4


def test_fold_sizes_singletons_and_errors():
    assert harness.partition_folds(10, 10, 0).sizes() == [1] * 10
    with pytest.raises(ParameterError):
        harness.partition_folds(9, 10, 0)
    with pytest.raises(ParameterError):
        harness.partition_folds(9, 1, 0)


def test_fold_determinism_and_partition():
    a = harness.partition_folds(321, 10, 99)
    b = harness.partition_folds(321, 10, 99)
    assert np.array_equal(a.assignments, b.assignments)
    assert max(a.sizes()) - min(a.sizes()) <= 1
    plan = harness.nested_plan(321, 5)
    for f in range(10):
        inner = plan.inner[f]
        assert len(inner) == len(plan.train_index(f))
        sizes = np.bincount(inner, minlength=10)
        assert sizes.max() - sizes.min() <= 1


def test_derive_seed_is_stable_and_distinct():
    assert harness.derive_seed(1, 2, 3) == harness.derive_seed(1, 2, 3)
    assert harness.derive_seed(1, 2, 3) != harness.derive_seed(1, 3, 2)
    assert 0 <= harness.derive_seed(2**64 - 1, 0) < 2**63


# -- grid search -------------------------------------------------------------------------------


def _xy(b, universe="all"):
    names, X = ds.select_feature_set(b.table, b.taxonomy, universe)
    return names, X, np.asarray(b.table.observed_ir)


def test_single_point_grid(bundle):
    _, X, y = _xy(bundle)
    assert harness.grid_search_inner(X, y, "lasso", [0.3]) == 0.3


def test_empty_grid(bundle):
    _, X, y = _xy(bundle)
    with pytest.raises(ParameterError):
        harness.grid_search_inner(X, y, "lasso", [])


def _manual_inner_mse(X, y, lam, assignments):
    # independent re-evaluation: fresh standardization and a cold-start fit per fold
    errs = []
    for f in range(assignments.max() + 1):
        tr, te = assignments != f, assignments == f
        m = reg.fit_model("lasso", X[tr], y[tr], hyper=lam, tol=1e-10)
        errs.append(np.mean((y[te] - reg.predict(m, X[te])) ** 2))
    return float(np.mean(errs))


def test_grid_winner_minimizes_inner_mse(bundle):
    _, X, y = _xy(bundle)
    assignments = harness.partition_folds(len(y), 10, 1).assignments
    grid = [2.0, 1.0, 0.5, 0.25, 0.1, 0.03, 0.01]
    best = harness.grid_search_inner(X, y, "lasso", grid, assignments=assignments)
    mses = {lam: _manual_inner_mse(X, y, lam, assignments) for lam in grid}
    assert mses[best] <= min(mses.values()) + 1e-9


def test_tie_goes_to_larger_lambda(bundle):
    _, X, y = _xy(bundle)
    # both penalties exceed lambda_max in every fold: identical all-zero fits
    assert harness.grid_search_inner(X, y, "lasso", [1e6, 1e7]) == 1e7


def test_knn_tie_goes_to_larger_k():
    # constant response: every k predicts perfectly, so all grid points tie
    X2 = np.random.default_rng(0).normal(size=(30, 2))
    y2 = np.ones(30)
    assert harness.grid_search_inner(X2, y2, "knn", [1, 2, 3]) == 3


# -- stability selection and expert merge ---------------------------------------------------------


def test_stable_set_is_intersection(bundle):
    names, X, y = _xy(bundle)
    sel = harness.stable_variable_selection(X, y, names, "lasso", seed=2)
    assert len(sel.per_fold) == 10
    expected = set(names)
    for fold in sel.per_fold:
        expected &= set(fold)
    assert set(sel.stable) == expected
    assert set(sel.stable) <= set(names)
    # a name missing from one fold is excluded even if present in the other nine
    for name in names:
        count = sum(name in fold for fold in sel.per_fold)
        assert (name in sel.stable) == (count == 10)


def test_selection_rejects_knn(bundle):
    names, X, y = _xy(bundle)
    with pytest.raises(ParameterError):
        harness.stable_variable_selection(X, y, names, "knn")


def test_merge_expert_examples():
    tax = fixtures.reference_taxonomy()
    assert len(harness.merge_expert_variables([], tax, tax.names)) == 23
    sup = tax.expert + (tax.names[0],)
    merged = harness.merge_expert_variables(sup, tax, tax.names)
    assert set(merged) == set(sup)
    nm_only = harness.merge_expert_variables([], tax, tax.non_modifiable)
    assert set(nm_only) == set(tax.expert) & set(tax.non_modifiable)
    assert not set(nm_only) & set(tax.modifiable)


# -- retune --------------------------------------------------------------------------------------------


def test_retune_full_set_equals_grid_search(bundle):
    names, X, y = _xy(bundle)
    a = harness.retune_on_merged(X, y, names, names, "lasso", seed=4)
    b = harness.grid_search_inner(X, y, "lasso", seed=4)
    assert a == b


def test_retune_single_feature(bundle):
    names, X, y = _xy(bundle)
    grid = [1.0, 0.3, 0.1, 0.01]
    assignments = harness.partition_folds(len(y), 10, 8).assignments
    best = harness.retune_on_merged(X, y, names, [names[0]], "lasso", grid, assignments=assignments)
    mses = {lam: _manual_inner_mse(X[:, :1], y, lam, assignments) for lam in grid}
    assert mses[best] <= min(mses.values()) + 1e-9
    assert best == harness.retune_on_merged(X, y, names, [names[0]], "lasso", grid,
                                            assignments=assignments)


def test_retune_empty_warns(bundle):
    names, X, y = _xy(bundle)
    with pytest.warns(harness.HarnessWarning):
        assert harness.retune_on_merged(X, y, names, [], "lasso") is None


def test_protocol_falls_back_to_intercept_only():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(60, 3))
    y = 50 + rng.normal(size=60)
    tax = ds.FeatureTaxonomy(tuple(ds.TaxonomyEntry(n, "family", True, False, False)
                                   for n in ("a", "b", "c")))
    assignments = harness.partition_folds(60, 10, 0).assignments
    with pytest.warns(harness.HarnessWarning):
        res = harness.run_protocol(X, y, ("a", "b", "c"), tax, "lasso", [1e6], assignments)
    assert res.merged == () and np.all(res.model.coefficients == 0)
    assert res.model.intercept == pytest.approx(y.mean())


def test_protocol_merged_superset_of_stable(bundle):
    names, X, y = _xy(bundle)
    assignments = harness.partition_folds(len(y), 10, 0).assignments
    res = harness.run_protocol(X, y, names, bundle.taxonomy, "lasso", None, assignments)
    assert set(res.selection.stable) <= set(res.merged) <= set(names)
    assert "mod01" in res.merged  # expert feature always merged in


# -- nested evaluation -------------------------------------------------------------------------------


def test_noise_free_cv_is_near_perfect(noiseless):
    rep = harness.nested_cv_evaluate(noiseless.table, noiseless.taxonomy, "all", "lasso",
                                     FINE_GRID, seed=1)
    assert rep.mean["mse"] < 1e-6
    assert rep.mean["pearson_corr"] > 0.999999


def test_report_summary_matches_folds(bundle):
    rep = harness.nested_cv_evaluate(bundle.table, bundle.taxonomy, "all", "lasso", seed=2)
    for name in harness.METRIC_FIELDS:
        vals = np.array([getattr(f.metrics, name) for f in rep.folds])
        assert abs(rep.mean[name] - vals.mean()) < 1e-12
        assert abs(rep.std[name] - vals.std(ddof=1)) < 1e-12
    assert sum(f.n_test for f in rep.folds) == len(bundle.table)


def test_cv_report_deterministic_across_threads(bundle, tmp_path):
    a = harness.nested_cv_evaluate(bundle.table, bundle.taxonomy, "all", "lasso", seed=9)
    b = harness.nested_cv_evaluate(bundle.table, bundle.taxonomy, "all", "lasso", seed=9, n_jobs=3)
    harness.write_cv_report(a, tmp_path / "a.csv")
    harness.write_cv_report(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert np.array_equal(a.oof_predictions, b.oof_predictions)


@pytest.mark.parametrize("kind", ["ridge", "ols", "bic", "knn"])
def test_other_kinds_run(bundle, kind):
    grid = [1, 3, 5] if kind == "knn" else None
    rep = harness.nested_cv_evaluate(bundle.table, bundle.taxonomy, "non_modifiable_only", kind,
                                     grid, seed=1)
    assert len(rep.folds) == 10 and np.isfinite(rep.mean["mse"])


def test_fold_errors_name_the_fold(bundle):
    with pytest.raises(harness.StageError, match="outer fold 0"):
        harness.nested_cv_evaluate(bundle.table, bundle.taxonomy, "all", "knn", [500], seed=1)


# -- final model ------------------------------------------------------------------------------------


def test_final_fit_recovers_beta(noiseless):
    fit = harness.fit_final_model(noiseless.table, noiseless.taxonomy, "all", "lasso", FINE_GRID,
                                  seed=3)
    assert np.max(np.abs(fit.model.coefficients - noiseless.beta)) < 1e-3
    assert abs(fit.model.intercept - noiseless.table.observed_ir.mean()) < 1e-9


def test_final_fit_file_round_trip(bundle, tmp_path):
    fit = harness.fit_final_model(bundle.table, bundle.taxonomy, "all", "lasso", seed=3)
    reg.write_linear_model(fit.model, tmp_path / "m.coef")
    back = reg.read_linear_model(tmp_path / "m.coef")
    X = bundle.table.columns(back.feature_names)
    assert np.array_equal(reg.predict(back, X), reg.predict(fit.model, X))


def test_final_fit_deterministic(bundle):
    a = harness.fit_final_model(bundle.table, bundle.taxonomy, "all", "lasso", seed=8)
    b = harness.fit_final_model(bundle.table, bundle.taxonomy, "all", "lasso", seed=8)
    assert np.array_equal(a.model.coefficients, b.model.coefficients) and a.hyper == b.hyper


def test_fold_plan_file(bundle, tmp_path):
    plan = harness.nested_plan(len(bundle.table), 1)
    harness.write_fold_plan(plan, bundle.table.fips, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert len(lines) == len(bundle.table) + 1


def test_no_warnings_on_regular_run(bundle):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        harness.fit_final_model(bundle.table, bundle.taxonomy, "all", "lasso", seed=1)
