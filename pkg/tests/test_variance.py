import numpy as np
import pytest

from nnimpute.estimators import MeanOfG, ProportionBelow, Quantile
from nnimpute.matching import match_units, weighted_multiplicity
from nnimpute.smoothers import KernelConfig, KernelRegression
from nnimpute.survey import SurveyDataset
from nnimpute.variance import (
    FlatEstimatingFunction,
    build_scheme,
    confidence_interval,
    naive_replicates,
    naive_variance,
    proposed_replicates_mean,
    proposed_variance_mean,
    proposed_variance_quantile,
    pseudo_observations,
    quantile_report,
    v_rep,
    variance_reports,
)

from conftest import random_instance


def test_jackknife_scheme_n3():
    s = build_scheme("jackknife", np.full(3, 1 / 3))
    np.testing.assert_allclose(s.weights, [[0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]], atol=1e-15)
    np.testing.assert_allclose(s.factors, 2 / 3)
    assert s.L == 3


def test_jackknife_row_sums():
    w = np.random.default_rng(0).uniform(0.01, 0.2, 17)
    s = build_scheme("jackknife", w)
    np.testing.assert_allclose(s.weights.sum(1), w.sum() * 17 / 16 - w * 17 / 16)


def test_bootstrap_weights_average_to_base():
    w = np.random.default_rng(1).uniform(0.5, 1.5, 30)
    s = build_scheme("bootstrap", w, 200, seed=3)
    assert s.L == 200 and np.allclose(s.factors, 1 / 200)
    # each count has variance ~1, so the B=200 average has SE ~0.071
    assert np.all(np.abs(s.weights.mean(0) / w - 1) < 4 * np.sqrt(1 / 200))
    big = build_scheme("bootstrap", w, 5000, seed=4)
    assert np.all(np.abs(big.weights.mean(0) / w - 1) < 0.1)
    np.testing.assert_array_equal(s.weights, build_scheme("bootstrap", w, 200, seed=3).weights)


def test_scheme_needs_two_units():
    with pytest.raises(ValueError):
        build_scheme("jackknife", [1.0])


def test_v_rep_examples():
    assert v_rep(1.0, [1.0, 1.0], [0.5, 0.5]) == 0.0
    assert v_rep(2.0, [2.5, 2.0, 1.5], [2 / 3] * 3) == pytest.approx(1 / 3, rel=1e-15)
    reps = np.array([1.1, 0.7, 1.4])
    assert v_rep(1.0, 1 + 2 * (reps - 1), [0.3] * 3) == pytest.approx(4 * v_rep(1.0, reps, [0.3] * 3), rel=1e-14)


def test_v_rep_permutation_invariant():
    rng = np.random.default_rng(2)
    reps, c = rng.normal(size=500), rng.uniform(size=500)
    perm = rng.permutation(500)
    assert v_rep(0.1, reps, c) == v_rep(0.1, reps[perm], c[perm]) >= 0


@pytest.mark.parametrize("n", [2, 5, 40, 333])
def test_jackknife_mean_identity(n):
    y = np.random.default_rng(n).normal(size=n)
    w = np.full(n, 1 / n)
    s = build_scheme("jackknife", w)
    assert abs(v_rep(y.mean(), s.weights @ y, s.factors) - y.var(ddof=1) / n) < 1e-12


def test_confidence_interval():
    assert confidence_interval(2.0, 0.0) == (2.0, 2.0)
    assert confidence_interval(0.0, 1.0) == (-1.959964, 1.959964)
    lo, hi = confidence_interval(1.3, 0.04)
    assert lo == pytest.approx(0.908007, abs=1e-6) and hi == pytest.approx(1.691993, abs=1e-6)
    with pytest.raises(ValueError):
        confidence_interval(0.0, -1e-9)


def _worked():
    d = SurveyDataset(np.arange(3.0)[:, None], [1.5, np.nan, 2.5], [1, 0, 1], np.ones(3), 3)
    k = np.array([1.0, 0.0, 0.0])
    return d, k


def test_pseudo_observations_worked_instance():
    d, k = _worked()
    psi = pseudo_observations(d, k, np.array([1.0, 2.0, 3.0]), np.array([1.5, 0.0, 2.5]))
    np.testing.assert_allclose(psi, [2.0, 2.0, 2.5])
    s = build_scheme("jackknife", np.full(3, 1 / 3))
    np.testing.assert_allclose(s.weights @ psi, [2.25, 2.25, 2.0])


def test_nonrespondent_psi_ignores_placeholder():
    d, k = _worked()
    fitted = np.array([1.0, 2.0, 3.0])
    a = pseudo_observations(d, k, fitted, np.array([1.5, 0.0, 2.5]))
    b = pseudo_observations(d, k, fitted, np.array([1.5, 1e6, 2.5]))
    np.testing.assert_array_equal(a, b)


def test_perfect_fit_residuals_vanish():
    d, k = _worked()
    fitted = np.array([1.5, 7.0, 2.5])
    np.testing.assert_array_equal(pseudo_observations(d, k, fitted, fitted), fitted)


def test_proposed_replicates_use_original_match():
    rng = np.random.default_rng(4)
    data, m, a = random_instance(rng, n=60)
    k = weighted_multiplicity(a, data.pi)
    curve = KernelRegression(0.5).fit(m[data.delta == 1], data.y[data.delta == 1])
    s = build_scheme("jackknife", data.design_weights)
    reps = proposed_replicates_mean(data, a, MeanOfG(), curve, m, s)
    # replicate b equals the full-sample psi total minus unit b, rescaled
    z = np.where(data.delta == 1, data.y, 0.0)
    psi = pseudo_observations(data, k, curve.predict(m), z)
    w = data.design_weights
    np.testing.assert_allclose(reps, 60 / 59 * (w @ psi - w * psi), rtol=1e-12)
    assert match_units(m, data.delta, data.unit_id) == a


def test_fully_observed_naive_equals_proposed():
    rng = np.random.default_rng(5)
    n = 50
    y = rng.normal(size=n)
    d = SurveyDataset(rng.random((n, 1)), y, np.ones(n), rng.uniform(0.1, 0.5, n), 400)
    m = d.X[:, 0]
    a = match_units(m, d.delta)
    s = build_scheme("jackknife", d.design_weights)
    specs = [MeanOfG(), ProportionBelow(0.2)]
    prop = variance_reports(d, a, m, specs, s)
    naive = naive_variance(d, a, m, specs, s)
    for p, q in zip(prop, naive):
        assert p.variance == pytest.approx(q.variance, rel=1e-10)
        assert p.point == q.point


def test_naive_rematch_changes_recipients_of_deleted_donor():
    m = np.array([0.0, 0.1, 0.2, 0.3, 5.0])
    y = np.array([10.0, np.nan, np.nan, np.nan, 0.0])
    d = SurveyDataset(m[:, None], y, [1, 0, 0, 0, 1], np.full(5, 0.5), 10)
    s = build_scheme("jackknife", d.design_weights)
    nr = naive_replicates(d, m, [MeanOfG()], s)
    # deleting unit 0 (donor for 3 units) hands all 3 to the far donor
    assert nr.values[0, 0] == pytest.approx(0.0)
    full = d.design_weights @ np.array([10.0, 10.0, 10.0, 10.0, 0.0])
    assert abs(nr.values[0, 0] - full) >= 3 * 10 * d.design_weights[0]


def test_naive_skips_replicates_without_respondents():
    d = SurveyDataset(np.arange(3.0)[:, None], [1.0, np.nan, np.nan], [1, 0, 0], np.full(3, 0.5), 6)
    nr = naive_replicates(d, d.X[:, 0], [MeanOfG()], build_scheme("jackknife", d.design_weights))
    assert nr.skipped == 1 and nr.kept.tolist() == [1, 2]


def test_quantile_variance_degenerate_and_scaling():
    assert quantile_report("q", 0.0, 0.0, 0.4, 10).variance == 0.0
    v1 = quantile_report("q", 0.0, 0.01, 0.4, 10).variance
    v2 = quantile_report("q", 0.0, 0.01 * 9, 0.4, 10).variance
    assert v2 == pytest.approx(9 * v1)
    with pytest.raises(FlatEstimatingFunction):
        quantile_report("q", 0.0, 0.01, 1e-9, 10)


def test_quantile_variance_runs_and_is_consistent_with_batch():
    rng = np.random.default_rng(6)
    n = 300
    X = rng.random((n, 1))
    y = X[:, 0] + rng.normal(size=n)
    delta = (rng.random(n) < 0.75).astype(int)
    d = SurveyDataset(X, np.where(delta == 1, y, np.nan), delta, np.full(n, 0.01), 30_000)
    m = X[:, 0]
    a = match_units(m, delta)
    s = build_scheme("jackknife", d.design_weights)
    single = proposed_variance_quantile(d, a, Quantile(0.5), m, s)
    batch = variance_reports(d, a, m, [MeanOfG(), Quantile(0.5)], s)
    assert single.variance == pytest.approx(batch[1].variance, rel=1e-12)
    assert single.derivative > 0 and single.ci_low <= single.point <= single.ci_high
    mean_single = proposed_variance_mean(d, a, MeanOfG(), m, s)
    assert mean_single.variance == pytest.approx(batch[0].variance, rel=1e-12)
