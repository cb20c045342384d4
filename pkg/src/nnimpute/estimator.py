"""scikit-learn style front end: an imputing transformer and a survey estimator."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .estimators import MeanOfG, ProportionBelow, Quantile, estimate, imputed_outcomes
from .matching import MatchingVariable, match_dataset, nn_search, weighted_multiplicity
from .smoothers import KernelConfig
from .survey import SurveyDataset
from .variance import build_scheme, naive_variance, variance_reports


def _survey_inputs(X, y, inclusion_prob, population_size):
    X = check_array(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    delta = np.isfinite(y).astype(np.int8)
    if inclusion_prob is None:
        if population_size is None:
            raise ValueError("give inclusion_prob or population_size")
        pi = np.full(X.shape[0], X.shape[0] / population_size)
    else:
        pi = np.asarray(inclusion_prob, dtype=float).reshape(-1)
    N = population_size if population_size is not None else int(round(np.sum(1.0 / pi)))
    return SurveyDataset(X, np.where(delta == 1, y, np.nan), delta, pi, N)


class NearestNeighborImputer(TransformerMixin, BaseEstimator):
    """Fill missing outcomes with the outcome of the closest respondent on a fitted matching variable.

    ``fit(X, y)`` treats NaN entries of ``y`` as nonresponse. ``transform(X)``
    returns, for each row, the outcome of the respondent nearest in ``m(x)``.
    """

    def __init__(self, basis: str = "quadratic"):
        self.basis = basis

    def fit(self, X, y, sample_weight=None):
        X = check_array(X)
        y = np.asarray(y, dtype=float).reshape(-1)
        r = np.isfinite(y)
        w = None if sample_weight is None else np.asarray(sample_weight, dtype=float)[r]
        self.matching_model_ = MatchingVariable(self.basis).fit(X[r], y[r], sample_weight=w)
        self.donor_m_ = self.matching_model_.predict(X[r])
        self.donor_y_ = y[r]
        self.donor_key_ = np.flatnonzero(r)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "donor_m_")
        m = self.matching_model_.predict(X)
        return self.donor_y_[nn_search(self.donor_m_, self.donor_key_, m)]

    def fit_transform(self, X, y=None, **fit_params):
        """Observed values kept, missing ones imputed."""
        self.fit(X, y, **fit_params)
        y = np.asarray(y, dtype=float).reshape(-1)
        return np.where(np.isfinite(y), y, self.transform(X))


class NNIEstimator(BaseEstimator):
    """Design-weighted nearest-neighbour imputation estimate with replication variance.

    Parameters
    ----------
    target : {"mean", "proportion", "quantile"}
    threshold : float
        ``c`` for ``target="proportion"`` (share with ``y < c``).
    alpha : float
        Quantile level for ``target="quantile"``.
    basis : {"linear", "quadratic"}
        Power series for the matching variable.
    variance_method : {"proposed", "naive"}
    replication : {"jackknife", "bootstrap"}
    n_replicates : int
        Bootstrap replicates (ignored by the jackknife).
    bandwidth_scale, bandwidth : float
        Kernel bandwidth ``bandwidth_scale * n ** (-1/5)`` unless ``bandwidth`` is set.
    population_size : int
        Known ``N``; if omitted it is estimated by ``sum(1 / inclusion_prob)``.
    random_state : int or None
        Seed for bootstrap weights.

    Attributes
    ----------
    estimate_, variance_, ci_ : float, float, tuple
    report_ : VarianceReport
    assignment_ : MatchAssignment
    k_ : ndarray, design-weighted donor multiplicities
    imputed_ : ndarray, outcomes after imputation
    """

    def __init__(self, target="mean", threshold=None, alpha=0.5, basis="quadratic",
                 variance_method="proposed", replication="jackknife", n_replicates=200,
                 bandwidth_scale=1.5, bandwidth=None, population_size=None, random_state=None):
        self.target = target
        self.threshold = threshold
        self.alpha = alpha
        self.basis = basis
        self.variance_method = variance_method
        self.replication = replication
        self.n_replicates = n_replicates
        self.bandwidth_scale = bandwidth_scale
        self.bandwidth = bandwidth
        self.population_size = population_size
        self.random_state = random_state

    def _spec(self):
        if self.target == "mean":
            return MeanOfG()
        if self.target == "proportion":
            if self.threshold is None:
                raise ValueError("target='proportion' needs threshold")
            return ProportionBelow(float(self.threshold))
        if self.target == "quantile":
            return Quantile(float(self.alpha))
        raise ValueError(f"unknown target {self.target!r}")

    def fit(self, X, y, inclusion_prob=None):
        data = _survey_inputs(X, y, inclusion_prob, self.population_size)
        spec = self._spec()
        r = data.respondents
        self.matching_model_ = MatchingVariable(self.basis).fit(
            data.X[r], data.y[r], sample_weight=data.design_weights[r])
        m = self.matching_model_.predict(data.X)
        self.assignment_ = match_dataset(data, m)
        self.k_ = weighted_multiplicity(self.assignment_, data.pi)
        self.imputed_ = imputed_outcomes(data, self.assignment_)
        scheme = build_scheme(self.replication, data.design_weights, self.n_replicates,
                              self.random_state)
        config = KernelConfig(self.bandwidth, self.bandwidth_scale)
        if self.variance_method == "proposed":
            (rep,) = variance_reports(data, self.assignment_, m, [spec], scheme, config, k=self.k_)
        elif self.variance_method == "naive":
            (rep,) = naive_variance(data, self.assignment_, m, [spec], scheme, self.k_)
        else:
            raise ValueError(f"unknown variance_method {self.variance_method!r}")
        self.report_ = rep
        self.estimate_ = rep.point
        self.variance_ = rep.variance
        self.ci_ = (rep.ci_low, rep.ci_high)
        self.point_ = estimate(data, self.assignment_, spec, self.k_)
        self.n_features_in_ = data.p
        return self
