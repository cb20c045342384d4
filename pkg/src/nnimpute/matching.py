"""Scalar matching variable, nearest-neighbour donor assignment and donor multiplicities."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .survey import SurveyDataError, SurveyDataset

BASES = ("linear", "quadratic")


class MatchingError(ValueError):
    pass


def basis_expand(X: np.ndarray, basis: str) -> tuple[np.ndarray, list[str]]:
    """Power-series design matrix: intercept, linear terms, optionally squares."""
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    cols = [np.ones(X.shape[0])] + [X[:, j] for j in range(p)]
    names = ["1"] + [f"x{j + 1}" for j in range(p)]
    if basis == "quadratic":
        cols += [X[:, j] ** 2 for j in range(p)]
        names += [f"x{j + 1}^2" for j in range(p)]
    elif basis != "linear":
        raise ValueError(f"basis must be one of {BASES}, got {basis!r}")
    return np.column_stack(cols), names


def _collinear_columns(D: np.ndarray, names: list[str]) -> list[str]:
    bad, kept = [], []
    for j in range(D.shape[1]):
        trial = D[:, kept + [j]]
        if np.linalg.matrix_rank(trial) < len(kept) + 1:
            bad.append(names[j])
        else:
            kept.append(j)
    return bad


class MatchingVariable(RegressorMixin, BaseEstimator):
    """Weighted least-squares power-series fit of ``E(y | x)`` used as the scalar matching variable.

    Parameters
    ----------
    basis : {"linear", "quadratic"}, default="quadratic"
        ``"linear"`` uses an intercept and first-order terms; ``"quadratic"``
        adds the square of every covariate.

    Attributes
    ----------
    coef_ : ndarray
        Coefficients aligned with ``feature_names_``.
    residual_ms_ : float
        Weighted mean squared residual on the training data.
    """

    def __init__(self, basis: str = "quadratic"):
        self.basis = basis

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[0] == 0:
            raise MatchingError("no respondents to fit the matching variable")
        w = np.ones(X.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        if w.shape != y.shape or np.any(w <= 0):
            raise MatchingError("sample_weight must be positive with one entry per row")
        D, names = basis_expand(X, self.basis)
        if D.shape[0] < D.shape[1]:
            raise MatchingError(
                f"{D.shape[0]} respondents cannot identify {D.shape[1]} basis terms"
            )
        sw = np.sqrt(w)
        Dw = D * sw[:, None]
        if np.linalg.matrix_rank(Dw) < D.shape[1]:
            raise MatchingError(f"rank-deficient design; collinear columns: {_collinear_columns(Dw, names)}")
        coef, *_ = np.linalg.lstsq(Dw, y * sw, rcond=None)
        self.coef_ = coef
        self.feature_names_ = names
        self.n_features_in_ = X.shape[1]
        resid = y - D @ coef
        self.residual_ms_ = float(np.sum(w * resid**2) / np.sum(w))
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise MatchingError(f"expected {self.n_features_in_} covariates, got {X.shape[1]}")
        D, _ = basis_expand(X, self.basis)
        return D @ self.coef_


def fit_matching_model(data: SurveyDataset, basis: str = "quadratic") -> MatchingVariable:
    """Fit the matching variable on respondents with design weights ``1/(N pi)``."""
    r = data.respondents
    if not r.any():
        raise MatchingError("zero respondents")
    return MatchingVariable(basis).fit(data.X[r], data.y[r], sample_weight=data.design_weights[r])


def evaluate_m(model: MatchingVariable, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(model.predict(x[None, :])[0])
    return model.predict(x)


# -- donor assignment -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MatchAssignment:
    """Donor per unit plus donor-use counts.

    ``donor[j]`` is the position of unit ``j``'s donor; respondents donate to
    themselves. ``count`` is the unweighted number of recipients served by
    each unit (zero for nonrespondents).
    """

    unit_id: np.ndarray
    delta: np.ndarray
    donor: np.ndarray
    count: np.ndarray

    @property
    def recipients(self) -> np.ndarray:
        return np.flatnonzero(self.delta == 0)

    @property
    def donor_of(self) -> dict:
        rec = self.recipients
        return {int(self.unit_id[j]): int(self.unit_id[self.donor[j]]) for j in rec}

    @property
    def multiplicity(self) -> dict:
        return {int(self.unit_id[i]): int(self.count[i]) for i in np.flatnonzero(self.delta == 1)}

    def __eq__(self, other):
        if not isinstance(other, MatchAssignment):
            return NotImplemented
        return all(
            np.array_equal(a, b)
            for a, b in ((self.unit_id, other.unit_id), (self.delta, other.delta),
                         (self.donor, other.donor), (self.count, other.count))
        )

    __hash__ = None  # type: ignore[assignment]


def nn_search(m_donor: np.ndarray, key_donor: np.ndarray, m_query: np.ndarray) -> np.ndarray:
    """Index into the donor arrays of the nearest donor for each query.

    Exact 1-NN on the real line: donors sorted once, each query binary
    searched. Equal distances resolve to the smallest ``key``.
    """
    m_donor = np.asarray(m_donor, dtype=float)
    key_donor = np.asarray(key_donor)
    m_query = np.asarray(m_query, dtype=float)
    if m_donor.size == 0:
        raise MatchingError("no respondents available as donors")
    order = np.lexsort((key_donor, m_donor))
    ms = m_donor[order]
    # first element of each run of equal m carries the smallest key
    first = np.ones(ms.size, dtype=bool)
    first[1:] = ms[1:] != ms[:-1]
    um = ms[first]
    uidx = order[first]
    pos = np.searchsorted(um, m_query, side="right")
    lo = np.clip(pos - 1, 0, um.size - 1)
    hi = np.clip(pos, 0, um.size - 1)
    dlo = np.abs(m_query - um[lo])
    dhi = np.abs(um[hi] - m_query)
    pick_hi = (dhi < dlo) | ((dhi == dlo) & (key_donor[uidx[hi]] < key_donor[uidx[lo]]))
    return np.where(pick_hi, uidx[hi], uidx[lo])


def match_units(m: np.ndarray, delta: np.ndarray, unit_id: Optional[np.ndarray] = None,
                active: Optional[np.ndarray] = None) -> MatchAssignment:
    """Nearest-neighbour assignment on a scalar matching variable.

    ``active`` restricts both donors and recipients to a subset of positions;
    inactive units get ``donor = -1`` and zero count.
    """
    m = np.asarray(m, dtype=float)
    delta = np.asarray(delta)
    n = m.size
    unit_id = np.arange(n) if unit_id is None else np.asarray(unit_id)
    act = np.ones(n, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    resp = np.flatnonzero((delta == 1) & act)
    rec = np.flatnonzero((delta == 0) & act)
    if resp.size == 0:
        raise MatchingError("no respondents: positivity violated")
    donor = np.full(n, -1, dtype=np.int64)
    donor[resp] = resp
    if rec.size:
        donor[rec] = resp[nn_search(m[resp], unit_id[resp], m[rec])]
    count = np.bincount(donor[rec], minlength=n).astype(np.int64)
    return MatchAssignment(unit_id, delta, donor, count)


def match_dataset(data: SurveyDataset, m: np.ndarray) -> MatchAssignment:
    return match_units(m, data.delta, data.unit_id)


def nearest_neighbor_match(m_respondents: Mapping[int, float],
                           m_nonrespondents: Mapping[int, float]) -> MatchAssignment:
    """Match each nonrespondent to the respondent with the closest ``m``.

    Units are laid out respondents first, then nonrespondents, each group in
    mapping order.
    """
    if not m_respondents:
        raise MatchingError("no respondents: positivity violated")
    ids = np.array(list(m_respondents) + list(m_nonrespondents))
    if len(set(ids.tolist())) != ids.size:
        raise MatchingError("unit ids must be unique across respondents and nonrespondents")
    m = np.array(list(m_respondents.values()) + list(m_nonrespondents.values()), dtype=float)
    delta = np.r_[np.ones(len(m_respondents), dtype=np.int8), np.zeros(len(m_nonrespondents), dtype=np.int8)]
    return match_units(m, delta, ids)


def weighted_multiplicity(assignment: MatchAssignment, pi) -> np.ndarray:
    """``k_i = sum_j (pi_i / pi_j)(1 - delta_j) d_ij`` aligned with the assignment's units."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != assignment.delta.shape:
        raise MatchingError("pi must have one entry per unit in the assignment")
    if np.any(pi <= 0):
        raise SurveyDataError("inclusion probabilities must be positive")
    rec = np.flatnonzero((assignment.delta == 0) & (assignment.donor >= 0))
    inv = np.bincount(assignment.donor[rec], weights=1.0 / pi[rec], minlength=pi.size)
    return pi * inv


# -- discrepancy diagnostic -----------------------------------------------------


def _mahalanobis_root(X: np.ndarray) -> np.ndarray:
    """Matrix Q with Q^T Q = inverse empirical covariance; identity if singular."""
    S = np.atleast_2d(np.cov(X, rowvar=False))
    try:
        if np.linalg.cond(S) > 1e12:
            raise np.linalg.LinAlgError
        L = np.linalg.cholesky(np.linalg.inv(S))
    except np.linalg.LinAlgError:
        warnings.warn("singular covariance; falling back to Euclidean distance", RuntimeWarning)
        return np.eye(X.shape[1])
    return L.T


def multivariate_match(X: np.ndarray, delta: np.ndarray, unit_id=None, chunk: int = 256) -> np.ndarray:
    """Brute-force Mahalanobis 1-NN on raw covariates; returns donor positions (self for respondents)."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    unit_id = np.arange(n) if unit_id is None else np.asarray(unit_id)
    Z = X @ _mahalanobis_root(X).T
    resp = np.flatnonzero(delta == 1)
    rec = np.flatnonzero(delta == 0)
    if resp.size == 0:
        raise MatchingError("no respondents: positivity violated")
    order = resp[np.argsort(unit_id[resp], kind="stable")]
    Zr = Z[order]
    donor = np.arange(n)
    for s in range(0, rec.size, chunk):
        q = rec[s:s + chunk]
        d2 = ((Z[q, None, :] - Zr[None, :, :]) ** 2).sum(axis=2)
        donor[q] = order[np.argmin(d2, axis=1)]  # argmin keeps the first, i.e. smallest id
    return donor


def matching_discrepancy(data: SurveyDataset, m: Optional[np.ndarray] = None,
                         mode: str = "scalar") -> float:
    """Average donor-recipient distance over nonrespondents.

    ``mode="scalar"`` matches on ``m`` and reports mean ``|m_donor - m_j|``;
    ``mode="mahalanobis"`` matches on the raw covariates and reports the mean
    Mahalanobis distance.
    """
    rec = np.flatnonzero(~data.respondents)
    if rec.size == 0:
        return 0.0
    if mode == "scalar":
        if m is None:
            raise ValueError("scalar mode needs the matching variable m")
        m = np.asarray(m, dtype=float)
        a = match_dataset(data, m)
        return float(np.mean(np.abs(m[a.donor[rec]] - m[rec])))
    if mode == "mahalanobis":
        Q = _mahalanobis_root(data.X)
        donor = multivariate_match(data.X, data.delta, data.unit_id)
        diff = (data.X[donor[rec]] - data.X[rec]) @ Q.T
        return float(np.mean(np.sqrt((diff**2).sum(axis=1))))
    raise ValueError(f"unknown mode {mode!r}")
