"""Nearest-neighbour imputation point estimators for means, proportions and quantiles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .matching import MatchAssignment, weighted_multiplicity
from .survey import SurveyDataset


class EstimationError(ValueError):
    pass


def _identity(y):
    return y


@dataclass(frozen=True)
class MeanOfG:
    """Population mean of ``g(y)``; ``g`` defaults to the identity."""

    g: Callable[[np.ndarray], np.ndarray] = _identity
    name: str = "mean"

    def values(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(self.g(y), dtype=float)


@dataclass(frozen=True)
class ProportionBelow:
    """Share of the population with ``y < c`` (strict inequality)."""

    c: float
    name: str = "proportion"

    def values(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y) < self.c).astype(float)


@dataclass(frozen=True)
class Quantile:
    """``alpha``-quantile defined through the score ``I(y <= xi) - alpha``."""

    alpha: float = 0.5
    name: str = "quantile"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    def score(self, y: np.ndarray, xi: float) -> np.ndarray:
        return (np.asarray(y) <= xi).astype(float) - self.alpha


ParameterSpec = Union[MeanOfG, ProportionBelow, Quantile]


@dataclass(frozen=True)
class PointEstimate:
    value: float
    form_used: str
    n: int
    N: int
    respondent_count: int
    normalizer: float
    diagnostics: dict = field(default_factory=dict)


def donor_weights(data: SurveyDataset, k: np.ndarray) -> np.ndarray:
    """``delta_i (1 + k_i) / pi_i`` for every unit (zero for nonrespondents)."""
    return data.delta * (1.0 + k) / data.pi


def _check(data: SurveyDataset, assignment: MatchAssignment) -> None:
    if assignment.donor.shape[0] != data.n or not np.array_equal(assignment.unit_id, data.unit_id):
        raise EstimationError("assignment does not belong to this dataset")
    rec = data.delta == 0
    if np.any(assignment.donor[rec] < 0):
        raise EstimationError("assignment leaves some nonrespondents without a donor")
    if np.any(data.delta[assignment.donor] != 1):
        raise EstimationError("every donor must be a respondent")


def imputed_outcomes(data: SurveyDataset, assignment: MatchAssignment) -> np.ndarray:
    """Observed ``y`` for respondents, the donor's ``y`` for nonrespondents."""
    _check(data, assignment)
    return data.y[assignment.donor]


def nni_mean_estimate(data: SurveyDataset, assignment: MatchAssignment,
                      spec: ParameterSpec = MeanOfG(), k: Optional[np.ndarray] = None) -> PointEstimate:
    """Imputed mean of ``g(y)``, normalised by the known ``N``.

    Both the imputed-sum form and the donor-weight form are evaluated; a
    disagreement beyond rounding means the assignment and ``k`` are
    inconsistent and is raised as an error.
    """
    if isinstance(spec, Quantile):
        raise EstimationError("use nni_quantile_estimate for quantiles")
    _check(data, assignment)
    if k is None:
        k = weighted_multiplicity(assignment, data.pi)
    N = data.population_size
    gy = np.zeros(data.n)
    r = data.respondents
    gy[r] = spec.values(data.y[r])
    imputed_sum = float(np.sum(gy[assignment.donor] / data.pi) / N)
    donor_form = float(np.sum(donor_weights(data, k) * gy) / N)
    if not np.isclose(imputed_sum, donor_form, rtol=1e-10, atol=1e-12):
        raise EstimationError(
            f"imputed-sum ({imputed_sum!r}) and donor-weight ({donor_form!r}) forms disagree"
        )
    return PointEstimate(imputed_sum, "imputed_sum", data.n, N, int(r.sum()), float(N),
                         {"donor_weight": donor_form})


def nni_cdf(data: SurveyDataset, assignment: MatchAssignment, xi, k: Optional[np.ndarray] = None):
    """Hajek-normalised imputed CDF ``F_hat(xi)``; equals 1 at ``+inf``."""
    _check(data, assignment)
    if k is None:
        k = weighted_multiplicity(assignment, data.pi)
    r = data.respondents
    w = donor_weights(data, k)[r]
    y = data.y[r]
    total = np.sum(w)
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.array([np.sum(w[y <= q]) / total for q in xi_arr])
    return float(out[0]) if np.ndim(xi) == 0 else out


def nni_estimating_function(data: SurveyDataset, assignment: MatchAssignment, spec: Quantile,
                            xi, k: Optional[np.ndarray] = None):
    """``F_hat(xi) - alpha``; nondecreasing step function in ``xi``."""
    return nni_cdf(data, assignment, xi, k) - spec.alpha


def weighted_step_quantile(y: np.ndarray, w: np.ndarray, alpha: float) -> float:
    """Smallest observed ``y`` with cumulative weight share ``>= alpha``.

    Exact scan over the sorted support: no root finding on the step function.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    total = np.sum(w)
    if y.size == 0 or not total > 0:
        raise EstimationError("all weights are zero")
    order = np.argsort(y, kind="stable")
    ys = y[order]
    cum = np.cumsum(w[order])
    # evaluate the step function only at the last copy of each distinct value
    last = np.ones(ys.size, dtype=bool)
    last[:-1] = ys[1:] != ys[:-1]
    hit = np.flatnonzero(last & (cum / total >= alpha))
    return float(ys[hit[0]]) if hit.size else float(ys[-1])


def nni_quantile_estimate(data: SurveyDataset, assignment: MatchAssignment, spec: Quantile,
                          k: Optional[np.ndarray] = None) -> PointEstimate:
    """``inf{xi : F_hat(xi) >= alpha}`` with donor weights ``(1 + k_i)/pi_i``."""
    _check(data, assignment)
    r = data.respondents
    if not r.any():
        raise EstimationError("no respondents")
    if k is None:
        k = weighted_multiplicity(assignment, data.pi)
    w = donor_weights(data, k)[r]
    value = weighted_step_quantile(data.y[r], w, spec.alpha)
    return PointEstimate(value, "donor_weight", data.n, data.population_size, int(r.sum()),
                         float(np.sum(w)))


def estimate(data: SurveyDataset, assignment: MatchAssignment, spec: ParameterSpec,
             k: Optional[np.ndarray] = None) -> PointEstimate:
    if isinstance(spec, Quantile):
        return nni_quantile_estimate(data, assignment, spec, k)
    return nni_mean_estimate(data, assignment, spec, k)
