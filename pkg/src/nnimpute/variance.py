"""Replication variance estimation for nearest-neighbour imputation estimators.

Two routes are provided. The proposed route replicates the linearised
pseudo-observations ``psi_i`` with the donor counts of the original match
held fixed. The naive route re-runs matching and estimation inside every
replicate; it is kept only to reproduce its failure and should not be used
for inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .estimators import (
    MeanOfG,
    ParameterSpec,
    Quantile,
    donor_weights,
    estimate,
    weighted_step_quantile,
)
from .matching import MatchAssignment, MatchingError, match_units, weighted_multiplicity
from .smoothers import KernelConfig, KernelRegression, s_derivative
from .survey import SurveyDataset

Z_975 = 1.959964
DERIVATIVE_FLOOR = 1e-6


class FlatEstimatingFunction(ArithmeticError):
    """Raised when the estimated slope of the quantile estimating function is ~0."""


@dataclass(frozen=True, eq=False)
class ReplicationScheme:
    kind: str
    weights: np.ndarray
    factors: np.ndarray

    @property
    def L(self) -> int:
        return self.weights.shape[0]


def build_scheme(kind: str, base_weights, n_replicates: int = 200, seed=None) -> ReplicationScheme:
    """Replicate weight matrix of shape ``(L, n)``.

    ``"jackknife"``: delete-one, ``L = n``, factor ``(n-1)/n``.
    ``"bootstrap"``: with-replacement resampling of ``n-1`` units, weights
    ``w_i * n/(n-1) * count_i``, factor ``1/B``.
    """
    w = np.asarray(base_weights, dtype=float).reshape(-1)
    n = w.size
    if n < 2:
        raise ValueError("replication needs at least two sampled units")
    if kind == "jackknife":
        W = np.broadcast_to(w * n / (n - 1), (n, n)).copy()
        np.fill_diagonal(W, 0.0)
        factors = np.full(n, (n - 1) / n)
    elif kind == "bootstrap":
        if n_replicates < 1:
            raise ValueError("n_replicates must be positive")
        rng = np.random.default_rng(seed)
        counts = rng.multinomial(n - 1, np.full(n, 1.0 / n), size=n_replicates)
        W = counts * (w * n / (n - 1))
        factors = np.full(n_replicates, 1.0 / n_replicates)
    else:
        raise ValueError(f"unknown replication kind {kind!r}")
    W.flags.writeable = False
    return ReplicationScheme(kind, W, factors)


def v_rep(estimate: float, replicates, factors) -> float:
    """``sum_k c_k (theta_k - theta)^2``; exactly rounded, so order-independent."""
    reps = np.asarray(replicates, dtype=float).reshape(-1)
    c = np.asarray(factors, dtype=float).reshape(-1)
    if reps.shape != c.shape:
        raise ValueError("replicates and factors lengths differ")
    return math.fsum((c * (reps - estimate) ** 2).tolist())


def confidence_interval(point: float, variance: float, z: float = Z_975) -> tuple[float, float]:
    if variance < 0 or not np.isfinite(variance):
        raise ValueError(f"variance must be finite and nonnegative, got {variance}")
    half = z * math.sqrt(variance)
    return point - half, point + half


@dataclass(frozen=True)
class VarianceReport:
    target: str
    method: str
    point: float
    variance: float
    ci_low: float
    ci_high: float
    L: int
    derivative: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    FIELDS = ("target", "method", "point", "variance", "ci_low", "ci_high", "L", "derivative")

    def row(self) -> dict:
        return {
            "target": self.target, "method": self.method, "point": repr(self.point),
            "variance": repr(self.variance), "ci_low": repr(self.ci_low),
            "ci_high": repr(self.ci_high), "L": self.L,
            "derivative": "" if self.derivative is None else repr(self.derivative),
        }


def _report(target, method, point, variance, L, derivative=None, **diag) -> VarianceReport:
    lo, hi = confidence_interval(point, variance)
    return VarianceReport(target, method, point, variance, lo, hi, L, derivative, diag)


# -- proposed route ---------------------------------------------------------------


def pseudo_observations(data: SurveyDataset, k: np.ndarray, fitted: np.ndarray,
                        z: np.ndarray) -> np.ndarray:
    """``psi_i = mu_hat(x_i) + delta_i (1 + k_i) (z_i - mu_hat(x_i))``.

    ``z`` is only read where ``delta == 1``; nonrespondents get ``mu_hat(x_i)``.
    ``fitted`` and ``z`` may be 2-d (one column per target).
    """
    fitted = np.asarray(fitted, dtype=float)
    z = np.asarray(z, dtype=float)
    r = data.respondents
    shape = (-1,) + (1,) * (fitted.ndim - 1)
    scale = (data.delta * (1.0 + k)).reshape(shape)
    resid = np.where(r.reshape(shape), z - fitted, 0.0)
    return fitted + scale * resid


def target_values(spec: ParameterSpec, y: np.ndarray, xi: Optional[float] = None) -> np.ndarray:
    if isinstance(spec, Quantile):
        return spec.score(y, xi)
    return spec.values(y)


def fit_curve(data: SurveyDataset, m: np.ndarray, z: np.ndarray, config: KernelConfig) -> KernelRegression:
    """Kernel regression of ``z`` on ``m`` over respondents with design weights."""
    r = data.respondents
    return KernelRegression(config.h(data.n)).fit(m[r], z[r], data.design_weights[r])


def proposed_replicates(data: SurveyDataset, psi: np.ndarray,
                        scheme: ReplicationScheme) -> tuple[np.ndarray, np.ndarray]:
    """Replicates ``sum_i w_i^(k) psi_i`` and the full-sample centre ``sum_i w_i psi_i``."""
    return scheme.weights @ psi, data.design_weights @ psi


def proposed_replicates_mean(data: SurveyDataset, assignment: MatchAssignment, spec: ParameterSpec,
                             curve: KernelRegression, m: np.ndarray, scheme: ReplicationScheme,
                             k: Optional[np.ndarray] = None) -> np.ndarray:
    if k is None:
        k = weighted_multiplicity(assignment, data.pi)
    z = np.zeros(data.n)
    r = data.respondents
    z[r] = target_values(spec, data.y[r])
    psi = pseudo_observations(data, k, curve.predict(m), z)
    return proposed_replicates(data, psi, scheme)[0]


def proposed_variance_mean(data: SurveyDataset, assignment: MatchAssignment, spec: ParameterSpec,
                           m: np.ndarray, scheme: ReplicationScheme,
                           config: KernelConfig = KernelConfig(),
                           k: Optional[np.ndarray] = None) -> VarianceReport:
    if k is None:
        k = weighted_multiplicity(assignment, data.pi)
    point = estimate(data, assignment, spec, k).value
    z = np.zeros(data.n)
    r = data.respondents
    z[r] = target_values(spec, data.y[r])
    curve = fit_curve(data, m, z, config)
    psi = pseudo_observations(data, k, curve.predict(m), z)
    reps, centre = proposed_replicates(data, psi, scheme)
    return _report(spec.name, "proposed", point, v_rep(centre, reps, scheme.factors), scheme.L)


def proposed_variance_quantile(data: SurveyDataset, assignment: MatchAssignment, spec: Quantile,
                               m: np.ndarray, scheme: ReplicationScheme,
                               config: KernelConfig = KernelConfig(),
                               k: Optional[np.ndarray] = None) -> VarianceReport:
    """Variance of the quantile estimator: ``V_rep(S_hat(xi_hat)) / S'(xi_hat)^2``."""
    if k is None:
        k = weighted_multiplicity(assignment, data.pi)
    xi = estimate(data, assignment, spec, k).value
    r = data.respondents
    z = np.zeros(data.n)
    z[r] = spec.score(data.y[r], xi)
    curve = fit_curve(data, m, z, config)
    psi = pseudo_observations(data, k, curve.predict(m), z)
    reps, centre = proposed_replicates(data, psi, scheme)
    vs = v_rep(centre, reps, scheme.factors)
    slope = s_derivative(data.y[r], donor_weights(data, k)[r], config.h(data.n), xi)
    return quantile_report(spec.name, xi, vs, slope, scheme.L)


def quantile_report(target: str, xi: float, v_score: float, slope: float, L: int,
                    method: str = "proposed") -> VarianceReport:
    if not slope >= DERIVATIVE_FLOOR:
        raise FlatEstimatingFunction(
            f"flat estimating function: slope {slope:.3g} at {xi:.6g} is below {DERIVATIVE_FLOOR}"
        )
    return _report(target, method, xi, v_score / slope**2, L, slope)


# -- naive route ------------------------------------------------------------------


@dataclass(frozen=True)
class NaiveReplicates:
    values: np.ndarray  # (L, n_targets)
    kept: np.ndarray  # replicate indices that produced estimates
    skipped: int


def naive_replicates(data: SurveyDataset, m: np.ndarray, specs: Sequence[ParameterSpec],
                     scheme: ReplicationScheme) -> NaiveReplicates:
    """Re-match and re-estimate inside every replicate.

    Units with zero replicate weight are dropped, donors are re-assigned
    among the remaining respondents using the same matching variable, and
    each estimator is recomputed with the replicate weights as design weights.
    A replicate with no respondents left is skipped and counted.
    """
    m = np.asarray(m, dtype=float)
    r = data.respondents
    gvals = []
    for spec in specs:
        col = np.full(data.n, np.nan)
        if not isinstance(spec, Quantile):
            col[r] = spec.values(data.y[r])
        gvals.append(col)
    out = np.full((scheme.L, len(specs)), np.nan)
    kept = []
    for b in range(scheme.L):
        wb = scheme.weights[b]
        active = wb > 0
        try:
            a = match_units(m, data.delta, data.unit_id, active=active)
        except MatchingError:
            continue
        act = np.flatnonzero(active)
        donors = a.donor[act]
        wa = wb[act]
        for t, spec in enumerate(specs):
            if isinstance(spec, Quantile):
                out[b, t] = weighted_step_quantile(data.y[donors], wa, spec.alpha)
            else:
                out[b, t] = wa @ gvals[t][donors]
        kept.append(b)
    kept = np.asarray(kept, dtype=np.int64)
    return NaiveReplicates(out, kept, scheme.L - kept.size)


def naive_variance(data: SurveyDataset, assignment: MatchAssignment, m: np.ndarray,
                   specs: Sequence[ParameterSpec], scheme: ReplicationScheme,
                   k: Optional[np.ndarray] = None) -> list[VarianceReport]:
    if k is None:
        k = weighted_multiplicity(assignment, data.pi)
    nr = naive_replicates(data, m, specs, scheme)
    reports = []
    for t, spec in enumerate(specs):
        point = estimate(data, assignment, spec, k).value
        v = v_rep(point, nr.values[nr.kept, t], scheme.factors[nr.kept])
        reports.append(_report(spec.name, "naive", point, v, scheme.L, skipped=nr.skipped))
    return reports


def variance_reports(data: SurveyDataset, assignment: MatchAssignment, m: np.ndarray,
                     specs: Sequence[ParameterSpec], scheme: ReplicationScheme,
                     config: KernelConfig = KernelConfig(), methods=("proposed",),
                     k: Optional[np.ndarray] = None) -> list[VarianceReport]:
    """Point estimates and variance reports for several targets sharing one match.

    Kernel weights over ``m`` are computed once and reused for every target.
    """
    if k is None:
        k = weighted_multiplicity(assignment, data.pi)
    specs = list(specs)
    out = []
    if "proposed" in methods:
        r = data.respondents
        points = [estimate(data, assignment, s, k).value for s in specs]
        Z = np.zeros((data.n, len(specs)))
        for t, (s, pt) in enumerate(zip(specs, points)):
            Z[r, t] = target_values(s, data.y[r], pt)
        curve = fit_curve(data, m, Z, config)
        psi = pseudo_observations(data, k, curve.predict(m), Z)
        reps, centre = proposed_replicates(data, psi, scheme)
        for t, (s, pt) in enumerate(zip(specs, points)):
            vs = v_rep(centre[t], reps[:, t], scheme.factors)
            if isinstance(s, Quantile):
                slope = s_derivative(data.y[r], donor_weights(data, k)[r], config.h(data.n), pt)
                out.append(quantile_report(s.name, pt, vs, slope, scheme.L))
            else:
                out.append(_report(s.name, "proposed", pt, vs, scheme.L))
    if "naive" in methods:
        out.extend(naive_variance(data, assignment, m, specs, scheme, k))
    return out
