"""Gaussian-kernel plug-in estimators: regression on the matching variable, density, CDF."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

SQRT_2PI = np.sqrt(2.0 * np.pi)
MASS_FLOOR = 1e-300


def gaussian_kernel(u):
    return np.exp(-0.5 * np.square(u)) / SQRT_2PI


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian kernel with a fixed bandwidth or the rule ``scale * n ** (-1/5)``."""

    bandwidth: Optional[float] = None
    scale: float = 1.5

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not self.scale > 0:
            raise ValueError("bandwidth scale must be positive")

    def h(self, n: int) -> float:
        if self.bandwidth is not None:
            return float(self.bandwidth)
        return bandwidth_rule(n, self.scale)


def bandwidth_rule(n: int, scale: float = 1.5) -> float:
    return float(scale * n ** (-0.2))


class KernelRegression(RegressorMixin, BaseEstimator):
    """Nadaraya-Watson regression of ``z`` on a scalar input.

    ``z`` may be 2-d; every column is smoothed with the same kernel weights.
    Where the weighted kernel mass at a query falls below ``1e-300`` the
    value of the nearest training point is returned and the query flagged.
    """

    def __init__(self, bandwidth: float = 1.0, chunk_size: int = 4096):
        self.bandwidth = bandwidth
        self.chunk_size = chunk_size

    def fit(self, m, z, sample_weight=None):
        m = np.asarray(m, dtype=float).reshape(-1)
        z = np.asarray(z, dtype=float)
        if m.size == 0:
            raise ValueError("kernel regression needs at least one training point")
        if z.shape[0] != m.size:
            raise ValueError("m and z lengths differ")
        w = np.ones(m.size) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        if w.shape != m.shape or np.any(w < 0) or not np.sum(w) > 0:
            raise ValueError("sample_weight must be nonnegative, not all zero, one per point")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        self.m_ = m
        self.z_ = z
        self.w_ = w
        return self

    def predict_with_flags(self, q):
        check_is_fitted(self, "m_")
        q = np.asarray(q, dtype=float).reshape(-1)
        z2 = self.z_.reshape(self.m_.size, -1)
        out = np.empty((q.size, z2.shape[1]))
        flags = np.zeros(q.size, dtype=bool)
        for s in range(0, q.size, self.chunk_size):
            qs = q[s:s + self.chunk_size]
            K = gaussian_kernel((qs[:, None] - self.m_[None, :]) / self.bandwidth) * self.w_
            mass = K.sum(axis=1)
            bad = mass < MASS_FLOOR
            with np.errstate(invalid="ignore", divide="ignore"):
                out[s:s + qs.size] = (K @ z2) / mass[:, None]
            if bad.any():
                near = np.abs(qs[bad, None] - self.m_[None, :]).argmin(axis=1)
                out[s:s + qs.size][bad] = z2[near]
                flags[s:s + qs.size] = bad
        if self.z_.ndim == 1:
            out = out[:, 0]
        return out, flags

    def predict(self, q):
        return self.predict_with_flags(q)[0]


def kernel_regression(m, z, weights, config: KernelConfig, n: Optional[int] = None) -> KernelRegression:
    m = np.asarray(m, dtype=float)
    return KernelRegression(config.h(m.size if n is None else n)).fit(m, z, weights)


def _validate(y, w):
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.ones(y.size) if w is None else np.asarray(w, dtype=float).reshape(-1)
    if w.shape != y.shape:
        raise ValueError("weights and values lengths differ")
    if not np.sum(w) > 0:
        raise ValueError("total weight must be positive")
    return y, w


def kernel_density(y, w, h: float, xi):
    """Weighted Gaussian KDE, normalised by the total weight."""
    y, w = _validate(y, w)
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
    K = gaussian_kernel((xi_arr[:, None] - y[None, :]) / h)
    out = K @ w / (np.sum(w) * h)
    return float(out[0]) if np.ndim(xi) == 0 else out


def smoothed_cdf(y, w, h: float, xi):
    """Weighted kernel CDF ``sum w Phi((xi - y)/h) / sum w``."""
    y, w = _validate(y, w)
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
    out = ndtr((xi_arr[:, None] - y[None, :]) / h) @ w / np.sum(w)
    return float(out[0]) if np.ndim(xi) == 0 else out


def s_derivative(y, w, h: float, xi):
    """Slope of the smoothed quantile estimating function at ``xi``.

    For the indicator score this is the derivative of :func:`smoothed_cdf`,
    i.e. the weighted KDE of the donor-weighted outcomes.
    """
    return kernel_density(y, w, h, xi)
