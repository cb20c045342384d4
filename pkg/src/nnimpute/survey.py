"""Finite-population data model, design-weighted estimators and sampling designs."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

PI_CLIP = 1.0 - 1e-12


class SurveyDataError(ValueError):
    """Raised when survey data violates the data model."""


@dataclass(frozen=True)
class Unit:
    unit_id: int
    covariates: np.ndarray
    outcome: Optional[float]
    response_flag: int
    inclusion_prob: float


@dataclass(frozen=True, eq=False)
class SurveyDataset:
    """Column-oriented collection of sampled (or population) units.

    Parameters
    ----------
    X : ndarray of shape (n, p)
        Covariates, observed for every unit.
    y : ndarray of shape (n,)
        Outcomes. Entries with ``delta == 0`` are never read by the
        estimators; samples drawn from a simulated population keep them
        until :meth:`masked` is called.
    delta : ndarray of shape (n,)
        Response indicators in {0, 1}.
    pi : ndarray of shape (n,)
        First-order inclusion probabilities in (0, 1].
    population_size : int
        Known population size ``N``.
    unit_id : ndarray of shape (n,), optional
        Stable integer identifiers; defaults to ``0..n-1``.
    """

    X: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    pi: np.ndarray
    population_size: int
    unit_id: np.ndarray = None  # type: ignore[assignment]
    clipped: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = X.shape[0]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        delta = np.asarray(self.delta).reshape(-1).astype(np.int8)
        pi = np.asarray(self.pi, dtype=float).reshape(-1)
        uid = np.arange(n) if self.unit_id is None else np.asarray(self.unit_id).reshape(-1)
        for name, arr in (("y", y), ("delta", delta), ("pi", pi), ("unit_id", uid)):
            if arr.shape[0] != n:
                raise SurveyDataError(f"{name} has length {arr.shape[0]}, expected {n}")
        if X.shape[1] < 1:
            raise SurveyDataError("at least one covariate is required")
        if not np.all(np.isfinite(X)):
            raise SurveyDataError("covariates must be finite for every unit")
        if not np.all((delta == 0) | (delta == 1)):
            raise SurveyDataError("response flags must be 0 or 1")
        if not np.all((pi > 0) & (pi <= 1)):
            raise SurveyDataError("inclusion probabilities must lie in (0, 1]")
        if np.any(delta == 1) and not np.all(np.isfinite(y[delta == 1])):
            raise SurveyDataError("respondent (delta=1) with missing outcome")
        if len(np.unique(uid)) != n:
            raise SurveyDataError("unit_id values must be unique")
        if int(self.population_size) < 1:
            raise SurveyDataError("population_size must be a positive integer")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "unit_id", uid)
        object.__setattr__(self, "population_size", int(self.population_size))
        for arr in (X, y, delta, pi, uid):
            arr.flags.writeable = False

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def respondents(self) -> np.ndarray:
        return self.delta == 1

    @property
    def design_weights(self) -> np.ndarray:
        """``1 / (N * pi_i)`` for every unit."""
        return 1.0 / (self.population_size * self.pi)

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Unit]:
        for i in range(self.n):
            yield self.unit(i)

    def unit(self, i: int) -> Unit:
        out = float(self.y[i]) if self.delta[i] == 1 else None
        return Unit(int(self.unit_id[i]), self.X[i], out, int(self.delta[i]), float(self.pi[i]))

    def subset(self, idx) -> "SurveyDataset":
        idx = np.asarray(idx, dtype=np.int64) if len(idx) == 0 else np.asarray(idx)
        return SurveyDataset(
            self.X[idx], self.y[idx], self.delta[idx], self.pi[idx],
            self.population_size, self.unit_id[idx],
        )

    def masked(self) -> "SurveyDataset":
        """Copy with nonrespondent outcomes replaced by NaN."""
        y = np.where(self.respondents, self.y, np.nan)
        return SurveyDataset(self.X, y, self.delta, self.pi, self.population_size, self.unit_id)

    @classmethod
    def from_units(cls, units: Sequence[Unit], population_size: int) -> "SurveyDataset":
        if not units:
            raise SurveyDataError("no units given")
        X = np.vstack([np.asarray(u.covariates, dtype=float).reshape(1, -1) for u in units])
        y = np.array([np.nan if u.outcome is None else u.outcome for u in units], dtype=float)
        return cls(
            X, y,
            np.array([u.response_flag for u in units]),
            np.array([u.inclusion_prob for u in units]),
            population_size,
            np.array([u.unit_id for u in units]),
        )


def _check_outcomes(data: SurveyDataset) -> None:
    if data.n == 0:
        raise SurveyDataError("empty sample")
    if not np.all(data.respondents):
        raise SurveyDataError(
            "outcome missing for some units; restrict to respondents explicitly"
        )


def ht_estimate(data: SurveyDataset, g: Callable[[np.ndarray], np.ndarray] = None) -> float:
    """Horvitz-Thompson mean ``N^-1 sum g(y_i) / pi_i``."""
    _check_outcomes(data)
    gy = data.y if g is None else np.asarray(g(data.y), dtype=float)
    return float(np.sum(gy / data.pi) / data.population_size)


def hajek_estimate(data: SurveyDataset, g: Callable[[np.ndarray], np.ndarray] = None) -> float:
    """Ratio estimator normalised by ``N_hat = sum 1/pi_i``."""
    _check_outcomes(data)
    gy = data.y if g is None else np.asarray(g(data.y), dtype=float)
    w = 1.0 / data.pi
    # centred at the first value so that a constant g comes back exactly
    g0 = gy[0]
    return float(g0 + np.sum(w * (gy - g0)) / np.sum(w))


# -- sampling designs ---------------------------------------------------------


@dataclass(frozen=True)
class SimpleRandomSample:
    n: int


@dataclass(frozen=True)
class PoissonPPS:
    expected_size: float
    size_values: np.ndarray

    def inclusion_probs(self) -> tuple[np.ndarray, int]:
        s = np.asarray(self.size_values, dtype=float)
        if np.any(s <= 0):
            raise SurveyDataError("size values must be positive")
        pi = self.expected_size * s / s.sum()
        over = pi >= 1.0
        n_clip = int(over.sum())
        if n_clip:
            warnings.warn(f"{n_clip} inclusion probabilities clipped below 1", RuntimeWarning)
            pi = np.where(over, PI_CLIP, pi)
        return pi, n_clip


SamplingDesign = Union[SimpleRandomSample, PoissonPPS]


def draw_sample(population: SurveyDataset, design: SamplingDesign, rng_seed) -> SurveyDataset:
    """Draw a sample from a fully enumerated population.

    The returned dataset keeps population order and carries the design's
    inclusion probabilities. Outcomes of nonrespondents are kept so that
    simulation code can audit them; estimators never read them.
    """
    rng = np.random.default_rng(rng_seed)
    N = population.n
    if isinstance(design, SimpleRandomSample):
        if design.n > N:
            raise SurveyDataError(f"sample size {design.n} exceeds population size {N}")
        if design.n < 1:
            raise SurveyDataError("sample size must be positive")
        idx = np.sort(rng.choice(N, size=design.n, replace=False))
        pi = np.full(design.n, design.n / N)
        clipped = 0
    elif isinstance(design, PoissonPPS):
        if len(design.size_values) != N:
            raise SurveyDataError("size_values must have one entry per population unit")
        pi_all, clipped = design.inclusion_probs()
        idx = np.flatnonzero(rng.random(N) < pi_all)
        pi = pi_all[idx]
    else:
        raise TypeError(f"unknown design {design!r}")
    return SurveyDataset(
        population.X[idx], population.y[idx], population.delta[idx], pi,
        population.population_size, population.unit_id[idx], clipped=clipped,
    )


def design_ratio(pi: np.ndarray, n: float, N: int) -> float:
    """``max(pi N / n) / min(pi N / n)``; finite whenever all pi > 0."""
    r = np.asarray(pi) * N / n
    return float(r.max() / r.min())


# -- CSV ingestion ------------------------------------------------------------


def read_csv(path: Union[str, Path], population_size: int) -> SurveyDataset:
    """Read ``unit_id, x1..xp, y, delta, pi`` rows.

    Errors carry the 1-based line number of the offending row.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SurveyDataError(f"{path}: empty file") from None
        xcols = [h for h in header if h.startswith("x") and h[1:].isdigit()]
        xcols.sort(key=lambda h: int(h[1:]))
        required = ["unit_id", "y", "delta", "pi"]
        missing = [c for c in required if c not in header]
        if missing or not xcols:
            raise SurveyDataError(
                f"{path}:1: header must contain unit_id, x1..xp, y, delta, pi; missing {missing or ['x1']}"
            )
        if [int(h[1:]) for h in xcols] != list(range(1, len(xcols) + 1)):
            raise SurveyDataError(f"{path}:1: covariate columns must be x1..xp without gaps")
        pos = {h: i for i, h in enumerate(header)}
        ids, X, y, delta, pi = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SurveyDataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                d = int(row[pos["delta"]])
                if d not in (0, 1):
                    raise ValueError("delta must be 0 or 1")
                ys = row[pos["y"]].strip()
                if d == 1 and not ys:
                    raise ValueError("delta=1 with missing y")
                yv = float(ys) if ys else np.nan
                if d == 1 and not np.isfinite(yv):
                    raise ValueError("delta=1 with non-finite y")
                p = float(row[pos["pi"]])
                if not 0 < p <= 1:
                    raise ValueError(f"pi={p} outside (0, 1]")
                xv = [float(row[pos[c]]) for c in xcols]
                uid = int(row[pos["unit_id"]])
            except ValueError as exc:
                raise SurveyDataError(f"{path}:{lineno}: {exc}") from None
            ids.append(uid)
            X.append(xv)
            y.append(yv if d == 1 else np.nan)
            delta.append(d)
            pi.append(p)
    if not ids:
        raise SurveyDataError(f"{path}: no data rows")
    if len(set(ids)) != len(ids):
        raise SurveyDataError(f"{path}: duplicate unit_id values")
    return SurveyDataset(np.array(X), np.array(y), np.array(delta), np.array(pi),
                         population_size, np.array(ids))


def write_csv(data: SurveyDataset, path: Union[str, Path]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit_id"] + [f"x{j + 1}" for j in range(data.p)] + ["y", "delta", "pi"])
        for i in range(data.n):
            yv = repr(float(data.y[i])) if data.delta[i] == 1 else ""
            w.writerow([int(data.unit_id[i])] + [repr(float(v)) for v in data.X[i]]
                       + [yv, int(data.delta[i]), repr(float(data.pi[i]))])
