"""Monte Carlo lab: synthetic populations, sampling designs, per-replicate logs and summary tables."""

from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .estimators import MeanOfG, ProportionBelow, Quantile, nni_mean_estimate
from .matching import (
    MatchAssignment,
    fit_matching_model,
    match_dataset,
    multivariate_match,
    weighted_multiplicity,
)
from .smoothers import KernelConfig
from .survey import PoissonPPS, SimpleRandomSample, SurveyDataset, draw_sample
from .variance import FlatEstimatingFunction, build_scheme, variance_reports

log = logging.getLogger(__name__)

POPULATIONS = ("P0", "P1", "P2", "P3", "P4", "P5", "P6")
TARGETS = ("mean", "proportion", "median")
METHODS = ("proposed", "naive")

# (intercept, number of active covariates, quadratic term)
_FORMULAS = {
    "P1": (-1.0, 2, False),
    "P2": (-1.5, 4, False),
    "P3": (-1.5, 6, False),
    "P4": (-1.0, 2, True),
    "P5": (-1.5, 4, True),
    "P6": (-1.5, 6, True),
}


@dataclass(frozen=True)
class PopulationSpec:
    """One of the six outcome models; ``P0`` is a constant-outcome test population.

    Covariates x1..x3 are Uniform[0, 1], x4..x6 standard normal; only the
    covariates active in the outcome formula are kept.
    """

    id: str = "P1"
    N: int = 50_000

    def __post_init__(self):
        if self.id not in POPULATIONS:
            raise ValueError(f"population must be one of {POPULATIONS}, got {self.id!r}")

    @property
    def n_covariates(self) -> int:
        return 2 if self.id == "P0" else _FORMULAS[self.id][1]

    @property
    def second_order(self) -> bool:
        return self.id != "P0" and _FORMULAS[self.id][2]

    def mean_function(self, X: np.ndarray) -> np.ndarray:
        """``E(y | x)`` under the outcome formula."""
        X = np.asarray(X, dtype=float)
        if self.id == "P0":
            return np.zeros(X.shape[0])
        b0, p, quad = _FORMULAS[self.id]
        mu = b0 + X[:, :p].sum(axis=1)
        if quad:
            mu = mu + X[:, 0] ** 2 + X[:, 1] ** 2 - 2.0 / 3.0
        return mu

    def default_basis(self) -> str:
        # accurate power series for P1-P3, deliberately first-order for P4-P6
        return "linear" if self.second_order else "quadratic"


@dataclass(frozen=True, eq=False)
class Population:
    spec: PopulationSpec
    data: SurveyDataset  # fully observed y, realised delta, pi = 1
    size_values: np.ndarray
    response_rate: float
    mu: float
    c: float
    eta: float
    median: float

    def truth(self, target: str) -> float:
        return {"mean": self.mu, "proportion": self.eta, "median": self.median}[target]


def population_quantile(y: np.ndarray, alpha: float) -> float:
    """``inf{xi : F_N(xi) >= alpha}`` for the empirical population CDF."""
    ys = np.sort(y)
    return float(ys[max(math.ceil(alpha * ys.size) - 1, 0)])


def generate_population(spec: PopulationSpec, seed) -> Population:
    """Draw covariates, outcomes, response indicators and PPS size values."""
    rng = np.random.default_rng(seed)
    N = spec.N
    U = rng.random((N, 3))
    G = rng.standard_normal((N, 3))
    e = rng.standard_normal(N)
    nu = rng.standard_normal(N)
    X = np.column_stack([U, G])[:, : spec.n_covariates]
    y = np.zeros(N) if spec.id == "P0" else spec.mean_function(X) + e
    p = 1.0 / (1.0 + np.exp(-X.sum(axis=1)))
    delta = (rng.random(N) < p).astype(np.int8)
    rate = float(delta.mean())
    if spec.id != "P0" and not 0.70 <= rate <= 0.80:
        warnings.warn(f"{spec.id}: response rate {rate:.3f} outside [0.70, 0.80]", RuntimeWarning)
    sizes = np.log(np.abs(y + nu) + 4.0)
    data = SurveyDataset(X, y, delta, np.ones(N), N)
    # strict inequality: the next order statistic puts exactly 80% below c
    ys = np.sort(y)
    c = float(ys[min(math.ceil(0.8 * N), N - 1)])
    return Population(spec, data, sizes, rate, float(y.mean()), c, float(np.mean(y < c)),
                      population_quantile(y, 0.5))


@dataclass(frozen=True)
class ScenarioConfig:
    population: str = "P1"
    N: int = 50_000
    design: str = "S1"
    n: int = 800
    expected_size: float = 400.0
    basis: str = "auto"
    targets: tuple = TARGETS
    methods: tuple = METHODS
    mc_reps: int = 2000
    bandwidth_scale: float = 1.5
    fully_observed: bool = False
    seed: int = 20170901
    population_seed: Optional[int] = None
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.design not in ("S1", "S2"):
            raise ValueError("design must be S1 (SRS) or S2 (Poisson PPS)")
        if self.basis not in ("auto", "linear", "quadratic"):
            raise ValueError("basis must be auto, linear or quadratic")
        bad = set(self.targets) - set(TARGETS)
        if bad:
            raise ValueError(f"unknown targets {sorted(bad)}")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown variance methods {sorted(bad)}")
        if self.mc_reps < 2:
            raise ValueError("mc_reps must be at least 2")
        PopulationSpec(self.population, self.N)

    @property
    def population_spec(self) -> PopulationSpec:
        return PopulationSpec(self.population, self.N)

    def resolved_basis(self) -> str:
        return self.population_spec.default_basis() if self.basis == "auto" else self.basis

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = list(self.targets)
        d["methods"] = list(self.methods)
        return d


FAST_REPS = 500


def _specs(pop: Population, targets: Sequence[str]):
    table = {"mean": MeanOfG(name="mean"), "proportion": ProportionBelow(pop.c, name="proportion"),
             "median": Quantile(0.5, name="median")}
    return [table[t] for t in targets]


def _design(cfg: ScenarioConfig, pop: Population):
    if cfg.design == "S1":
        return SimpleRandomSample(cfg.n)
    return PoissonPPS(cfg.expected_size, pop.size_values)


def _replicate(cfg: ScenarioConfig, pop: Population, r: int) -> dict:
    """One Monte Carlo replicate; returns a flat log row."""
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(r,))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sample = draw_sample(pop.data, _design(cfg, pop), ss)
    if cfg.fully_observed:
        sample = replace_delta(sample, np.ones(sample.n, dtype=np.int8))
    sample = sample.masked()
    row = {"rep": r, "n": sample.n, "respondents": int(sample.respondents.sum()), "error": ""}
    specs = _specs(pop, cfg.targets)
    try:
        model = fit_matching_model(sample, cfg.resolved_basis())
        m = model.predict(sample.X)
        a = match_dataset(sample, m)
        k = weighted_multiplicity(a, sample.pi)
        scheme = build_scheme("jackknife", sample.design_weights)
        reports = variance_reports(sample, a, m, specs, scheme,
                                   KernelConfig(scale=cfg.bandwidth_scale), cfg.methods, k)
    except (FlatEstimatingFunction, ValueError, np.linalg.LinAlgError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    for rep in reports:
        truth = pop.truth(rep.target)
        row[f"{rep.target}_est"] = rep.point
        row[f"{rep.target}_{rep.method}_var"] = rep.variance
        row[f"{rep.target}_{rep.method}_hit"] = int(rep.ci_low <= truth <= rep.ci_high)
        if rep.derivative is not None:
            row[f"{rep.target}_{rep.method}_deriv"] = rep.derivative
    return row


def replace_delta(data: SurveyDataset, delta: np.ndarray) -> SurveyDataset:
    return SurveyDataset(data.X, data.y, delta, data.pi, data.population_size, data.unit_id)


@dataclass(frozen=True)
class MetricRow:
    target: str
    population: str
    m_accuracy: str
    bias: float
    se: float
    rb: dict
    cr: dict
    mc_reps: int

    def as_dict(self) -> dict:
        d = {"target": self.target, "population": self.population, "m": self.m_accuracy,
             "bias_x100": 100 * self.bias, "se_x100": 100 * self.se, "mc_reps": self.mc_reps}
        for meth in self.rb:
            d[f"{meth}_rb_pct"] = 100 * self.rb[meth]
            d[f"{meth}_cr_pct"] = 100 * self.cr[meth]
        return d


@dataclass
class MonteCarloReport:
    config: ScenarioConfig
    rows: list
    metrics: list
    failures: int
    wall_time: float
    population_summary: dict = field(default_factory=dict)

    def metric(self, target: str) -> MetricRow:
        for mr in self.metrics:
            if mr.target == target:
                return mr
        raise KeyError(target)


def summarize(rows: Sequence[dict], pop: Population, cfg: ScenarioConfig) -> list:
    """Bias, S.E., relative bias of variance estimators and CI coverage per target."""
    ok = [r for r in rows if not r["error"]]
    out = []
    acc = "i" if (cfg.resolved_basis() == "linear" and pop.spec.second_order) else "a"
    for t in cfg.targets:
        est = np.array([r[f"{t}_est"] for r in ok])
        v_mc = float(np.var(est, ddof=1)) if est.size > 1 else float("nan")
        rb, cr = {}, {}
        for meth in cfg.methods:
            v = np.array([r[f"{t}_{meth}_var"] for r in ok])
            hits = np.array([r[f"{t}_{meth}_hit"] for r in ok])
            rb[meth] = (v.mean() - v_mc) / v_mc if v_mc > 0 else float("nan")
            cr[meth] = float(hits.mean())
        out.append(MetricRow(t, pop.spec.id, acc, float(est.mean() - pop.truth(t)),
                             math.sqrt(v_mc), rb, cr, int(est.size)))
    return out


def run_scenario(cfg: ScenarioConfig, population: Optional[Population] = None) -> MonteCarloReport:
    """Run the Monte Carlo loop; identical output for identical config and seed."""
    t0 = time.perf_counter()
    pseed = cfg.seed if cfg.population_seed is None else cfg.population_seed
    pop = population if population is not None else generate_population(cfg.population_spec, pseed)
    if cfg.n_jobs == 1:
        rows = [_replicate(cfg, pop, r) for r in range(cfg.mc_reps)]
    else:
        rows = Parallel(n_jobs=cfg.n_jobs)(delayed(_replicate)(cfg, pop, r) for r in range(cfg.mc_reps))
    rows.sort(key=lambda r: r["rep"])
    failures = sum(1 for r in rows if r["error"])
    if failures:
        log.warning("%d of %d replicates failed", failures, len(rows))
    metrics = summarize(rows, pop, cfg)
    summary = {"N": pop.spec.N, "mu": pop.mu, "c": pop.c, "eta": pop.eta, "median": pop.median,
               "response_rate": pop.response_rate}
    return MonteCarloReport(cfg, rows, metrics, failures, time.perf_counter() - t0, summary)


# -- reporting --------------------------------------------------------------------


def _fmt_rb(x: float) -> str:
    if not np.isfinite(x):
        return "NA"
    return ">1000" if x > 1000 else f"{x:.1f}"


TABLE_HEADER = ("target", "pop", "m(x)", "Bias", "S.E.")


def emit_table(reports: Sequence[MonteCarloReport], methods: Sequence[str] = METHODS,
               fmt: str = "text") -> str:
    """Render metric rows as aligned text or CSV.

    Columns: target, population, m-accuracy flag, Bias (x100), S.E. (x100),
    then RB (%) and CR (%) per variance method. RB above 1000 prints as ">1000".
    """
    header = list(TABLE_HEADER)
    for meth in methods:
        header += [f"{meth} RB", f"{meth} CR"]
    lines = []
    for rep in reports:
        for mr in rep.metrics:
            cells = [mr.target, f"({mr.population})", mr.m_accuracy,
                     f"{100 * mr.bias:.2f}", f"{100 * mr.se:.2f}"]
            for meth in methods:
                if meth in mr.rb:
                    cells += [_fmt_rb(100 * mr.rb[meth]), f"{100 * mr.cr[meth]:.1f}"]
                else:
                    cells += ["", ""]
            lines.append(cells)
    if fmt == "csv":
        return "\n".join(",".join(c for c in row) for row in [header] + lines) + "\n"
    widths = [max(len(r[j]) for r in [header] + lines) for j in range(len(header))]
    render = lambda row: "  ".join(c.rjust(w) for c, w in zip(row, widths)).rstrip()
    return "\n".join([render(header)] + [render(r) for r in lines]) + "\n"


def write_outputs(report: MonteCarloReport, out: Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    keys = []
    for r in report.rows:
        keys += [k for k in r if k not in keys]
    with (out / "replicates.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, restval="")
        w.writeheader()
        for r in report.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    with (out / "report.csv").open("w", newline="") as fh:
        rows = [mr.as_dict() for mr in report.metrics]
        fields = list(rows[0]) if rows else ["target"]
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    (out / "table.txt").write_text(emit_table([report], report.config.methods))


# -- bias decomposition -----------------------------------------------------------


@dataclass(frozen=True)
class BiasDecomposition:
    D_N: float
    B_N: float
    scaled_error: float  # sqrt(n) (mu_hat - mu)
    estimate: float
    mu: float


def assignment_from_donors(data: SurveyDataset, donor: np.ndarray) -> MatchAssignment:
    donor = np.asarray(donor, dtype=np.int64)
    rec = np.flatnonzero(data.delta == 0)
    count = np.bincount(donor[rec], minlength=data.n).astype(np.int64)
    return MatchAssignment(data.unit_id, data.delta, donor, count)


def bias_decomposition(pop: Population, sample: SurveyDataset,
                       assignment: MatchAssignment) -> BiasDecomposition:
    """Split ``sqrt(n)(mu_hat - mu)`` into the linear term and the matching-discrepancy bias.

    Uses the exact conditional mean from the population formula, so it is
    only available for simulated data.
    """
    mu_x = pop.spec.mean_function(sample.X)
    k = weighted_multiplicity(assignment, sample.pi)
    N = sample.population_size
    n = sample.n
    est = nni_mean_estimate(sample, assignment, MeanOfG(), k).value
    r = sample.respondents
    resid = np.zeros(n)
    resid[r] = sample.y[r] - mu_x[r]
    D = math.sqrt(n) * (np.sum((mu_x + sample.delta * (1 + k) * resid) / sample.pi) / N - pop.mu)
    gap = (1 - sample.delta) * (mu_x[assignment.donor] - mu_x)
    B = math.sqrt(n) / N * np.sum(gap / sample.pi)
    scaled = math.sqrt(n) * (est - pop.mu)
    if not math.isclose(D + B, scaled, rel_tol=0, abs_tol=1e-10 * max(1.0, abs(scaled))):
        raise AssertionError(f"D_N + B_N = {D + B!r} but sqrt(n)(mu_hat - mu) = {scaled!r}")
    return BiasDecomposition(float(D), float(B), float(scaled), est, pop.mu)


def diagnose_bias(cfg: ScenarioConfig, sizes: Sequence[int] = (200, 800, 3200), reps: int = 50,
                  population: Optional[Population] = None) -> list[dict]:
    """Mean |B_N| over repeated SRS draws for scalar-m and raw-covariate matching."""
    pseed = cfg.seed if cfg.population_seed is None else cfg.population_seed
    pop = population if population is not None else generate_population(cfg.population_spec, pseed)
    out = []
    for n in sizes:
        acc = {"scalar": [], "mahalanobis": []}
        for r in range(reps):
            ss = np.random.SeedSequence(cfg.seed, spawn_key=(n, r))
            sample = draw_sample(pop.data, SimpleRandomSample(n), ss).masked()
            m = fit_matching_model(sample, cfg.resolved_basis()).predict(sample.X)
            acc["scalar"].append(bias_decomposition(pop, sample, match_dataset(sample, m)).B_N)
            donor = multivariate_match(sample.X, sample.delta, sample.unit_id)
            acc["mahalanobis"].append(
                bias_decomposition(pop, sample, assignment_from_donors(sample, donor)).B_N)
        for mode, vals in acc.items():
            v = np.abs(np.array(vals))
            out.append({"n": n, "matching": mode, "mean_abs_B_N": float(v.mean()),
                        "se": float(v.std(ddof=1) / math.sqrt(v.size)), "reps": reps})
    return out
