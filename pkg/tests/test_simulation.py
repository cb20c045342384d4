import csv
import math

import numpy as np
import pytest

from nnimpute import simulation as S
from nnimpute.matching import fit_matching_model, match_dataset
from nnimpute.survey import SimpleRandomSample, draw_sample

# mean of expit(x1 + x2), x ~ U[0,1]^2, by 1-d quadrature over the triangular density of x1 + x2
P1_RESPONSE_RATE = 0.7238164746683675


@pytest.fixture(scope="module")
def p1():
    return S.generate_population(S.PopulationSpec("P1"), 101)


def test_p1_moments(p1):
    assert abs(p1.mu) < 0.01
    assert abs(p1.response_rate - P1_RESPONSE_RATE) < 0.02
    assert p1.eta == 0.8
    assert np.mean(p1.data.y <= p1.median) >= 0.5 > np.mean(p1.data.y < p1.median)


def test_p4_mean_centred():
    assert abs(S.generate_population(S.PopulationSpec("P4"), 102).mu) < 0.01


@pytest.mark.parametrize("pid", ["P1", "P2", "P3", "P4", "P5", "P6"])
def test_response_rate_guard(pid):
    pop = S.generate_population(S.PopulationSpec(pid, N=20_000), 7)
    assert 0.70 <= pop.response_rate <= 0.80
    assert pop.data.p == {"P1": 2, "P2": 4, "P3": 6, "P4": 2, "P5": 4, "P6": 6}[pid]


def test_population_deterministic():
    a = S.generate_population(S.PopulationSpec("P3", N=1000), 5)
    b = S.generate_population(S.PopulationSpec("P3", N=1000), 5)
    np.testing.assert_array_equal(a.data.y, b.data.y)
    np.testing.assert_array_equal(a.size_values, b.size_values)


def test_basis_choice():
    assert S.ScenarioConfig(population="P2").resolved_basis() == "quadratic"
    assert S.ScenarioConfig(population="P5").resolved_basis() == "linear"
    assert S.ScenarioConfig(population="P5", basis="quadratic").resolved_basis() == "quadratic"


def test_bad_config():
    with pytest.raises(ValueError):
        S.ScenarioConfig(design="S3")
    with pytest.raises(ValueError):
        S.ScenarioConfig(targets=("mode",))


def _small(**kw):
    base = dict(population="P1", N=5000, n=200, mc_reps=12, seed=3)
    base.update(kw)
    return S.ScenarioConfig(**base)


def test_run_is_deterministic_across_jobs():
    a = S.run_scenario(_small())
    b = S.run_scenario(_small())
    c = S.run_scenario(_small(n_jobs=2))
    assert a.rows == b.rows == c.rows
    assert [m.as_dict() for m in a.metrics] == [m.as_dict() for m in c.metrics]


def test_s2_design_runs():
    rep = S.run_scenario(_small(design="S2", expected_size=150, methods=("proposed",)))
    assert rep.failures == 0
    assert len({r["n"] for r in rep.rows}) > 1  # Poisson sampling: random size


def test_degenerate_constant_population():
    rep = S.run_scenario(_small(population="P0", targets=("mean", "proportion"), mc_reps=5))
    for mr in rep.metrics:
        assert mr.se == 0.0 and mr.bias == 0.0
        assert mr.cr == {"proposed": 1.0, "naive": 1.0}


def test_metrics_recomputed_from_replicate_log(tmp_path):
    rep = S.run_scenario(_small(mc_reps=20))
    S.write_outputs(rep, tmp_path)
    with (tmp_path / "replicates.csv").open() as fh:
        rows = [r for r in csv.DictReader(fh) if not r["error"]]
    for mr in rep.metrics:
        t = mr.target
        truth = {"mean": rep.population_summary["mu"], "proportion": rep.population_summary["eta"],
                 "median": rep.population_summary["median"]}[t]
        # one pass: running sums
        n = s1 = s2 = 0.0
        sv = {"proposed": 0.0, "naive": 0.0}
        sh = {"proposed": 0, "naive": 0}
        for r in rows:
            x = float(r[f"{t}_est"])
            n += 1
            s1 += x
            s2 += x * x
            for meth in sv:
                sv[meth] += float(r[f"{t}_{meth}_var"])
                sh[meth] += int(r[f"{t}_{meth}_hit"])
        mean = s1 / n
        v_mc = (s2 - n * mean * mean) / (n - 1)
        assert mean - truth == pytest.approx(mr.bias, rel=1e-9, abs=1e-12)
        assert math.sqrt(v_mc) == pytest.approx(mr.se, rel=1e-6)
        for meth in sv:
            assert (sv[meth] / n - v_mc) / v_mc == pytest.approx(mr.rb[meth], rel=1e-6, abs=1e-9)
            assert sh[meth] / n == mr.cr[meth]
    assert (tmp_path / "table.txt").read_text() == S.emit_table([rep])


def test_emit_table_layouts():
    header_only = S.emit_table([])
    assert header_only.count("\n") == 1 and header_only.split()[:5] == ["target", "pop", "m(x)", "Bias", "S.E."]
    mr = S.MetricRow("mean", "P1", "a", 0.0, 0.0487, {"proposed": 0.001, "naive": 25.0},
                     {"proposed": 0.949, "naive": 1.0}, 2000)
    rep = S.MonteCarloReport(S.ScenarioConfig(), [], [mr], 0, 0.0)
    lines = S.emit_table([rep]).splitlines()
    assert len(lines) == 2
    assert lines[1].split() == ["mean", "(P1)", "a", "0.00", "4.87", "0.1", "94.9", ">1000", "100.0"]
    assert S.emit_table([rep], fmt="csv").splitlines()[1] == "mean,(P1),a,0.00,4.87,0.1,94.9,>1000,100.0"


def test_bias_decomposition_identity(p1):
    for r in range(25):
        s = draw_sample(p1.data, SimpleRandomSample(300), r).masked()
        m = fit_matching_model(s).predict(s.X)
        bd = S.bias_decomposition(p1, s, match_dataset(s, m))
        assert abs(bd.D_N + bd.B_N - bd.scaled_error) < 1e-10


def test_bias_term_vanishes_without_missing(p1):
    s = draw_sample(p1.data, SimpleRandomSample(100), 0)
    s = S.replace_delta(s, np.ones(s.n, dtype=np.int8))
    bd = S.bias_decomposition(p1, s, match_dataset(s, s.X.sum(1)))
    assert bd.B_N == 0.0


def test_bias_trend_scalar_vs_raw():
    rows = S.diagnose_bias(S.ScenarioConfig(population="P2", N=20_000, seed=5), reps=30)
    sc = [r["mean_abs_B_N"] for r in rows if r["matching"] == "scalar"]
    mv = [r["mean_abs_B_N"] for r in rows if r["matching"] == "mahalanobis"]
    assert sc[2] <= sc[0]  # bounded, not growing
    assert mv[0] < mv[1] < mv[2]


@pytest.mark.slow
def test_oracle_coverage_fully_observed():
    rep = S.run_scenario(S.ScenarioConfig(fully_observed=True, targets=("mean",), methods=("proposed",),
                                          mc_reps=2000, seed=11))
    assert 0.93 <= rep.metric("mean").cr["proposed"] <= 0.97
