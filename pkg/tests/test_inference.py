import warnings
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from sdipe.datamodel import Dataset
from sdipe.errors import EstimationError, UnstableBootstrapError
from sdipe.impute import ImputationConfig
from sdipe.inference import (
    BALANCE_COLUMNS,
    SIM_COLUMNS,
    McScenario,
    average_balance,
    balance_report,
    bootstrap_ci,
    bootstrap_distribution,
    default_delta_grid,
    percentile_interval,
    read_table,
    run_monte_carlo,
    sensitivity_sweep,
    weighted_mean_difference,
    write_table,
)
from sdipe.numstat import RngStream
from sdipe.simgen import SimConfig, simulate_dataset

SMALL = SimConfig(n=300, missing_target=0.3, seed=4)


def stub_truth(ds, rng):
    return 1.5


def stub_flaky(ds, rng):
    # fails on roughly 40% of calls, decided by the stream only
    if rng.uniform(1)[0] < 0.4:
        raise EstimationError("stub failure")
    return float(ds.y.mean())


def stub_rare_failure(ds, rng):
    if rng.uniform(1)[0] < 0.05:
        raise EstimationError("stub failure")
    return float(ds.y.mean())


def stub_mean(ds, rng):
    return float(ds.y[ds.a == 1].mean() - ds.y[ds.a == 0].mean())


# --- percentile bootstrap --------------------------------------------------


def test_percentile_ranks_for_200():
    vals = np.random.default_rng(0).permutation(np.arange(1.0, 201.0))
    assert percentile_interval(vals, 0.95) == (5.0, 196.0)


@given(st.integers(2, 500), st.floats(0.5, 0.99))
def test_percentile_ranks_symmetric(b, level):
    lo, hi = percentile_interval(np.arange(1.0, b + 1.0), level)
    assert lo + hi == b + 1
    assert 1 <= lo <= hi <= b


def test_percentile_rejects_empty():
    with pytest.raises(ValueError):
        percentile_interval([], 0.95)


def test_bootstrap_constant_stub():
    ds, _ = simulate_dataset(SMALL, RngStream(1))
    assert bootstrap_ci(ds, stub_truth, 20, 0.95, RngStream(2)) == (1.5, 1.5)


def test_bootstrap_failure_threshold():
    ds, _ = simulate_dataset(SMALL, RngStream(1))
    with pytest.raises(UnstableBootstrapError):
        bootstrap_ci(ds, stub_flaky, 100, 0.95, RngStream(2))
    est, failed = bootstrap_distribution(ds, stub_rare_failure, 100, RngStream(2))
    assert 0 < failed <= 20 and est.size == 100 - failed
    lo, hi = bootstrap_ci(ds, stub_rare_failure, 100, 0.95, RngStream(2))
    assert lo <= hi


def test_bootstrap_resamples_rows_with_replacement():
    ds, _ = simulate_dataset(SMALL, RngStream(1))
    est, _ = bootstrap_distribution(ds, lambda d, r: float(d.y.mean()), 400, RngStream(3))
    # bootstrap SE of the mean tracks the analytic SE
    assert abs(est.std(ddof=1) / (ds.y.std(ddof=1) / np.sqrt(ds.n)) - 1) < 0.15


def test_bootstrap_deterministic():
    ds, _ = simulate_dataset(SMALL, RngStream(1))
    a, _ = bootstrap_distribution(ds, stub_mean, 30, RngStream(9))
    b, _ = bootstrap_distribution(ds, stub_mean, 30, RngStream(9))
    assert np.array_equal(a, b)


# --- Monte Carlo harness ---------------------------------------------------


def test_scenario_validation():
    with pytest.raises(ValueError):
        McScenario(sim=SMALL, replicates=0)
    with pytest.raises(ValueError):
        McScenario(sim=SMALL, bootstrap_b=1)


def test_truth_stub_has_zero_bias_full_coverage():
    rep = run_monte_carlo(McScenario(sim=SMALL, replicates=5, bootstrap_b=4, estimator=stub_truth))
    assert rep.relative_bias_pct == 0.0
    assert rep.coverage == 1.0
    assert (rep.ci_lo_mean, rep.ci_hi_mean) == (1.5, 1.5)
    assert rep.method == "stub_truth"


def test_report_row_matches_columns():
    rep = run_monte_carlo(McScenario(sim=SMALL, replicates=3, bootstrap_b=5, icfg=ImputationConfig(m=2)))
    row = rep.row()
    assert tuple(row) == SIM_COLUMNS
    assert row["missing_pct"] == 30.0 and row["prevalence"] == 0.2
    assert 0.0 <= row["coverage"] <= 1.0 and row["relative_bias_pct"] >= 0
    assert rep.estimates.shape == (3,)
    assert rep.relative_bias_pct == pytest.approx(abs(rep.estimates.mean() - 1.5) / 1.5 * 100, abs=1e-12)


def test_monte_carlo_seed_determinism():
    sc = McScenario(sim=SMALL, icfg=ImputationConfig(m=2), replicates=4, bootstrap_b=5)
    r1, r2 = run_monte_carlo(sc), run_monte_carlo(sc)
    assert np.array_equal(r1.estimates, r2.estimates)
    assert np.array_equal(r1.ci_lo, r2.ci_lo) and np.array_equal(r1.ci_hi, r2.ci_hi)
    assert r1.row() == r2.row()


def test_parallel_equals_serial():
    sc = McScenario(sim=SMALL, icfg=ImputationConfig(m=2), replicates=6, bootstrap_b=4)
    serial = run_monte_carlo(sc, workers=1)
    parallel = run_monte_carlo(sc, workers=2)
    assert serial.row() == parallel.row()
    assert np.array_equal(serial.estimates, parallel.estimates)


def test_bias_invariant_to_intercept():
    sc = McScenario(sim=SMALL, icfg=ImputationConfig(m=3), replicates=5, bootstrap_b=5)
    shifted = McScenario(sim=SMALL.with_(beta0=4.0), icfg=ImputationConfig(m=3), replicates=5, bootstrap_b=5)
    for method in ("sdipe", "baseline"):
        r0 = run_monte_carlo(replace(sc, estimator=method))
        r1 = run_monte_carlo(replace(shifted, estimator=method))
        np.testing.assert_allclose(r1.estimates, r0.estimates, rtol=0, atol=1e-9)
        assert r1.relative_bias_pct == pytest.approx(r0.relative_bias_pct, abs=1e-6)
        assert r1.coverage == r0.coverage


def test_failed_replicates_excluded_and_reported():
    sc = McScenario(sim=SMALL, replicates=40, bootstrap_b=2, estimator=stub_rare_failure)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        rep = run_monte_carlo(sc, with_ci=False)
    assert rep.n_failed > 0
    assert rep.estimates.size == 40 - rep.n_failed
    assert any("replicates failed" in str(w.message) for w in rec)


def test_all_replicates_failing_raises():
    def always_fail(ds, rng):
        raise EstimationError("nope")

    with pytest.raises(EstimationError):
        run_monte_carlo(McScenario(sim=SMALL, replicates=3, estimator=always_fail), with_ci=False)


# --- delta sweep -----------------------------------------------------------


def test_sweep_zero_matches_monte_carlo_bias():
    sc = McScenario(sim=SMALL, icfg=ImputationConfig(m=3), replicates=5, estimator="baseline")
    rows = sensitivity_sweep(sc, [0.0])
    rep = run_monte_carlo(sc, with_ci=False)
    assert len(rows) == 1
    assert rows[0].avg_bias == rep.signed_bias
    assert (rows[0].delta, rows[0].missing_pct, rows[0].n) == (0.0, 30.0, 300)


def test_sweep_one_row_per_delta_and_shared_data():
    sc = McScenario(sim=SMALL, icfg=ImputationConfig(m=3), replicates=4, estimator="sdipe")
    rows = sensitivity_sweep(sc, [-0.5, 0.0, 0.5])
    assert [r.delta for r in rows] == [-0.5, 0.0, 0.5]
    # SDIPE absorbs the shift, so with shared replicates the biases coincide
    assert max(r.avg_bias for r in rows) - min(r.avg_bias for r in rows) < 1e-9


def test_sweep_rejects_empty_grid():
    with pytest.raises(ValueError):
        sensitivity_sweep(McScenario(sim=SMALL), [])


def test_default_grid():
    assert default_delta_grid() == [-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0]


# --- balance ---------------------------------------------------------------


def test_weighted_mean_difference_eight_rows():
    x = [0.3, -1.2, 2.5, 0.0, 1.1, -0.4, 0.9, 1.7]
    a = [1, 1, 1, 0, 0, 0, 0, 1]
    sw = [0.8, 1.25, 0.5, 1.6, 0.9, 1.1, 0.7, 1.3]
    fx, fw = [Fraction(str(v)) for v in x], [Fraction(str(v)) for v in sw]
    t = sum(w * v for w, v, g in zip(fw, fx, a) if g) / sum(w for w, g in zip(fw, a) if g)
    c = sum(w * v for w, v, g in zip(fw, fx, a) if not g) / sum(w for w, g in zip(fw, a) if not g)
    assert abs(weighted_mean_difference(x, a, np.array(sw)) - float(t - c)) < 1e-12


def test_balance_unit_weights_equal_unweighted_difference():
    # arms share covariate means, so the fitted propensity is flat and SW = 1
    w = np.array([[-1.0], [1.0], [0.0], [-2.0], [2.0], [0.5], [-0.5], [0.0]])
    z = np.array([1.0, -1.0, 0.0, 3.0, -3.0, 0.25, -0.25, 0.0])
    a = np.array([1, 1, 1, 0, 0, 0, 0, 0])
    y = np.arange(8.0)
    ds = Dataset(y=y, a=a, w=w, z=z, r_z=np.ones(8), covariate_names=("W",))
    for method in ("sdipe", "baseline"):
        rows = balance_report(ds, ImputationConfig(), method, RngStream(0))
        assert [(r.subgroup, r.confounder) for r in rows] == [("observed", "W"), ("observed", "Z")]
        for r in rows:
            col = w[:, 0] if r.confounder == "W" else z
            assert abs(r.abs_diff - abs(col[a == 1].mean() - col[a == 0].mean())) < 1e-12


def _oracle_observed_balance(ds):
    # independent path: scipy optimizer on the Bernoulli log-likelihood
    obs = ds.r_z == 1
    X = np.column_stack([np.ones(obs.sum()), ds.z[obs], ds.w[obs]])
    a = ds.a[obs]

    def nll(b):
        eta = X @ b
        return np.sum(np.logaddexp(0, eta) - a * eta)

    b = optimize.minimize(nll, np.zeros(X.shape[1]), method="BFGS", options={"gtol": 1e-10}).x
    e = np.clip(1 / (1 + np.exp(-X @ b)), 0.01, 0.99)
    p = a.mean()
    sw = np.where(a == 1, p / e, (1 - p) / (1 - e))

    def diff(x):
        return np.average(x[a == 1], weights=sw[a == 1]) - np.average(x[a == 0], weights=sw[a == 0])

    return {"W": abs(diff(ds.w[obs, 0])), "Z": abs(diff(ds.z[obs]))}


def test_balance_observed_subgroup_matches_oracle():
    ds, _ = simulate_dataset(SimConfig(n=400, missing_target=0.3), RngStream(17))
    oracle = _oracle_observed_balance(ds)
    rows = balance_report(ds, ImputationConfig(m=3), "sdipe", RngStream(1))
    got = {r.confounder: r.abs_diff for r in rows if r.subgroup == "observed"}
    for k in ("W", "Z"):
        assert abs(got[k] - oracle[k]) < 1e-6


def test_balance_rows_nonnegative_and_shaped():
    ds, _ = simulate_dataset(SimConfig(n=400, missing_target=0.3), RngStream(18))
    for method in ("sdipe", "baseline"):
        rows = balance_report(ds, ImputationConfig(m=3), method, RngStream(1))
        assert len(rows) == 4
        assert all(np.isfinite(r.abs_diff) and r.abs_diff >= 0 for r in rows)
    with pytest.raises(ValueError):
        balance_report(ds, ImputationConfig(), "other", RngStream(1))


def test_average_balance_row_count_and_determinism():
    sim = SimConfig(n=300, missing_target=0.3)
    rows = average_balance(sim, ImputationConfig(m=2), replicates=2)
    assert len(rows) == 8
    assert {(r.confounder, r.subgroup, r.method) for r in rows} == {
        (c, s, m) for c in ("W", "Z") for s in ("observed", "missing") for m in ("sdipe", "baseline")
    }
    again = average_balance(sim, ImputationConfig(m=2), replicates=2)
    assert [r.abs_diff for r in rows] == [r.abs_diff for r in again]
    par = average_balance(sim, ImputationConfig(m=2), replicates=2, workers=2)
    assert [r.abs_diff for r in rows] == [r.abs_diff for r in par]


# --- tables ----------------------------------------------------------------


def test_table_round_trip(tmp_path):
    rep = run_monte_carlo(McScenario(sim=SMALL, replicates=2, bootstrap_b=3, estimator=stub_mean))
    path = tmp_path / "t.csv"
    write_table(path, SIM_COLUMNS, [rep.row()])
    back = read_table(path)
    assert len(back) == 1
    for k in SIM_COLUMNS:
        assert back[0][k] == rep.row()[k]
    text = path.read_text()
    assert text.splitlines()[0] == ",".join(SIM_COLUMNS)


def test_balance_table_header(tmp_path):
    rows = average_balance(SimConfig(n=300, missing_target=0.3), ImputationConfig(m=2), replicates=1)
    path = tmp_path / "b.csv"
    write_table(path, BALANCE_COLUMNS, rows)
    back = read_table(path)
    assert len(back) == 8 and set(back[0]) == set(BALANCE_COLUMNS)
