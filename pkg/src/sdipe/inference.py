"""Bootstrap intervals, the Monte Carlo harness, delta sweeps and
covariate-balance diagnostics.

Random substreams are addressed by position so results do not depend on
execution order:

    replicate r          master.substream(r)
      data generation      .substream(0)
      point estimate       .substream(1)
      bootstrap resample i .substream(2, i)
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Sequence, Union

import numpy as np

from .datamodel import Dataset, stratify, subset
from .errors import EstimationError, SdipeError, UnstableBootstrapError
from .estimators import ate_sw, point_estimate, stratum_weights
from .impute import ImputationConfig, impute_multiply
from .numstat import RngStream
from .simgen import SimConfig, simulate_dataset

Estimator = Callable[[Dataset, RngStream], float]

MAX_BOOTSTRAP_FAILURE = 0.20
MAX_REPLICATE_FAILURE = 0.02

_DATA, _ESTIMATE, _BOOTSTRAP = 0, 1, 2


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------


def percentile_interval(estimates, level: float = 0.95) -> tuple[float, float]:
    """Percentile interval from order statistics.

    With ``b`` sorted estimates and ``alpha = 1 - level`` the bounds are the
    ``ceil(alpha/2 * b)``-th and ``(b + 1 - ceil(alpha/2 * b))``-th order
    statistics (1-based), e.g. the 5th and 196th of 200 at 95%.
    """
    est = np.sort(np.asarray(estimates, dtype=float))
    b = est.shape[0]
    if b == 0:
        raise ValueError("no estimates")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    lo_rank = max(1, math.ceil((1.0 - level) / 2.0 * b - 1e-9))
    hi_rank = b + 1 - lo_rank
    return float(est[lo_rank - 1]), float(est[hi_rank - 1])


def bootstrap_distribution(ds: Dataset, estimator: Estimator, b: int, rng: RngStream) -> tuple[np.ndarray, int]:
    """Re-estimates on ``b`` row resamples; returns (successes, n_failed).

    The whole pipeline, imputation included, reruns on each resample.
    Resample ``i`` uses ``rng.substream(i)`` for both row selection and
    estimation.
    """
    if b < 2:
        raise ValueError("bootstrap needs b >= 2")
    out, failed = [], 0
    for i in range(b):
        s = rng.substream(i)
        rows = s.integers(ds.n, ds.n)
        try:
            out.append(float(estimator(subset(ds, rows, allow_duplicates=True), s.substream(0))))
        except SdipeError:
            failed += 1
    return np.array(out), failed


def bootstrap_ci(ds: Dataset, estimator: Estimator, b: int, level: float, rng: RngStream) -> tuple[float, float]:
    """Percentile bootstrap interval.

    Raises
    ------
    UnstableBootstrapError
        If more than 20% of the resamples cannot be estimated.
    """
    est, failed = bootstrap_distribution(ds, estimator, b, rng)
    if failed > MAX_BOOTSTRAP_FAILURE * b:
        raise UnstableBootstrapError(f"{failed} of {b} bootstrap resamples failed")
    return percentile_interval(est, level)


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McScenario:
    """One cell of a simulation table.

    ``estimator`` is ``"sdipe"``, ``"baseline"`` or a callable
    ``(dataset, rng) -> float``.
    """

    sim: SimConfig
    icfg: ImputationConfig = ImputationConfig()
    replicates: int = 500
    bootstrap_b: int = 200
    ci_level: float = 0.95
    estimator: Union[str, Estimator] = "sdipe"

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.bootstrap_b < 2:
            raise ValueError("bootstrap_b must be >= 2")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")

    @property
    def method(self) -> str:
        if isinstance(self.estimator, str):
            return self.estimator
        return getattr(self.estimator, "__name__", "custom")

    def estimator_fn(self) -> Estimator:
        if isinstance(self.estimator, str):
            return partial(point_estimate, self.estimator, self.icfg)
        return self.estimator


@dataclass(frozen=True)
class ReplicateResult:
    index: int
    estimate: float = float("nan")
    ci_lo: float = float("nan")
    ci_hi: float = float("nan")
    error: str | None = None


SIM_COLUMNS = ("method", "n", "prevalence", "missing_pct", "delta",
               "relative_bias_pct", "ci_lo_mean", "ci_hi_mean", "coverage")


@dataclass(eq=False)
class SimReport:
    method: str
    n: int
    prevalence: float
    missing_pct: float
    delta: float
    truth: float
    relative_bias_pct: float
    signed_bias: float
    ci_lo_mean: float
    ci_hi_mean: float
    coverage: float
    estimates: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    failures: list = field(default_factory=list)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in SIM_COLUMNS}

    @property
    def n_failed(self) -> int:
        return len(self.failures)


def _replicate(sc: McScenario, seed: int, path: tuple, with_ci: bool, r: int) -> ReplicateResult:
    rs = RngStream(seed, path).substream(r)
    est_fn = sc.estimator_fn()
    try:
        ds, _ = simulate_dataset(sc.sim, rs.substream(_DATA))
        est = est_fn(ds, rs.substream(_ESTIMATE))
        lo = hi = float("nan")
        if with_ci:
            lo, hi = bootstrap_ci(ds, est_fn, sc.bootstrap_b, sc.ci_level, rs.substream(_BOOTSTRAP))
    except SdipeError as exc:
        return ReplicateResult(index=r, error=f"{type(exc).__name__}: {exc}")
    return ReplicateResult(index=r, estimate=float(est), ci_lo=lo, ci_hi=hi)


def _map(fn, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunk))


def run_replicates(sc: McScenario, rng: RngStream | None = None, workers: int = 1, with_ci: bool = True) -> list[ReplicateResult]:
    rng = rng if rng is not None else RngStream(sc.sim.seed)
    fn = partial(_replicate, sc, rng.seed, rng.path, with_ci)
    results = _map(fn, list(range(sc.replicates)), workers)
    return sorted(results, key=lambda res: res.index)


def summarize(sc: McScenario, results: list[ReplicateResult], with_ci: bool = True) -> SimReport:
    truth = sc.sim.true_ate
    ok = [res for res in results if res.error is None]
    failures = [(res.index, res.error) for res in results if res.error is not None]
    if not ok:
        raise EstimationError(f"all {len(results)} replicates failed; first: {failures[0][1]}")
    if len(failures) > MAX_REPLICATE_FAILURE * len(results):
        warnings.warn(f"{len(failures)} of {len(results)} replicates failed and were excluded",
                      RuntimeWarning, stacklevel=2)
    est = np.array([res.estimate for res in ok])
    lo = np.array([res.ci_lo for res in ok])
    hi = np.array([res.ci_hi for res in ok])
    mean_est = float(est.mean())
    if with_ci:
        coverage = float(np.mean((lo <= truth) & (truth <= hi)))
        lo_mean, hi_mean = float(lo.mean()), float(hi.mean())
    else:
        coverage = lo_mean = hi_mean = float("nan")
    return SimReport(
        method=sc.method,
        n=sc.sim.n,
        prevalence=sc.sim.prevalence_target,
        missing_pct=round(100.0 * sc.sim.missing_target, 10),
        delta=float(sc.icfg.delta),
        truth=truth,
        relative_bias_pct=abs(mean_est - truth) / abs(truth) * 100.0,
        signed_bias=mean_est - truth,
        ci_lo_mean=lo_mean,
        ci_hi_mean=hi_mean,
        coverage=coverage,
        estimates=est,
        ci_lo=lo,
        ci_hi=hi,
        failures=failures,
    )


def run_monte_carlo(sc: McScenario, rng: RngStream | None = None, workers: int = 1, with_ci: bool = True) -> SimReport:
    """Relative bias, mean CI and coverage of ``sc.estimator`` over
    ``sc.replicates`` simulated datasets.

    Replicates that raise are excluded and listed in ``failures``; a
    warning is issued when more than 2% fail.
    """
    return summarize(sc, run_replicates(sc, rng, workers, with_ci), with_ci)


@dataclass(frozen=True)
class SweepRow:
    delta: float
    missing_pct: float
    n: int
    avg_bias: float
    method: str = "sdipe"
    prevalence: float = float("nan")


SWEEP_COLUMNS = ("delta", "missing_pct", "n", "avg_bias")


def sensitivity_sweep(sc: McScenario, delta_grid: Sequence[float], rng: RngStream | None = None, workers: int = 1) -> list[SweepRow]:
    """Average signed bias for each delta, bootstrap skipped.

    Every delta reuses the same replicate substreams, so the datasets and
    imputation noise are shared across the grid.
    """
    grid = [float(d) for d in delta_grid]
    if not grid:
        raise ValueError("delta grid is empty")
    rows = []
    for d in grid:
        sub = replace(sc, icfg=replace(sc.icfg, delta=d))
        rep = run_monte_carlo(sub, rng, workers, with_ci=False)
        rows.append(SweepRow(delta=d, missing_pct=rep.missing_pct, n=rep.n, avg_bias=rep.signed_bias,
                             method=sc.method, prevalence=sc.sim.prevalence_target))
    return rows


def default_delta_grid() -> list[float]:
    return [round(-1.0 + 0.25 * i, 10) for i in range(9)]


# ---------------------------------------------------------------------------
# Covariate balance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BalanceRow:
    confounder: str
    subgroup: str
    method: str
    abs_diff: float
    prevalence: float = float("nan")
    missing_pct: float = float("nan")


BALANCE_COLUMNS = ("prevalence", "missing_pct", "confounder", "subgroup", "method", "abs_diff")


def weighted_mean_difference(x, a, sw) -> float:
    """Treated minus control weighted mean of ``x``."""
    return ate_sw(x, a, sw)


def _w_labels(ds: Dataset) -> list[str]:
    return list(ds.covariate_names)


def balance_report(ds: Dataset, icfg: ImputationConfig, method: str, rng: RngStream) -> list[BalanceRow]:
    """Weighted treated-control mean differences of each W column and of Z,
    within the observed and the missing subgroup.

    SDIPE uses its per-stratum weights. The baseline uses its global
    weights restricted to each subgroup. In the missing subgroup Z is the
    imputed value; the signed difference is averaged over imputations
    (each with its own weights) before taking the absolute value. ``rng``
    drives the imputation exactly as the estimator would.
    """
    if method not in ("sdipe", "baseline"):
        raise ValueError(f"unknown method {method!r}")
    sv = stratify(ds)
    labels = _w_labels(ds)
    a, w = ds.a, ds.w
    # (subgroup, confounder) -> list of signed differences over imputations
    diffs: dict[tuple[str, str], list[float]] = {}

    def record(subgroup, rows, zcol, sw):
        for j, lab in enumerate(labels):
            diffs.setdefault((subgroup, lab), []).append(weighted_mean_difference(w[rows, j], a[rows], sw))
        diffs.setdefault((subgroup, "Z"), []).append(weighted_mean_difference(zcol[rows], a[rows], sw))

    groups = [("observed", sv.observed), ("missing", sv.missing)]
    groups = [(g, rows) for g, rows in groups if rows.size]

    if method == "sdipe":
        obs = sv.observed
        wv = stratum_weights(a[obs], np.column_stack([ds.z[obs], w[obs]]), "observed")
        record("observed", obs, ds.z, wv.sw)
        if sv.missing.size:
            miss = sv.missing
            for zc in impute_multiply(ds, icfg, rng):
                wv = stratum_weights(a[miss], np.column_stack([zc[miss], w[miss]]), "missing")
                record("missing", miss, zc, wv.sw)
    else:
        if ds.n_missing == 0:
            columns = [np.asarray(ds.z)]
        else:
            columns = list(impute_multiply(ds, icfg, rng))
        for zc in columns:
            wv = stratum_weights(a, np.column_stack([zc, w]), "all")
            for g, rows in groups:
                record(g, rows, zc, wv.sw[rows])

    out = []
    for g, _ in groups:
        for conf in (*labels, "Z"):
            out.append(BalanceRow(confounder=conf, subgroup=g, method=method,
                                  abs_diff=abs(float(np.mean(diffs[(g, conf)])))))
    return out


def _balance_replicate(sim: SimConfig, icfg: ImputationConfig, methods: tuple, seed: int, path: tuple, r: int):
    rs = RngStream(seed, path).substream(r)
    try:
        ds, _ = simulate_dataset(sim, rs.substream(_DATA))
        rows = []
        for method in methods:
            rows.extend(balance_report(ds, icfg, method, rs.substream(_ESTIMATE)))
        return r, rows, None
    except SdipeError as exc:
        return r, None, f"{type(exc).__name__}: {exc}"


def average_balance(sim: SimConfig, icfg: ImputationConfig, replicates: int, rng: RngStream | None = None,
                    methods: Sequence[str] = ("sdipe", "baseline"), workers: int = 1) -> list[BalanceRow]:
    """Absolute differences averaged over simulated replicates, one row per
    (confounder, subgroup, method). Failed replicates are skipped."""
    rng = rng if rng is not None else RngStream(sim.seed)
    fn = partial(_balance_replicate, sim, icfg, tuple(methods), rng.seed, rng.path)
    results = sorted(_map(fn, list(range(replicates)), workers), key=lambda t: t[0])
    acc: dict[tuple[str, str, str], list[float]] = {}
    order: list[tuple[str, str, str]] = []
    n_failed = 0
    for _, rows, err in results:
        if err is not None:
            n_failed += 1
            continue
        for row in rows:
            key = (row.method, row.subgroup, row.confounder)
            if key not in acc:
                acc[key] = []
                order.append(key)
            acc[key].append(row.abs_diff)
    if not acc:
        raise EstimationError("every balance replicate failed")
    if n_failed > MAX_REPLICATE_FAILURE * replicates:
        warnings.warn(f"{n_failed} of {replicates} balance replicates failed", RuntimeWarning, stacklevel=2)
    prevalence = sim.prevalence_target
    missing_pct = round(100.0 * sim.missing_target, 10)
    confounders = []
    for _, _, c in order:
        if c not in confounders:
            confounders.append(c)
    out = []
    for conf in confounders:
        for sub in ("observed", "missing"):
            for method in methods:
                vals = acc.get((method, sub, conf))
                if vals:
                    out.append(BalanceRow(confounder=conf, subgroup=sub, method=method, abs_diff=float(np.mean(vals)),
                                          prevalence=prevalence, missing_pct=missing_pct))
    return out


# ---------------------------------------------------------------------------
# Report tables
# ---------------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isfinite(v) and v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    return str(v)


def write_table(path, columns: Sequence[str], rows: Sequence) -> None:
    """CSV with a header; ``rows`` are dicts or objects with the named
    attributes."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            get = row.get if isinstance(row, dict) else partial(getattr, row)
            writer.writerow([format_value(get(c)) for c in columns])


def read_table(path) -> list[dict]:
    """Inverse of :func:`write_table`; numeric cells become floats."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                try:
                    row[k] = float(v)
                except ValueError:
                    row[k] = v
            out.append(row)
    return out
