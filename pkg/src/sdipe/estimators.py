"""Propensity scores, stabilized weights and the two ATE estimators.

``sdipe`` fits separate propensity models in the observed-z and
missing-z strata and combines the stratum effects by their sample shares.
``baseline_mi_sw`` is the comparator: one propensity model over all rows of
each imputed dataset.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .datamodel import Dataset, stratify
from .errors import EstimationError, InsufficientDataError, SeparationError, SingularDesignError, WeightDiagnosticWarning
from .impute import ImputationConfig, impute_multiply
from .numstat import RngStream, expit, fit_logistic

PROPENSITY_CLIP = 0.01
WEIGHT_MEAN_BAND = (0.5, 2.0)


@dataclass(frozen=True, eq=False)
class WeightVector:
    sw: np.ndarray
    clip_count: int = 0

    def __post_init__(self):
        sw = np.asarray(self.sw, dtype=float)
        if not (np.all(np.isfinite(sw)) and np.all(sw > 0)):
            raise ValueError("stabilized weights must be positive and finite")
        object.__setattr__(self, "sw", sw)

    def __len__(self) -> int:
        return self.sw.shape[0]

    def summary(self) -> dict:
        return {
            "n": int(self.sw.shape[0]),
            "mean": float(self.sw.mean()),
            "min": float(self.sw.min()),
            "max": float(self.sw.max()),
            "clip_count": int(self.clip_count),
        }


@dataclass(frozen=True, eq=False)
class AteEstimate:
    """Combined estimate ``tau_hat = tau_obs * p_obs + tau_miss * (1 - p_obs)``.

    ``tau_miss`` is None when no row has a missing ``z``; then
    ``tau_hat == tau_obs``.
    """

    tau_hat: float
    tau_obs: float
    tau_miss: float | None
    p_obs: float
    per_imputation_tau_miss: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class PooledEstimate:
    tau_hat: float
    per_imputation_tau: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def propensity_scores(covariates, a, clip: float = PROPENSITY_CLIP) -> tuple[np.ndarray, int]:
    """Logistic propensity scores with an intercept, clipped to
    ``[clip, 1 - clip]``.

    Returns the scores and the number of clipped entries.
    """
    a = np.asarray(a, dtype=float)
    C = np.asarray(covariates, dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    X = np.column_stack([np.ones(a.shape[0]), C])
    try:
        fit = fit_logistic(X, a)
    except SeparationError as exc:
        raise EstimationError(f"propensity model: {exc}") from None
    except SingularDesignError as exc:
        raise EstimationError(f"propensity model: {exc}") from None
    e = expit(X @ fit.coefficients)
    e = np.atleast_1d(e)
    clipped = (e < clip) | (e > 1.0 - clip)
    return np.clip(e, clip, 1.0 - clip), int(clipped.sum())


def stabilized_weights(a, e, clip_count: int = 0) -> WeightVector:
    """``p/e`` for treated rows and ``(1-p)/(1-e)`` for controls, where
    ``p`` is the treated share of the rows passed in."""
    a = np.asarray(a, dtype=float)
    e = np.asarray(e, dtype=float)
    if a.shape != e.shape:
        raise ValueError("a and e must have the same length")
    pbar = a.mean()
    sw = np.where(a == 1, pbar / e, (1.0 - pbar) / (1.0 - e))
    return WeightVector(sw=sw, clip_count=clip_count)


def ate_sw(y, a, sw) -> float:
    """Hajek contrast of weighted arm means."""
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    w = sw.sw if isinstance(sw, WeightVector) else np.asarray(sw, dtype=float)
    t = a == 1
    if not t.any() or t.all():
        raise EstimationError("both treatment arms are required")
    wt, wc = w[t], w[~t]
    return float((wt @ y[t]) / wt.sum() - (wc @ y[~t]) / wc.sum())


def stratum_weights(a, covariates, stratum: str) -> WeightVector:
    """Propensity fit plus stabilized weights inside one stratum."""
    a = np.asarray(a, dtype=float)
    n1 = int(a.sum())
    if n1 == 0 or n1 == a.shape[0]:
        raise EstimationError(f"{stratum} stratum has a single treatment arm (n={a.shape[0]})", stratum=stratum)
    try:
        e, n_clip = propensity_scores(covariates, a)
    except EstimationError as exc:
        raise EstimationError(f"{stratum} stratum: {exc}", stratum=stratum) from None
    wv = stabilized_weights(a, e, n_clip)
    lo, hi = WEIGHT_MEAN_BAND
    mean = float(wv.sw.mean())
    if not lo <= mean <= hi:
        warnings.warn(f"{stratum} stratum: mean stabilized weight {mean:.3f} outside [{lo}, {hi}]",
                      WeightDiagnosticWarning, stacklevel=3)
    return wv


def _pool_summaries(summaries: list[dict]) -> dict:
    return {
        "n": summaries[0]["n"],
        "mean": float(np.mean([s["mean"] for s in summaries])),
        "min": float(min(s["min"] for s in summaries)),
        "max": float(max(s["max"] for s in summaries)),
        "clip_count": int(sum(s["clip_count"] for s in summaries)),
        "imputations": len(summaries),
    }


def _impute(ds: Dataset, icfg: ImputationConfig, rng: RngStream):
    try:
        return impute_multiply(ds, icfg, rng)
    except (InsufficientDataError, SingularDesignError) as exc:
        raise EstimationError(f"imputation model: {exc}", stratum="observed") from None


def sdipe(ds: Dataset, icfg: ImputationConfig, rng: RngStream) -> AteEstimate:
    """Stratified delta-imputed propensity estimate of the ATE.

    1. Split rows by whether ``z`` is observed.
    2. Observed stratum: propensity on ``(1, z, w)``, stabilized weights,
       Hajek contrast.
    3. Missing stratum: impute ``z`` ``m`` times from the model fitted on
       all observed rows, then per imputation fit the propensity on
       ``(1, z_imp, w)`` within the stratum; average the ``m`` contrasts.
    4. Combine by the observed share ``p_obs``.
    """
    if ds.n == 0:
        raise EstimationError("empty dataset")
    sv = stratify(ds)
    obs, miss = sv.observed, sv.missing
    p_obs = sv.p_obs
    if obs.size == 0:
        raise EstimationError("no observed z values", stratum="observed")

    w = ds.w
    wv_obs = stratum_weights(ds.a[obs], np.column_stack([ds.z[obs], w[obs]]), "observed")
    tau_obs = ate_sw(ds.y[obs], ds.a[obs], wv_obs)
    diagnostics = {"observed": wv_obs.summary()}

    if miss.size == 0:
        return AteEstimate(tau_hat=tau_obs, tau_obs=tau_obs, tau_miss=None, p_obs=p_obs,
                           per_imputation_tau_miss=np.empty(0), diagnostics=diagnostics)

    stack = _impute(ds, icfg, rng)
    y_m, a_m, w_m = ds.y[miss], ds.a[miss], w[miss]
    taus, summaries = [], []
    for zc in stack:
        wv = stratum_weights(a_m, np.column_stack([zc[miss], w_m]), "missing")
        taus.append(ate_sw(y_m, a_m, wv))
        summaries.append(wv.summary())
    per_imp = np.array(taus)
    tau_miss = float(per_imp.mean())
    diagnostics["missing"] = _pool_summaries(summaries)
    tau_hat = tau_obs * p_obs + tau_miss * (1.0 - p_obs)
    return AteEstimate(tau_hat=tau_hat, tau_obs=tau_obs, tau_miss=tau_miss, p_obs=p_obs,
                       per_imputation_tau_miss=per_imp, diagnostics=diagnostics)


def baseline_mi_sw(ds: Dataset, icfg: ImputationConfig, rng: RngStream) -> PooledEstimate:
    """Delta-adjusted MI followed by a single propensity model on
    ``(1, z_imp, w)`` over all rows; contrasts averaged over imputations."""
    if ds.n == 0:
        raise EstimationError("empty dataset")
    if ds.n_missing == 0:
        wv = stratum_weights(ds.a, np.column_stack([ds.z, ds.w]), "all")
        tau = ate_sw(ds.y, ds.a, wv)
        return PooledEstimate(tau_hat=tau, per_imputation_tau=np.full(icfg.m, tau),
                              diagnostics={"all": wv.summary()})
    stack = _impute(ds, icfg, rng)
    taus, summaries = [], []
    for zc in stack:
        wv = stratum_weights(ds.a, np.column_stack([zc, ds.w]), "all")
        taus.append(ate_sw(ds.y, ds.a, wv))
        summaries.append(wv.summary())
    per_imp = np.array(taus)
    return PooledEstimate(tau_hat=float(per_imp.mean()), per_imputation_tau=per_imp,
                          diagnostics={"all": _pool_summaries(summaries)})


ESTIMATORS = {"sdipe": sdipe, "baseline": baseline_mi_sw}


def point_estimate(method: str, icfg: ImputationConfig, ds: Dataset, rng: RngStream) -> float:
    """Scalar ATE from the named estimator (``"sdipe"`` or ``"baseline"``)."""
    try:
        fn = ESTIMATORS[method]
    except KeyError:
        raise ValueError(f"unknown estimator {method!r}; choose from {sorted(ESTIMATORS)}") from None
    return float(fn(ds, icfg, rng).tau_hat)
