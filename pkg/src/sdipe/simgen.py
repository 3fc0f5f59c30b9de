"""Synthetic data from the self-masking simulation design.

    W, Z ~ N(0, 1) iid
    A ~ Bernoulli(expit(alpha1 + alpha2 W + alpha3 Z))
    Y = beta0 + beta1 A + beta2 W + beta3 Z + eps,   eps ~ N(0, noise_sd^2)
    Z missing with probability expit(a + Z)

``alpha1`` and ``a`` are solved for so that the expected treatment
prevalence and missing rate hit their targets.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .datamodel import Dataset
from .errors import CalibrationError
from .numstat import RngStream

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(120)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()
_BRACKET = (-20.0, 20.0)


@dataclass(frozen=True)
class SimConfig:
    n: int = 1000
    prevalence_target: float = 0.2
    missing_target: float = 0.3
    alpha2: float = 0.5
    alpha3: float = 0.5
    beta0: float = 0.0
    beta1: float = 1.5
    beta2: float = 0.8
    beta3: float = 0.7
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n) < 2:
            raise ValueError("n must be at least 2")
        for name in ("prevalence_target", "missing_target"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")

    @property
    def true_ate(self) -> float:
        return self.beta1

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)


def _gaussian_mean_expit(intercept: float, scale: float) -> float:
    """E[expit(intercept + scale * U)] for U ~ N(0, 1), by Gauss-Hermite."""
    return float(_GH_WEIGHTS @ expit(intercept + scale * _GH_NODES))


def _solve_intercept(target: float, scale: float, what: str) -> float:
    if not 0.01 < target < 0.99:
        raise CalibrationError(f"{what} target must lie in (0.01, 0.99), got {target}")
    f = lambda c: _gaussian_mean_expit(c, scale) - target  # noqa: E731
    lo, hi = _BRACKET
    if f(lo) * f(hi) > 0:
        raise CalibrationError(f"{what} intercept not bracketed in [{lo}, {hi}] for target {target}")
    return float(brentq(f, lo, hi, xtol=1e-12, rtol=1e-14))


@functools.lru_cache(maxsize=256)
def calibrate_treatment_intercept(target: float, alpha2: float = 0.5, alpha3: float = 0.5) -> float:
    """alpha1 such that E[expit(alpha1 + alpha2 W + alpha3 Z)] = target.

    ``alpha2 W + alpha3 Z`` is N(0, alpha2^2 + alpha3^2), so the expectation
    is a one-dimensional Gaussian integral.
    """
    return _solve_intercept(target, math.hypot(alpha2, alpha3), "treatment prevalence")


@functools.lru_cache(maxsize=256)
def calibrate_missingness_intercept(target: float) -> float:
    """a such that E[expit(a + Z)] = target, Z ~ N(0, 1)."""
    return _solve_intercept(target, 1.0, "missingness")


def generate_complete(cfg: SimConfig, rng: RngStream) -> tuple[Dataset, np.ndarray]:
    """Fully observed dataset plus a copy of the true ``z``."""
    n = cfg.n
    alpha1 = calibrate_treatment_intercept(cfg.prevalence_target, cfg.alpha2, cfg.alpha3)
    w = rng.normal(n)
    z = rng.normal(n)
    a = (rng.uniform(n) < expit(alpha1 + cfg.alpha2 * w + cfg.alpha3 * z)).astype(float)
    eps = rng.normal(n)
    y = cfg.beta0 + cfg.beta1 * a + cfg.beta2 * w + cfg.beta3 * z + cfg.noise_sd * eps
    ds = Dataset.complete(y=y, a=a, w=w.reshape(n, 1), z=z, covariate_names=("W",))
    return ds, z.copy()


def apply_self_masking(ds: Dataset, missing_target: float, rng: RngStream, intercept: float | None = None) -> Dataset:
    """Hide each ``z_i`` independently with probability ``expit(a + z_i)``.

    ``intercept`` overrides the calibrated ``a``.
    """
    if ds.n_missing:
        raise ValueError("apply_self_masking expects a fully observed dataset")
    a = calibrate_missingness_intercept(missing_target) if intercept is None else float(intercept)
    missing = rng.uniform(ds.n) < expit(a + ds.z)
    return Dataset(y=ds.y, a=ds.a, w=ds.w, z=ds.z, r_z=(~missing).astype(float),
                   covariate_names=ds.covariate_names)


def simulate_dataset(cfg: SimConfig, rng: RngStream) -> tuple[Dataset, np.ndarray]:
    """One masked replicate and its true ``z``."""
    full, z_true = generate_complete(cfg, rng)
    return apply_self_masking(full, cfg.missing_target, rng), z_true
