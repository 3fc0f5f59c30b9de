"""Delta-adjusted multiple imputation of the partially observed confounder.

The imputation model is a linear regression of ``z`` on ``(1, a, w, y)``
fitted to the rows where ``z`` is observed. Missing rows receive
``x' beta* + delta + e`` with ``e ~ N(0, sigma*^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import Dataset
from .errors import InsufficientDataError
from .numstat import FittedLinearModel, RngStream, draw_linear_posterior, fit_ols


@dataclass(frozen=True)
class ImputationConfig:
    """``proper`` draws the imputation-model parameters afresh for every
    imputation; ``deterministic`` fills in plug-in predictions with no
    residual noise (test mode)."""

    m: int = 10
    delta: float = 0.0
    proper: bool = True
    deterministic: bool = False

    def __post_init__(self):
        if int(self.m) < 1:
            raise ValueError("m must be at least 1")
        if self.deterministic and self.proper:
            raise ValueError("deterministic mode requires proper=False")

    @classmethod
    def test_mode(cls, m: int = 1, delta: float = 0.0) -> "ImputationConfig":
        return cls(m=m, delta=delta, proper=False, deterministic=True)


@dataclass(frozen=True, eq=False)
class ImputedStack:
    columns: np.ndarray  # shape (m, n)
    r_z: np.ndarray
    delta: float

    @property
    def m(self) -> int:
        return self.columns.shape[0]

    def __iter__(self):
        return iter(self.columns)

    def __getitem__(self, j):
        return self.columns[j]


def imputation_design(ds: Dataset) -> np.ndarray:
    """Columns ``(1, a, w_1..w_p, y)`` for every row."""
    return np.column_stack([np.ones(ds.n), ds.a, ds.w, ds.y])


def _design_names(ds: Dataset) -> list[str]:
    return ["intercept", "treatment", *ds.covariate_names, "outcome"]


def fit_imputation_model(ds: Dataset) -> FittedLinearModel:
    X = imputation_design(ds)
    k = X.shape[1]
    obs = ds.observed
    n_obs = int(obs.sum())
    if n_obs < k + 2:
        raise InsufficientDataError(
            f"imputation model needs at least {k + 2} observed z values, have {n_obs}"
        )
    return fit_ols(X[obs], ds.z[obs], column_names=_design_names(ds))


def impute_once(ds: Dataset, model: FittedLinearModel, cfg: ImputationConfig, rng: RngStream) -> np.ndarray:
    """One completed z column. Observed entries are copied verbatim."""
    z = np.array(ds.z, dtype=float)
    miss = ~ds.observed
    n_miss = int(miss.sum())
    if n_miss == 0:
        return z
    X = imputation_design(ds)[miss]
    if cfg.proper:
        coef, sigma = draw_linear_posterior(model, rng)
    else:
        coef, sigma = model.coefficients, float(np.sqrt(model.residual_variance))
    fill = X @ coef + cfg.delta
    if not cfg.deterministic and sigma > 0.0:
        fill = fill + sigma * rng.normal(n_miss)
    z[miss] = fill
    return z


def impute_multiply(ds: Dataset, cfg: ImputationConfig, rng: RngStream, model: FittedLinearModel | None = None) -> ImputedStack:
    """``cfg.m`` completed columns; imputation ``j`` draws from
    ``rng.substream(j)``. With no missing rows no model is fitted and no
    randomness is consumed."""
    if ds.n_missing == 0:
        cols = np.tile(np.asarray(ds.z, dtype=float), (cfg.m, 1))
    else:
        if model is None:
            model = fit_imputation_model(ds)
        cols = np.vstack([impute_once(ds, model, cfg, rng.substream(j)) for j in range(cfg.m)])
    cols.setflags(write=False)
    return ImputedStack(columns=cols, r_z=ds.r_z, delta=float(cfg.delta))
