"""Numerical primitives: logistic link, OLS, IRLS logistic regression,
posterior parameter draws, and a seedable random stream.

All fits take a design matrix that already contains any intercept column.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit as _expit

from .errors import DomainError, SeparationError, SeparationWarning, SingularDesignError

LOGISTIC_TOL = 1e-8
LOGISTIC_MAX_ITER = 50
COEF_NORM_LIMIT = 30.0
RANK_RTOL = 1e-10


def expit(x):
    """Inverse logit. Accepts scalars or arrays; rejects non-finite input."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("expit requires finite input")
    out = _expit(arr)
    return float(out) if out.ndim == 0 else out


def logit(p):
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("logit requires 0 < p < 1")
    out = np.log(arr) - np.log1p(-arr)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


class RngStream:
    """Seeded random stream with deterministic, index-addressed substreams.

    A stream is identified by ``(seed, path)``; ``substream(i, j, ...)``
    extends the path. Each distinct path seeds an independent PCG64
    generator through :class:`numpy.random.SeedSequence`, so a substream is
    a pure function of the seed and its indices, regardless of how much the
    parent stream has been consumed.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if int(seed) < 0:
            raise DomainError("seed must be non-negative")
        self.seed = int(seed)
        self.path = tuple(int(i) for i in path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"

    def __getstate__(self):
        return {"seed": self.seed, "path": self.path, "state": self._gen.bit_generator.state}

    def __setstate__(self, state):
        self.__init__(state["seed"], state["path"])
        self._gen.bit_generator.state = state["state"]

    def substream(self, *index: int) -> "RngStream":
        if not index:
            raise ValueError("substream needs at least one index")
        if any(int(i) < 0 for i in index):
            raise DomainError("substream indices must be non-negative")
        return RngStream(self.seed, self.path + tuple(index))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, size=None, loc=0.0, scale=1.0):
        if scale == 1.0 and loc == 0.0:
            return self._gen.standard_normal(size)
        return self._gen.normal(loc, scale, size)

    def uniform(self, size=None):
        return self._gen.random(size)

    def bernoulli(self, p, size=None):
        p = np.asarray(p, dtype=float)
        shape = p.shape if size is None else size
        return (self._gen.random(shape) < p).astype(np.int8)

    def chisquare(self, df, size=None):
        return self._gen.chisquare(df, size)

    def integers(self, high: int, size=None):
        """Uniform integers in ``[0, high)``; used for row resampling."""
        return self._gen.integers(0, high, size)


# ---------------------------------------------------------------------------
# Linear model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FittedLinearModel:
    coefficients: np.ndarray
    residual_variance: float
    design_crossprod_inverse: np.ndarray
    degrees_of_freedom: int
    # upper-triangular L with L L' = (X'X)^-1, taken from the QR factor
    crossprod_inverse_root: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.coefficients.shape[0]

    def predict(self, design) -> np.ndarray:
        return np.asarray(design, dtype=float) @ self.coefficients


def _column_label(j: int, names) -> str:
    if names is not None:
        return str(names[j])
    return f"column {j}"


def fit_ols(design, response, column_names=None) -> FittedLinearModel:
    """Least squares through a thin QR decomposition.

    Raises
    ------
    SingularDesignError
        If the design is rank deficient. The error names the first column
        that is (numerically) a combination of the preceding ones.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if X.ndim != 2:
        raise ValueError("design must be a 2-D matrix")
    n, k = X.shape
    if y.shape != (n,):
        raise ValueError(f"response length {y.shape} does not match design rows {n}")
    if n <= k:
        raise SingularDesignError(f"need more rows than columns (n={n}, k={k})")

    q, r = np.linalg.qr(X)
    sv = np.linalg.svd(r, compute_uv=False)
    if sv[-1] <= RANK_RTOL * sv[0]:
        # without pivoting, the first tiny R[j, j] marks a column spanned by its predecessors
        diag = np.abs(np.diag(r))
        bad = np.flatnonzero(diag <= 1e-8 * diag.max())
        j = int(bad[0]) if bad.size else k - 1
        raise SingularDesignError(
            f"design is rank deficient: {_column_label(j, column_names)} is collinear "
            "with earlier columns",
            column=column_names[j] if column_names is not None else j,
        )

    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    q, r = q * signs, r * signs[:, None]
    beta = solve_triangular(r, q.T @ y)
    r_inv = solve_triangular(r, np.eye(k))
    xtx_inv = r_inv @ r_inv.T
    xtx_inv = 0.5 * (xtx_inv + xtx_inv.T)
    resid = y - X @ beta
    df = n - k
    rss = float(resid @ resid)
    return FittedLinearModel(
        coefficients=beta,
        residual_variance=rss / df,
        design_crossprod_inverse=xtx_inv,
        degrees_of_freedom=df,
        crossprod_inverse_root=r_inv,
    )


def draw_linear_posterior(model: FittedLinearModel, rng: RngStream) -> tuple[np.ndarray, float]:
    """Draw ``(beta*, sigma*)`` from the usual noninformative posterior.

    ``sigma*^2 = df * s^2 / chi2_df`` and
    ``beta* ~ N(beta_hat, sigma*^2 (X'X)^-1)``. A zero residual variance
    makes the draw degenerate and consumes no randomness.
    """
    if model.degrees_of_freedom <= 0 or model.residual_variance < 0:
        raise ValueError("invalid linear model")
    if model.residual_variance == 0.0:
        return model.coefficients.copy(), 0.0
    df = model.degrees_of_freedom
    sigma2 = df * model.residual_variance / rng.chisquare(df)
    sigma = math.sqrt(sigma2)
    root = model.crossprod_inverse_root
    if root is None:
        root = np.linalg.cholesky(model.design_crossprod_inverse)
    coef = model.coefficients + sigma * (root @ rng.normal(model.k))
    return coef, sigma


# ---------------------------------------------------------------------------
# Logistic model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FittedLogisticModel:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    score_norm: float = field(default=float("nan"))

    def predict_proba(self, design) -> np.ndarray:
        return _expit(np.asarray(design, dtype=float) @ self.coefficients)


def _loglik(eta: np.ndarray, labels: np.ndarray) -> float:
    # sum(a*eta - log(1 + exp(eta))), computed stably
    return float(labels @ eta - np.logaddexp(0.0, eta).sum())


def fit_logistic(design, labels, max_iter: int = LOGISTIC_MAX_ITER, tol: float = LOGISTIC_TOL) -> FittedLogisticModel:
    """Maximum likelihood logistic regression by IRLS (Newton-Raphson).

    Each Newton step is halved until the log-likelihood does not decrease.
    Iteration stops once ``max|X'(a - p)| < tol``.

    Raises
    ------
    SeparationError
        When ``labels`` contain a single class.

    Warns
    -----
    SeparationWarning
        When the fit diverges (coefficient norm above 30 without
        convergence); the coefficients are then scaled back to norm 30 and
        the fit is flagged as not converged.
    """
    X = np.asarray(design, dtype=float)
    a = np.asarray(labels, dtype=float)
    n, k = X.shape
    if a.shape != (n,):
        raise ValueError("labels length does not match design rows")
    if not np.all((a == 0) | (a == 1)):
        raise DomainError("labels must be binary")
    n1 = a.sum()
    if n1 == 0 or n1 == n:
        raise SeparationError("labels contain a single class")
    if n <= k:
        raise SingularDesignError(f"need more rows than columns (n={n}, k={k})")

    beta = np.zeros(k)
    eta = np.zeros(n)
    ll = _loglik(eta, a)
    converged = False
    score_norm = float("inf")
    it = 0
    for it in range(1, max_iter + 1):
        p = _expit(eta)
        score = X.T @ (a - p)
        score_norm = float(np.abs(score).max())
        if score_norm < tol:
            converged = True
            it -= 1
            break
        w = p * (1.0 - p)
        info = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        for _ in range(30):
            cand = beta + step
            eta_c = X @ cand
            ll_c = _loglik(eta_c, a)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            step *= 0.5
        beta, eta, ll = cand, eta_c, ll_c
        if np.linalg.norm(beta) > COEF_NORM_LIMIT * 4:
            break
    else:
        p = _expit(eta)
        score_norm = float(np.abs(X.T @ (a - p)).max())
        converged = score_norm < tol

    norm = float(np.linalg.norm(beta))
    if not converged and norm > COEF_NORM_LIMIT:
        warnings.warn(
            f"logistic fit diverged (|beta|={norm:.1f}); coefficients clipped",
            SeparationWarning,
            stacklevel=2,
        )
        beta = beta * (COEF_NORM_LIMIT / norm)
    return FittedLogisticModel(coefficients=beta, converged=converged, iterations=it, score_norm=score_norm)
