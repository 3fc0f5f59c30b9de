"""Dataset with one partially observed confounder, CSV I/O and stratification."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DataError, ParseError, SchemaError

MISSING = np.nan
DEFAULT_NA_TOKENS = ("", "NA")


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Outcome ``y``, binary treatment ``a``, complete covariates ``w``
    (n x p), partially observed confounder ``z`` and its observation
    indicator ``r_z`` (1 = observed).

    Unobserved entries of ``z`` hold NaN. Read them only through
    :meth:`z_observed` or after imputation.
    """

    y: np.ndarray
    a: np.ndarray
    w: np.ndarray
    z: np.ndarray
    r_z: np.ndarray
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = _frozen(self.y)
        a = _frozen(self.a)
        r = _frozen(self.r_z)
        n = y.shape[0]
        w = np.array(self.w, dtype=float, copy=True)
        if w.ndim == 1:
            w = w.reshape(n, -1) if w.size else np.zeros((n, 0))
        w.setflags(write=False)
        z = np.array(self.z, dtype=float, copy=True)

        for name, arr in (("y", y), ("a", a), ("z", z), ("r_z", r)):
            if arr.ndim != 1:
                raise DataError(f"{name} must be one-dimensional")
        if not (a.shape[0] == z.shape[0] == r.shape[0] == w.shape[0] == n):
            raise DataError("all columns must have the same length")
        if not np.all((a == 0) | (a == 1)):
            raise DataError("treatment must be binary (0/1)")
        if not np.all((r == 0) | (r == 1)):
            raise DataError("r_z must be binary (0/1)")
        if not np.all(np.isfinite(y)):
            raise DataError("outcome must be finite")
        if not np.all(np.isfinite(w)):
            raise DataError("covariates must be finite")
        obs = r == 1
        if not np.all(np.isfinite(z[obs])):
            raise DataError("z must be finite where observed")
        z[~obs] = MISSING
        z.setflags(write=False)

        names = tuple(self.covariate_names) or tuple(f"w{j + 1}" for j in range(w.shape[1]))
        if len(names) != w.shape[1]:
            raise DataError("covariate_names length does not match w columns")
        for attr, val in (("y", y), ("a", a), ("w", w), ("z", z), ("r_z", r), ("covariate_names", names)):
            object.__setattr__(self, attr, val)

    @classmethod
    def complete(cls, y, a, w, z, covariate_names=()) -> "Dataset":
        """Dataset with every ``z`` observed."""
        z = np.asarray(z, dtype=float)
        return cls(y=y, a=a, w=w, z=z, r_z=np.ones_like(z), covariate_names=covariate_names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return self.r_z == 1

    def z_observed(self) -> np.ndarray:
        return self.z[self.observed]

    @property
    def n_missing(self) -> int:
        return int(self.n - self.r_z.sum())


@dataclass(frozen=True)
class StratifiedView:
    observed: np.ndarray
    missing: np.ndarray
    n: int

    @property
    def p_obs(self) -> float:
        return float(self.p_obs_exact) if self.n else float("nan")

    @property
    def p_obs_exact(self) -> Fraction:
        return Fraction(len(self.observed), self.n) if self.n else Fraction(0)


def stratify(ds: Dataset) -> StratifiedView:
    obs = ds.observed
    return StratifiedView(
        observed=np.flatnonzero(obs),
        missing=np.flatnonzero(~obs),
        n=ds.n,
    )


def subset(ds: Dataset, rows, *, allow_duplicates: bool = False) -> Dataset:
    """Row projection of ``ds``.

    ``allow_duplicates`` permits repeated indices, which bootstrap
    resampling needs.
    """
    idx = np.asarray(rows, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= ds.n):
        raise IndexError(f"row index out of range for dataset of {ds.n} rows")
    if not allow_duplicates and np.unique(idx).size != idx.size:
        raise ValueError("row indices must be unique")
    z = ds.z[idx]
    return Dataset(
        y=ds.y[idx],
        a=ds.a[idx],
        w=ds.w[idx, :],
        z=z,
        r_z=ds.r_z[idx],
        covariate_names=ds.covariate_names,
    )


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnRoles:
    outcome: str
    treatment: str
    mnar: str
    covariates: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        cols = [self.outcome, self.treatment, self.mnar, *self.covariates]
        if len(set(cols)) != len(cols):
            raise SchemaError("a column may hold only one role")


def _parse_float(cell: str, row: int, column: str) -> float:
    try:
        val = float(cell)
    except ValueError:
        raise ParseError(f"row {row}, column {column!r}: cannot parse {cell!r} as a number",
                         row=row, column=column) from None
    if not np.isfinite(val):
        raise ParseError(f"row {row}, column {column!r}: non-finite value {cell!r}",
                         row=row, column=column)
    return val


def read_csv_text(text: str, roles: ColumnRoles, na_tokens: Sequence[str] = DEFAULT_NA_TOKENS) -> Dataset:
    """Parse CSV text (header row required). Row numbers in errors are
    1-based data rows, i.e. the header is row 0."""
    na = {t.strip() for t in na_tokens}
    try:
        reader = csv.reader(io.StringIO(text, newline=""), strict=True)
        rows = list(reader)
    except csv.Error as exc:
        raise SchemaError(f"malformed CSV: {exc}") from None
    if not rows:
        raise SchemaError("empty file: header row required")
    header = [h.strip() for h in rows[0]]
    if header and header[0].startswith("﻿"):
        header[0] = header[0][1:]
    if len(set(header)) != len(header):
        raise SchemaError("duplicate column names in header")
    index = {}
    for col in (roles.outcome, roles.treatment, roles.mnar, *roles.covariates):
        if col not in header:
            raise SchemaError(f"missing column {col!r}", column=col)
        index[col] = header.index(col)

    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
    n, p = len(body), len(roles.covariates)
    y = np.empty(n)
    a = np.empty(n)
    z = np.full(n, MISSING)
    r_z = np.ones(n)
    w = np.empty((n, p))
    for i, rec in enumerate(body, start=1):
        if len(rec) != len(header):
            raise SchemaError(f"row {i}: expected {len(header)} fields, got {len(rec)}", row=i)

        def cell(col):
            return rec[index[col]].strip()

        for col in (roles.outcome, roles.treatment, *roles.covariates):
            if cell(col) in na:
                raise SchemaError(f"row {i}, column {col!r}: missing value (only the MNAR column may be missing)",
                                  row=i, column=col)
        y[i - 1] = _parse_float(cell(roles.outcome), i, roles.outcome)
        av = _parse_float(cell(roles.treatment), i, roles.treatment)
        if av not in (0.0, 1.0):
            raise SchemaError(f"row {i}, column {roles.treatment!r}: treatment must be 0 or 1, got {cell(roles.treatment)!r}",
                              row=i, column=roles.treatment)
        a[i - 1] = av
        for j, col in enumerate(roles.covariates):
            w[i - 1, j] = _parse_float(cell(col), i, col)
        zc = cell(roles.mnar)
        if zc in na:
            r_z[i - 1] = 0.0
        else:
            z[i - 1] = _parse_float(zc, i, roles.mnar)
    return Dataset(y=y, a=a, w=w, z=z, r_z=r_z, covariate_names=roles.covariates)


def load_csv(path: str | os.PathLike, roles: ColumnRoles, na_tokens: Sequence[str] = DEFAULT_NA_TOKENS) -> Dataset:
    """Load a UTF-8 CSV into a :class:`Dataset`.

    Empty cells (or any of ``na_tokens``) in the MNAR column mark ``z`` as
    missing. Missing cells elsewhere are a :class:`SchemaError`.
    """
    try:
        with open(path, encoding="utf-8-sig", newline="") as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise SchemaError(f"{path}: not valid UTF-8 ({exc.reason})") from None
    return read_csv_text(text, roles, na_tokens)


def default_roles(ds: Dataset) -> ColumnRoles:
    return ColumnRoles(outcome="y", treatment="a", mnar="z", covariates=ds.covariate_names)


def write_csv(ds: Dataset, path: str | os.PathLike, roles: ColumnRoles | None = None, na_token: str = "") -> None:
    """Write ``ds`` with header ``outcome, treatment, mnar, covariates...``.

    Floats use ``repr`` so that :func:`load_csv` round-trips exactly.
    """
    roles = roles or default_roles(ds)
    if len(roles.covariates) != ds.p:
        raise SchemaError("roles list a different number of covariates than the dataset has")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([roles.outcome, roles.treatment, roles.mnar, *roles.covariates])
        for i in range(ds.n):
            zc = repr(float(ds.z[i])) if ds.r_z[i] == 1 else na_token
            writer.writerow([repr(float(ds.y[i])), str(int(ds.a[i])), zc, *(repr(float(v)) for v in ds.w[i])])
