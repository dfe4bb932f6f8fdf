"""Panel container, parameter vector layout and log-link evaluation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .distributions import ObsParams, ParameterError, derive_obs_params

__all__ = [
    "PanelError",
    "PanelData",
    "ThetaVector",
    "LinkConfig",
    "design",
    "link_eval",
    "standardize",
    "unstandardize",
    "read_panel_csv",
    "write_panel_csv",
]

LINK_CLAMP = 30.0


class PanelError(ValueError):
    """Malformed panel input.  ``row`` is the 1-based CSV line when known."""

    def __init__(self, msg, row=None):
        super().__init__(msg if row is None else f"row {row}: {msg}")
        self.row = row


@dataclass(frozen=True)
class PanelData:
    """Unbalanced panel of ``(entity, time, y, x)`` records stored column-wise."""

    entity: np.ndarray
    time: np.ndarray
    y: np.ndarray
    X: np.ndarray
    columns: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        entity = np.asarray(self.entity, dtype=np.int64)
        time = np.asarray(self.time, dtype=np.int64)
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = y.shape[0]
        if not (entity.shape == time.shape == (n,) and X.shape[0] == n):
            raise PanelError("entity, time, y and X must have the same number of rows")
        if n and np.unique(np.column_stack([entity, time]), axis=0).shape[0] != n:
            raise PanelError("duplicate (entity, time) pairs")
        columns = tuple(self.columns) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(columns) != X.shape[1]:
            raise PanelError("column names do not match covariate count")
        for arr in (entity, time, y, X):
            arr.setflags(write=False)
        object.__setattr__(self, "entity", entity)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "columns", columns)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def records(self) -> Iterator[tuple[int, int, float, np.ndarray]]:
        for i in range(self.n):
            yield int(self.entity[i]), int(self.time[i]), float(self.y[i]), self.X[i]

    def with_y(self, y) -> "PanelData":
        return replace(self, y=np.asarray(y, dtype=float), meta=dict(self.meta))


@dataclass(frozen=True)
class LinkConfig:
    """Which covariate columns enter the ``s``, ``sigma`` and ``xi`` equations.

    Intercepts are always present.  A column left out of an equation has its
    coefficient pinned at zero and is not estimated.
    """

    d: int
    s_cols: tuple[int, ...] | None = None
    sigma_cols: tuple[int, ...] | None = None
    xi_cols: tuple[int, ...] | None = None

    def __post_init__(self):
        for name in ("s_cols", "sigma_cols", "xi_cols"):
            cols = getattr(self, name)
            cols = tuple(range(self.d)) if cols is None else tuple(sorted(int(c) for c in cols))
            if any(c < 0 or c >= self.d for c in cols):
                raise ValueError(f"{name} references a column outside 0..{self.d - 1}")
            object.__setattr__(self, name, cols)

    @classmethod
    def full(cls, d: int) -> "LinkConfig":
        return cls(d)

    def masks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Boolean free-coefficient masks of length ``d+1`` (intercept first)."""
        out = []
        for cols in (self.s_cols, self.sigma_cols, self.xi_cols):
            m = np.zeros(self.d + 1, dtype=bool)
            m[0] = True
            m[np.asarray(cols, dtype=int) + 1] = True
            out.append(m)
        return tuple(out)

    def free_mask(self) -> np.ndarray:
        """Mask over the full ``3d+4`` vector selecting estimated entries."""
        return np.concatenate([[True], *self.masks()])


@dataclass(frozen=True)
class ThetaVector:
    """``(mu0, beta_s, beta_sigma, beta_xi)``; each beta has the intercept first."""

    mu0: float
    beta_s: np.ndarray
    beta_sigma: np.ndarray
    beta_xi: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(b, dtype=float).ravel() for b in (self.beta_s, self.beta_sigma, self.beta_xi)]
        if len({a.size for a in arrs}) != 1:
            raise ValueError("beta vectors must all have length d+1")
        if not (np.isfinite(self.mu0) and all(np.all(np.isfinite(a)) for a in arrs)):
            raise ValueError("theta entries must be finite")
        object.__setattr__(self, "mu0", float(self.mu0))
        object.__setattr__(self, "beta_s", arrs[0])
        object.__setattr__(self, "beta_sigma", arrs[1])
        object.__setattr__(self, "beta_xi", arrs[2])

    @property
    def d(self) -> int:
        return self.beta_s.size - 1

    def to_array(self) -> np.ndarray:
        return np.concatenate([[self.mu0], self.beta_s, self.beta_sigma, self.beta_xi])

    @classmethod
    def from_array(cls, arr, d: int | None = None) -> "ThetaVector":
        arr = np.asarray(arr, dtype=float).ravel()
        if d is None:
            d, rem = divmod(arr.size - 4, 3)
            if rem:
                raise ValueError(f"length {arr.size} is not of the form 3d+4")
        if arr.size != 3 * d + 4:
            raise ValueError(f"expected {3 * d + 4} entries, got {arr.size}")
        k = d + 1
        return cls(arr[0], arr[1 : 1 + k], arr[1 + k : 1 + 2 * k], arr[1 + 2 * k :])

    @staticmethod
    def names(d: int) -> list[str]:
        out = ["mu0"]
        for p in ("s", "sigma", "xi"):
            out += [f"beta_{p}_{j}" for j in range(d + 1)]
        return out

    @staticmethod
    def xi_slice(d: int) -> slice:
        return slice(1 + 2 * (d + 1), 3 * d + 4)


def design(X) -> np.ndarray:
    """Prepend the intercept column."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(X.shape[0]), X])


def _exp_link(eta, clamp):
    if clamp:
        eta = np.clip(eta, -LINK_CLAMP, LINK_CLAMP)
    with np.errstate(over="ignore"):
        return np.exp(eta)


def link_eval(theta, x, cfg: LinkConfig | None = None, *, clamp: bool = False, check: bool = True) -> ObsParams:
    """Map parameters and covariate row(s) to :class:`ObsParams`.

    ``x`` may be a single covariate vector or an ``(m, d)`` matrix.  With
    ``clamp`` the linear predictors are clipped to ``[-30, 30]`` before
    exponentiation, which keeps an optimizer inside finite territory.
    """
    if not isinstance(theta, ThetaVector):
        theta = ThetaVector.from_array(theta)
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    Z = design(x.reshape(1, -1) if single else x)
    if Z.shape[1] != theta.d + 1:
        raise ValueError(f"covariates have {Z.shape[1] - 1} columns, theta expects {theta.d}")
    bs, bsig, bxi = theta.beta_s, theta.beta_sigma, theta.beta_xi
    if cfg is not None:
        ms, msig, mxi = cfg.masks()
        bs, bsig, bxi = bs * ms, bsig * msig, bxi * mxi
    s = _exp_link(Z @ bs, clamp)
    sigma = _exp_link(Z @ bsig, clamp)
    xi = _exp_link(Z @ bxi, clamp)
    if check and not (np.all(np.isfinite(s)) and np.all(np.isfinite(sigma)) and np.all(np.isfinite(xi))):
        raise ParameterError("non-finite link output")
    op = derive_obs_params(theta.mu0, s, sigma, xi, check=check)
    return op.take(0) if single else op


def standardize(panel: PanelData) -> tuple[PanelData, np.ndarray, np.ndarray]:
    """Center and scale each covariate column (``n-1`` denominator)."""
    X = panel.X
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=1)
    bad = np.flatnonzero(~(std > 0))
    if bad.size:
        raise PanelError(f"column {panel.columns[bad[0]]!r} has zero variance")
    out = replace(panel, X=(X - mean) / std, meta=dict(panel.meta))
    return out, mean, std


def unstandardize(panel: PanelData, mean, std) -> PanelData:
    return replace(panel, X=panel.X * np.asarray(std) + np.asarray(mean), meta=dict(panel.meta))


def read_panel_csv(path, columns: Sequence[str] | None = None) -> PanelData:
    """Read ``entity,time,y,x1,...,xd``.

    ``columns`` names the covariates required; a missing one raises
    :class:`PanelError` naming it.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise PanelError("empty file", row=1) from None
        for req in ("entity", "time", "y"):
            if req not in header:
                raise PanelError(f"missing required column {req!r}", row=1)
        covs = [h for h in header if h not in ("entity", "time", "y")]
        if columns is not None:
            for c in columns:
                if c not in header:
                    raise PanelError(f"missing covariate column {c!r}", row=1)
            covs = list(columns)
        if not covs:
            raise PanelError("no covariate columns", row=1)
        idx = {h: i for i, h in enumerate(header)}
        ent, tim, ys, xs = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise PanelError(f"expected {len(header)} fields, got {len(row)}", row=lineno)
            try:
                ent.append(int(row[idx["entity"]]))
                tim.append(int(row[idx["time"]]))
                ys.append(float(row[idx["y"]]))
                xs.append([float(row[idx[c]]) for c in covs])
            except ValueError as exc:
                raise PanelError(str(exc), row=lineno) from None
    if not ys:
        raise PanelError("no data rows", row=2)
    y = np.asarray(ys)
    X = np.asarray(xs)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
        bad = int(np.flatnonzero(~(np.isfinite(y) & np.all(np.isfinite(X), axis=1)))[0])
        raise PanelError("non-finite value", row=bad + 2)
    return PanelData(np.asarray(ent), np.asarray(tim), y, X, tuple(covs))


def write_panel_csv(panel: PanelData, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity", "time", "y", *panel.columns])
        for e, t, y, x in panel.records():
            w.writerow([e, t, repr(float(y)), *(repr(float(v)) for v in x)])
