"""Polynomial quantile regression for censoring and POT thresholds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .panel import PanelData

__all__ = [
    "QuantRegError",
    "QuantFit",
    "pinball_loss",
    "poly_features",
    "quantreg_fit",
    "quantreg_fit_arrays",
    "quantreg_predict",
]


class QuantRegError(RuntimeError):
    def __init__(self, msg, loss=None):
        super().__init__(msg if loss is None else f"{msg} (final loss {loss:.6g})")
        self.loss = loss


@dataclass(frozen=True)
class QuantFit:
    """Fitted conditional quantile ``q(x) = c0 + sum_k sum_j c_{kj} x_j^k``.

    Coefficients are ordered intercept, linear terms, then squared terms.
    ``degree=0`` is the intercept-only model.
    """

    tau: float
    coefficients: np.ndarray
    degree: int
    loss: float = float("nan")
    iterations: int = 0

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        c = np.asarray(self.coefficients, dtype=float).ravel()
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite quantile regression coefficients")
        object.__setattr__(self, "coefficients", c)


def pinball_loss(resid, tau: float) -> float:
    resid = np.asarray(resid, dtype=float)
    return float(np.sum(resid * (tau - (resid < 0))))


def poly_features(X, degree: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    cols = [np.ones(X.shape[0])]
    for k in range(1, degree + 1):
        cols.append(X**k)
    return np.column_stack(cols)


def quantreg_predict(fit: QuantFit, x) -> np.ndarray:
    """Evaluate the fitted polynomial at covariate row(s) ``x``.

    >>> float(quantreg_predict(QuantFit(0.5, [1.0, 2.0, 0.5], 2), [2.0]))
    7.0
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    if fit.degree == 0:
        n = 1 if single else x.shape[0]
        out = np.full(n, fit.coefficients[0])
    else:
        out = poly_features(x.reshape(1, -1) if single else x, fit.degree) @ fit.coefficients
    return out[0] if single else out


def _irls(Z, y, tau, *, max_iter=5000, tol=1e-10):
    """Majorize-minimize on the check loss with a shrinking smoothing width."""
    n, p = Z.shape
    scale = np.median(np.abs(y - np.median(y))) or np.std(y) or 1.0
    h_final = 1e-6 * scale
    h = 1e-2 * scale
    beta = np.linalg.lstsq(Z, y, rcond=None)[0]
    lin = (2.0 * tau - 1.0) * Z.sum(axis=0)
    it = 0
    for it in range(1, max_iter + 1):
        r = y - Z @ beta
        w = 1.0 / np.maximum(np.abs(r), h)
        A = (Z * w[:, None]).T @ Z
        b = (Z * w[:, None]).T @ y + lin
        try:
            new = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            new = np.linalg.lstsq(A, b, rcond=None)[0]
        step = np.max(np.abs(new - beta)) / (1.0 + np.max(np.abs(beta)))
        beta = new
        if step < tol * 1e3 and h > h_final:
            h = max(h * 0.1, h_final)
        elif step < tol and h <= h_final:
            return beta, it, True
    return beta, it, False


def _polish(Z, y, tau, beta):
    """Snap to the interpolating basis of the p smallest residuals if it does not hurt."""
    p = Z.shape[1]
    idx = np.argsort(np.abs(y - Z @ beta))[:p]
    try:
        cand = np.linalg.solve(Z[idx], y[idx])
    except np.linalg.LinAlgError:
        return beta
    if pinball_loss(y - Z @ cand, tau) <= pinball_loss(y - Z @ beta, tau):
        return cand
    return beta


def _lp(Z, y, tau):
    n, p = Z.shape
    # beta = b+ - b-, residual = u - v
    c = np.concatenate([np.zeros(2 * p), np.full(n, tau), np.full(n, 1.0 - tau)])
    A = np.hstack([Z, -Z, np.eye(n), -np.eye(n)])
    res = optimize.linprog(c, A_eq=A, b_eq=y, bounds=(0, None), method="highs")
    if not res.success:
        raise QuantRegError(f"linear program failed: {res.message}")
    return res.x[:p] - res.x[p : 2 * p]


def quantreg_fit_arrays(X, y, tau: float, degree: int = 1, *, method: str = "irls", max_iter: int = 5000) -> QuantFit:
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    y = np.asarray(y, dtype=float)
    if degree == 0:
        q = float(np.quantile(y, tau))
        return QuantFit(tau, [q], 0, pinball_loss(y - q, tau), 0)
    if degree not in (1, 2):
        raise ValueError("degree must be 0, 1 or 2")
    Z = poly_features(X, degree)
    if Z.shape[0] <= Z.shape[1]:
        raise ValueError("need more observations than coefficients")
    if method == "lp":
        beta, it, ok = _lp(Z, y, tau), 0, True
    elif method == "irls":
        beta, it, ok = _irls(Z, y, tau, max_iter=max_iter)
        if not ok:
            raise QuantRegError(
                f"quantile regression did not converge in {max_iter} iterations",
                pinball_loss(y - Z @ beta, tau),
            )
        beta = _polish(Z, y, tau, beta)
    else:
        raise ValueError(f"unknown method {method!r}")
    return QuantFit(tau, beta, degree, pinball_loss(y - Z @ beta, tau), it)


def quantreg_fit(panel: PanelData, tau: float, degree: int = 1, **kw) -> QuantFit:
    """Fit ``q_tau(y | x)`` as a polynomial of the given degree in each covariate."""
    return quantreg_fit_arrays(panel.X, panel.y, tau, degree, **kw)
