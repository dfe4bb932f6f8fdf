"""Sandwich and Hessian covariances, Wald tests, PIT residuals, AD^m and tau selection."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .estimate import (
    CensoringSpec,
    EstimationError,
    FitOptions,
    FitResult,
    SpliceObjective,
    fit_splice,
    objective_for,
)
from .distributions import splice_cdf, splice_sf
from .panel import LinkConfig, PanelData, ThetaVector, link_eval

__all__ = [
    "SandwichCov",
    "TauSelection",
    "score_matrix",
    "score_per_obs",
    "mean_score_jacobian",
    "sandwich_from_objective",
    "sandwich_cov",
    "hessian_cov",
    "attach_covariance",
    "wald_test",
    "pit_residuals",
    "adm_statistic",
    "default_tau_grid",
    "select_tau",
]

log = logging.getLogger(__name__)

SCORE_STEP = 1e-5
JAC_STEP = 1e-4
PIT_CLAMP = 1e-12


@dataclass
class SandwichCov:
    V: np.ndarray
    meat: np.ndarray
    vcv: np.ndarray
    n: int
    pinv_used: bool = False
    one_sided: int = 0


def score_matrix(obj, theta, *, step: float = SCORE_STEP, idx=None):
    """Per-observation central-difference gradient of ``m_theta`` over the free entries.

    Returns ``(psi, n_one_sided)``.  Where one side is not finite the
    difference is taken one-sided and counted.
    """
    theta = np.asarray(theta, dtype=float)
    free = np.flatnonzero(obj.free)
    base = None
    with np.errstate(all="ignore"):
        cols = []
        one_sided = 0
        for k in free:
            h = step * (1.0 + abs(theta[k]))
            tp = theta.copy()
            tm = theta.copy()
            tp[k] += h
            tm[k] -= h
            fp = obj.contributions(tp, idx)
            fm = obj.contributions(tm, idx)
            g = (fp - fm) / (2.0 * h)
            bad = ~np.isfinite(g)
            if bad.any():
                if base is None:
                    base = obj.contributions(theta, idx)
                fwd = (fp - base) / h
                bwd = (base - fm) / h
                g = np.where(bad, np.where(np.isfinite(fwd), fwd, bwd), g)
                one_sided += int(bad.sum())
            cols.append(g)
    return np.column_stack(cols), one_sided


def score_per_obs(obj, theta, i) -> np.ndarray:
    """Score vector of observation ``i`` (free parameters only)."""
    psi, _ = score_matrix(obj, theta, idx=np.atleast_1d(i))
    return psi[0]


def _mean_score(obj, theta, step):
    theta = np.asarray(theta, dtype=float)
    free = np.flatnonzero(obj.free)
    g = np.empty(free.size)
    for j, k in enumerate(free):
        h = step * (1.0 + abs(theta[k]))
        tp = theta.copy()
        tm = theta.copy()
        tp[k] += h
        tm[k] -= h
        g[j] = (obj.loglik(tp) - obj.loglik(tm)) / (2.0 * h * obj.n)
    return g


def mean_score_jacobian(obj, theta, *, step: float = JAC_STEP, score_step: float = SCORE_STEP) -> np.ndarray:
    """Numerical derivative matrix ``V`` of the mean score."""
    theta = np.asarray(theta, dtype=float)
    free = np.flatnonzero(obj.free)
    V = np.empty((free.size, free.size))
    for j, k in enumerate(free):
        h = step * (1.0 + abs(theta[k]))
        tp = theta.copy()
        tm = theta.copy()
        tp[k] += h
        tm[k] -= h
        V[:, j] = (_mean_score(obj, tp, score_step) - _mean_score(obj, tm, score_step)) / (2.0 * h)
    return 0.5 * (V + V.T)


def _inverse(V):
    try:
        if np.linalg.cond(V) > 1e14:
            raise np.linalg.LinAlgError("ill-conditioned")
        return np.linalg.inv(V), False
    except np.linalg.LinAlgError:
        warnings.warn("derivative matrix is singular; using the pseudo-inverse", RuntimeWarning, stacklevel=3)
        return np.linalg.pinv(V), True


def _embed(obj, M):
    free = np.flatnonzero(obj.free)
    out = np.zeros((obj.free.size, obj.free.size))
    out[np.ix_(free, free)] = M
    return out


def sandwich_from_objective(obj, theta) -> SandwichCov:
    """``V^{-1} E[psi psi^T] V^{-T} / n`` with numeric ``psi`` and ``V``."""
    psi, one_sided = score_matrix(obj, theta)
    n = psi.shape[0]
    meat = psi.T @ psi / n
    V = mean_score_jacobian(obj, theta)
    Vinv, used = _inverse(V)
    vcv = Vinv @ meat @ Vinv.T / n
    vcv = 0.5 * (vcv + vcv.T)
    return SandwichCov(_embed(obj, V), _embed(obj, meat), _embed(obj, vcv), n, used, one_sided)


def sandwich_cov(theta_hat, panel: PanelData, cfg: LinkConfig | None = None, cens: CensoringSpec | None = None) -> SandwichCov:
    """Sandwich covariance of the (censored) splice estimator.

    The censoring threshold is treated as known.
    """
    theta_hat = theta_hat.to_array() if isinstance(theta_hat, ThetaVector) else np.asarray(theta_hat, dtype=float)
    return sandwich_from_objective(SpliceObjective(panel, cfg, cens), theta_hat)


def hessian_cov(obj, theta) -> np.ndarray:
    """Inverse observed information ``-(n V)^{-1}``."""
    V = mean_score_jacobian(obj, theta)
    Vinv, _ = _inverse(V)
    vcv = -Vinv / obj.n
    return _embed(obj, 0.5 * (vcv + vcv.T))


def attach_covariance(fit: FitResult, panel: PanelData, kind: str = "sandwich") -> FitResult:
    """Fill ``fit.vcv`` using the sandwich or the inverse Hessian."""
    obj = objective_for(fit, panel)
    if kind == "sandwich":
        sw = sandwich_from_objective(obj, fit.theta_hat)
        fit.vcv = sw.vcv
        if sw.pinv_used:
            fit.notes.append("singular derivative matrix: pseudo-inverse used")
        if sw.one_sided:
            fit.notes.append(f"{sw.one_sided} one-sided score differences")
    elif kind == "hessian":
        fit.vcv = hessian_cov(obj, fit.theta_hat)
    else:
        raise ValueError(f"unknown covariance kind {kind!r}")
    fit.vcv_kind = kind
    return fit


def wald_test(fit: FitResult, k: int, h0: float, level: float = 0.05) -> tuple[float, float, bool]:
    """Two-sided z test of ``theta_k = h0``."""
    if fit.vcv is None:
        raise EstimationError("covariance not computed")
    var = fit.vcv[k, k]
    if not var > 0:
        raise EstimationError(f"zero variance for coefficient {k}")
    z = (fit.theta_hat[k] - h0) / np.sqrt(var)
    p = 2.0 * stats.norm.sf(abs(z))
    return float(z), float(p), bool(p < level)


def pit_residuals(theta_hat, panel: PanelData, cfg: LinkConfig | None = None, *, return_clamped: bool = False):
    """``Phi^{-1}(F(y; theta, x))`` with ``F`` clamped to ``[1e-12, 1-1e-12]``."""
    theta_hat = theta_hat.to_array() if isinstance(theta_hat, ThetaVector) else np.asarray(theta_hat, dtype=float)
    op = link_eval(theta_hat, panel.X, cfg, clamp=True)
    with np.errstate(all="ignore"):
        F = splice_cdf(panel.y, op)
        S = splice_sf(panel.y, op)
    lo = F < PIT_CLAMP
    hi = S < PIT_CLAMP
    F = np.clip(F, PIT_CLAMP, 1.0 - PIT_CLAMP)
    S = np.clip(S, PIT_CLAMP, 1.0 - PIT_CLAMP)
    eps = np.where(F < 0.5, special.ndtri(F), -special.ndtri(S))
    if return_clamped:
        return eps, int(lo.sum() + hi.sum())
    return eps


def adm_statistic(residuals) -> float:
    """Upper-tail weighted Anderson-Darling statistic of Gaussian residuals.

    With ``u_(1) <= ... <= u_(n)`` the sorted values of ``Phi(residual)``::

        AD^m = n/2 - 2 sum u_i - sum (2 - (2i - 1)/n) log(1 - u_(i))

    which is the exact value of ``n int (u - F_n(u))^2 / (1 - u) du`` for the
    empirical cdf ``F_n`` of the ``u_i``.
    """
    r = np.asarray(residuals, dtype=float)
    n = r.size
    if n < 10:
        raise ValueError("AD^m needs at least 10 residuals")
    u = np.sort(np.clip(special.ndtr(r), PIT_CLAMP, 1.0 - PIT_CLAMP))
    i = np.arange(1, n + 1)
    return float(n / 2.0 - 2.0 * u.sum() - np.sum((2.0 - (2.0 * i - 1.0) / n) * np.log1p(-u)))


def default_tau_grid() -> np.ndarray:
    return np.linspace(0.05, 0.5, 20)


@dataclass
class TauSelection:
    grid: np.ndarray
    adm_scores: np.ndarray
    tau_opt: float
    fits: list = field(default_factory=list, repr=False)
    skipped: list = field(default_factory=list)

    @property
    def best_fit(self) -> FitResult:
        return self.fits[int(np.nanargmin(self.adm_scores))]


def _censoring(panel, mode, tau, degree):
    if mode == "unconditional":
        return CensoringSpec.unconditional(panel, tau)
    if mode == "conditional":
        return CensoringSpec.conditional(panel, tau, degree)
    raise ValueError(f"unknown censoring mode {mode!r}")


def select_tau(
    panel: PanelData,
    cfg: LinkConfig | None = None,
    mode: str = "unconditional",
    grid=None,
    *,
    degree: int = 1,
    opts: FitOptions | None = None,
) -> TauSelection:
    """Fit at each ``tau`` of the grid and keep the one minimizing AD^m.

    Grid points are fitted in order; each fit is warm-started from the last
    converged estimate.
    """
    grid = default_tau_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any((grid <= 0) | (grid >= 1)):
        raise ValueError("tau grid must lie inside (0, 1)")
    base = opts or FitOptions()
    scores = np.full(grid.size, np.nan)
    fits: list = [None] * grid.size
    skipped = []
    start = base.theta0
    for j, tau in enumerate(grid):
        o = FitOptions(base.nm_iter, base.gtol, base.ftol, base.max_iter, start, warm=start is not None)
        try:
            fit = fit_splice(panel, cfg, _censoring(panel, mode, tau, degree), o)
        except Exception as exc:  # noqa: BLE001 - a failing grid point is skipped
            log.warning("tau=%.4f failed: %s", tau, exc)
            skipped.append(float(tau))
            continue
        if not fit.converged:
            log.warning("tau=%.4f did not converge; skipped", tau)
            skipped.append(float(tau))
            fits[j] = fit
            continue
        fit.adm = adm_statistic(pit_residuals(fit.theta_hat, panel, fit.cfg))
        scores[j] = fit.adm
        fits[j] = fit
        start = fit.theta_hat
    if np.all(np.isnan(scores)):
        raise EstimationError("no tau grid point produced a converged fit")
    j = int(np.nanargmin(scores))
    return TauSelection(grid, scores, float(grid[j]), fits, skipped)
