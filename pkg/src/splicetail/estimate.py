"""Censored (weighted) likelihood estimation of the splice regression and POT baselines."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from ._optim import fd_gradient, maximize
from .distributions import (
    ObsParams,
    derive_obs_params,
    gpd_logpdf,
    splice_logcdf,
    splice_logpdf,
)
from .panel import LINK_CLAMP, LinkConfig, PanelData, ThetaVector, design, link_eval
from .quantreg import QuantFit, quantreg_fit, quantreg_predict

__all__ = [
    "EstimationError",
    "CensoringSpec",
    "PotThreshold",
    "FitResult",
    "FitOptions",
    "SpliceObjective",
    "PotObjective",
    "censored_loglik",
    "starting_values",
    "fit_splice",
    "gpd_mle_unconditional",
    "fit_pot",
]

log = logging.getLogger(__name__)

XI_FLOOR_LOG = -10.0


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CensoringSpec:
    """Censoring rule: observations with ``y < q`` contribute ``log F(q)``.

    ``threshold`` is a scalar for unconditional censoring and a
    :class:`QuantFit` for conditional censoring.
    """

    mode: str = "none"
    tau: float = 0.0
    threshold: float | QuantFit | None = None

    def __post_init__(self):
        if self.mode not in ("none", "unconditional", "conditional"):
            raise ValueError(f"unknown censoring mode {self.mode!r}")
        if self.mode != "none" and self.threshold is None:
            raise ValueError("censoring threshold required")

    @classmethod
    def none(cls) -> "CensoringSpec":
        return cls()

    @classmethod
    def unconditional(cls, panel: PanelData, tau: float) -> "CensoringSpec":
        if not 0 <= tau < 1:
            raise ValueError("tau must lie in [0, 1)")
        return cls("unconditional", float(tau), float(np.quantile(panel.y, tau)))

    @classmethod
    def conditional(cls, panel: PanelData, tau: float, degree: int = 1) -> "CensoringSpec":
        if tau == 0:
            return cls("unconditional", 0.0, float(np.min(panel.y)))
        return cls("conditional", float(tau), quantreg_fit(panel, tau, degree))

    def thresholds(self, panel: PanelData) -> np.ndarray | None:
        if self.mode == "none":
            return None
        if self.mode == "unconditional":
            return np.full(panel.n, float(self.threshold))
        return quantreg_predict(self.threshold, panel.X)

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "tau": self.tau}
        if isinstance(self.threshold, QuantFit):
            out["threshold"] = {"degree": self.threshold.degree, "coefficients": self.threshold.coefficients.tolist()}
        else:
            out["threshold"] = self.threshold
        return out


@dataclass(frozen=True)
class PotThreshold:
    """POT threshold rule: an unconditional empirical quantile or a
    polynomial quantile regression at ``level``."""

    kind: str = "unconditional"
    level: float = 0.95
    degree: int = 2

    def __post_init__(self):
        if self.kind not in ("unconditional", "conditional"):
            raise ValueError(f"unknown threshold kind {self.kind!r}")
        if not 0 < self.level < 1:
            raise ValueError("threshold level must lie in (0, 1)")

    def thresholds(self, panel: PanelData) -> np.ndarray:
        if self.kind == "unconditional":
            return np.full(panel.n, float(np.quantile(panel.y, self.level)))
        return quantreg_predict(quantreg_fit(panel, self.level, self.degree), panel.X)

    @property
    def label(self) -> str:
        return f"{'c' if self.kind == 'conditional' else ''}pot{round(100 * self.level)}"


@dataclass
class FitOptions:
    nm_iter: int = 500
    gtol: float = 1e-5
    ftol: float = 1e-10
    max_iter: int = 1000
    theta0: np.ndarray | None = None
    # skip the Nelder-Mead stage when theta0 is supplied
    warm: bool = False


@dataclass
class FitResult:
    """Outcome of a fit.  ``theta_hat`` is the full parameter vector."""

    model: str
    theta_hat: np.ndarray
    names: list[str]
    loglik: float
    converged: bool
    iterations: int
    censoring: CensoringSpec | PotThreshold | None
    cfg: LinkConfig
    n_obs: int
    grad_max: float = float("nan")
    vcv: np.ndarray | None = None
    vcv_kind: str = ""
    adm: float | None = None
    notes: list[str] = field(default_factory=list)

    def theta(self) -> ThetaVector:
        if self.model != "splice":
            raise AttributeError("only splice fits carry a ThetaVector")
        return ThetaVector.from_array(self.theta_hat, self.cfg.d)

    @property
    def xi_index(self) -> list[int]:
        return [i for i, nm in enumerate(self.names) if nm.startswith("beta_xi_")]

    def std_errors(self) -> np.ndarray:
        if self.vcv is None:
            raise EstimationError("covariance not computed")
        return np.sqrt(np.clip(np.diag(self.vcv), 0.0, None))

    def conf_int(self, level: float = 0.95) -> np.ndarray:
        from scipy.stats import norm

        z = norm.ppf(0.5 + level / 2.0)
        se = self.std_errors()
        return np.column_stack([self.theta_hat - z * se, self.theta_hat + z * se])


def _unique_rows(Z):
    Zu, inv = np.unique(Z, axis=0, return_inverse=True)
    return Zu, inv.ravel()


class SpliceObjective:
    """Per-observation censored log-likelihood terms of the splice regression.

    Parameters are evaluated once per distinct covariate row, which is a large
    saving when covariates are shared across entities.
    """

    model = "splice"

    def __init__(self, panel: PanelData, cfg: LinkConfig | None = None, cens: CensoringSpec | None = None):
        self.cfg = cfg or LinkConfig.full(panel.d)
        if self.cfg.d != panel.d:
            raise ValueError("link configuration does not match panel width")
        self.cens = cens or CensoringSpec.none()
        self.y = panel.y
        self.n = panel.n
        self.d = panel.d
        self.Zu, self.inv = _unique_rows(design(panel.X))
        q = self.cens.thresholds(panel)
        if q is None:
            self.censored = np.zeros(self.n, dtype=bool)
            self.q = None
        else:
            self.censored = self.y < q
            self.q = q
        self._unc = np.flatnonzero(~self.censored)
        self._cen = np.flatnonzero(self.censored)
        self.free = self.cfg.free_mask()
        self.names = ThetaVector.names(self.d)

    @property
    def n_censored(self) -> int:
        return int(self._cen.size)

    def obs_params(self, theta, *, clamp: bool = True) -> ObsParams:
        """Parameters at the distinct covariate rows."""
        th = ThetaVector.from_array(theta, self.d)
        ms, msig, mxi = self.cfg.masks()
        eta = self.Zu @ np.column_stack([th.beta_s * ms, th.beta_sigma * msig, th.beta_xi * mxi])
        if clamp:
            eta = np.clip(eta, -LINK_CLAMP, LINK_CLAMP)
        with np.errstate(over="ignore"):
            par = np.exp(eta)
        return derive_obs_params(th.mu0, par[:, 0], par[:, 1], par[:, 2], check=False)

    def contributions(self, theta, idx=None) -> np.ndarray:
        """``m_theta(y_i, x_i)`` for all observations (or the subset ``idx``)."""
        opu = self.obs_params(theta)
        if idx is None:
            out = np.empty(self.n)
            unc, cen = self._unc, self._cen
            out[unc] = splice_logpdf(self.y[unc], opu.take(self.inv[unc]))
            if cen.size:
                out[cen] = splice_logcdf(self.q[cen], opu.take(self.inv[cen]))
            return out
        idx = np.asarray(idx)
        op = opu.take(self.inv[idx])
        c = self.censored[idx]
        yy = np.where(c, self.q[idx] if self.q is not None else 0.0, self.y[idx])
        return np.where(c, splice_logcdf(yy, op), splice_logpdf(yy, op))

    def loglik(self, theta) -> float:
        with np.errstate(all="ignore"):
            v = self.contributions(theta)
        s = float(np.sum(v))
        return s if np.isfinite(s) else -np.inf

    def full(self, free_x) -> np.ndarray:
        th = np.zeros(self.free.size)
        th[self.free] = free_x
        return th


def censored_loglik(theta, panel: PanelData, cfg: LinkConfig | None = None, cens: CensoringSpec | None = None) -> float:
    """Sum of ``1(y>=q) log f(y) + 1(y<q) log F(q)``; ``-inf`` if any term is not finite."""
    theta = theta.to_array() if isinstance(theta, ThetaVector) else np.asarray(theta, dtype=float)
    return SpliceObjective(panel, cfg, cens).loglik(theta)


def gpd_mle_unconditional(exceedances) -> tuple[float, float]:
    """Unconditional GPD maximum likelihood on ``log xi``, ``log sigma``.

    The shape is bounded below at ``exp(-10)``; a light (exponential) tail
    therefore lands on that floor.
    """
    z = np.asarray(exceedances, dtype=float)
    if z.size < 10:
        raise EstimationError(f"need at least 10 exceedances, got {z.size}")
    if np.any(z < 0):
        raise EstimationError("exceedances must be nonnegative")
    if np.ptp(z) == 0:
        raise EstimationError("degenerate exceedance sample (all values equal)")
    m, v = z.mean(), z.var()
    xi0 = min(max(0.5 * (1.0 - m * m / v), 0.05), 0.9)
    sig0 = max(m * (1.0 - xi0), 1e-12)

    def nll(p):
        xi, sig = np.exp(p)
        t = np.log1p(xi * z / sig)
        return z.size * p[1] + (1.0 + 1.0 / xi) * t.sum()

    def grad(p):
        xi, sig = np.exp(p)
        a = xi * z / sig
        t = np.log1p(a)
        r = a / (1.0 + a)
        # d/dlog xi and d/dlog sigma
        gxi = -t.sum() / xi + (1.0 + 1.0 / xi) * r.sum()
        gsig = z.size - (1.0 + 1.0 / xi) * r.sum()
        return np.array([gxi, gsig])

    best = None
    for start in ((np.log(xi0), np.log(sig0)), (np.log(0.3), np.log(m * 0.7)), (-5.0, np.log(m))):
        r = optimize.minimize(
            nll, np.array(start), jac=grad, method="L-BFGS-B",
            bounds=[(XI_FLOOR_LOG, 5.0), (np.log(m) - 30, np.log(m) + 30)],
            options={"ftol": 1e-15, "gtol": 1e-11, "maxiter": 2000},
        )
        if best is None or r.fun < best.fun:
            best = r
    xi, sig = np.exp(best.x)
    return float(xi), float(sig)


def starting_values(panel: PanelData, cfg: LinkConfig | None = None) -> np.ndarray:
    """Full-length starting vector.

    Location and body scale come from the sample with its top 20% removed
    (mean and log mean absolute deviation); GPD intercepts from an
    unconditional GPD fit above the pooled 95% quantile; slopes 0.001.
    """
    d = panel.d
    cfg = cfg or LinkConfig.full(d)
    y = panel.y
    trimmed = y[y <= np.quantile(y, 0.8)]
    mu0 = trimmed.mean()
    mad = np.mean(np.abs(trimmed - mu0))
    q95 = np.quantile(y, 0.95)
    xi, sig = gpd_mle_unconditional(y[y > q95] - q95)
    slope = np.full(d, 0.001)
    th = ThetaVector(
        mu0,
        np.concatenate([[np.log(mad)], slope]),
        np.concatenate([[np.log(sig)], slope]),
        np.concatenate([[np.log(xi)], slope]),
    ).to_array()
    return np.where(cfg.free_mask(), th, 0.0)


def _run(objective, theta0, opts: FitOptions):
    free = objective.free

    def f(x):
        return objective.loglik(objective.full(x)) / objective.n

    x0 = np.asarray(theta0, dtype=float)[free]
    nm = 0 if (opts.warm and opts.theta0 is not None) else opts.nm_iter
    res = maximize(f, x0, nm_iter=nm, gtol=opts.gtol, ftol=opts.ftol, max_iter=opts.max_iter)
    return res, objective.full(res.x)


# xi intercepts tried when an optimum places every observation below u
RESTART_XI = (0.3, 0.5)


def _tail_is_empty(theta, panel: PanelData) -> bool:
    with np.errstate(all="ignore"):
        u = link_eval(theta, panel.X, clamp=True, check=False).u
    return not np.any(panel.y >= u)


def fit_splice(
    panel: PanelData,
    cfg: LinkConfig | None = None,
    cens: CensoringSpec | None = None,
    opts: FitOptions | None = None,
) -> FitResult:
    """Maximize the censored log-likelihood (plain MLE when ``cens`` is none)."""
    if panel.n == 0:
        raise EstimationError("empty panel")
    opts = opts or FitOptions()
    obj = SpliceObjective(panel, cfg, cens)
    recipe = starting_values(panel, obj.cfg)
    theta0 = opts.theta0 if opts.theta0 is not None else recipe
    res, theta = _run(obj, theta0, opts)
    notes = []
    if _tail_is_empty(theta, panel):
        # With no observation above u the xi coefficients are unidentified and
        # the optimizer rests in a flat region; the GPD piece can hold a higher
        # mode that a start with u lowered into the data reaches.
        k = 2 * panel.d + 3
        for xi_start in RESTART_XI:
            alt = recipe.copy()
            alt[k] = np.log(xi_start)
            r2, th2 = _run(obj, alt, replace(opts, theta0=alt, warm=False))
            if r2.converged and r2.fun > res.fun:
                res, theta = r2, th2
                notes.append(f"restarted from xi = {xi_start}: first optimum left the tail piece empty")
            if not _tail_is_empty(theta, panel):
                break
    if not res.converged:
        notes.append(f"optimizer did not converge: {res.message} (grad max {res.grad_max:.2e})")
    return FitResult(
        "splice", theta, obj.names, res.fun * obj.n, res.converged, res.iterations,
        obj.cens, obj.cfg, obj.n, res.grad_max, notes=notes,
    )


class PotObjective:
    """GPD regression log-likelihood of the exceedances over ``u_it``."""

    model = "pot"

    def __init__(self, panel: PanelData, cfg: LinkConfig | None = None, threshold: PotThreshold | None = None, *, min_exceed: int = 30):
        self.cfg = cfg or LinkConfig.full(panel.d)
        self.threshold = threshold or PotThreshold()
        u = self.threshold.thresholds(panel)
        keep = panel.y > u
        count = int(keep.sum())
        if count < min_exceed:
            raise EstimationError(f"only {count} exceedances above the threshold (need {min_exceed})")
        self.z = panel.y[keep] - u[keep]
        self.Z = design(panel.X[keep])
        self.n = count
        self.d = panel.d
        _, msig, mxi = self.cfg.masks()
        self.free = np.concatenate([msig, mxi])
        self.names = [f"beta_sigma_{j}" for j in range(self.d + 1)] + [f"beta_xi_{j}" for j in range(self.d + 1)]

    def contributions(self, theta, idx=None) -> np.ndarray:
        k = self.d + 1
        theta = np.asarray(theta, dtype=float)
        eta_s = np.clip(self.Z @ theta[:k], -LINK_CLAMP, LINK_CLAMP)
        eta_x = np.clip(self.Z @ theta[k:], -LINK_CLAMP, LINK_CLAMP)
        if idx is not None:
            eta_s, eta_x = eta_s[idx], eta_x[idx]
            z = self.z[idx]
        else:
            z = self.z
        return gpd_logpdf(z, np.exp(eta_x), np.exp(eta_s))

    def loglik(self, theta) -> float:
        with np.errstate(all="ignore"):
            s = float(np.sum(self.contributions(theta)))
        return s if np.isfinite(s) else -np.inf

    def full(self, free_x) -> np.ndarray:
        th = np.zeros(self.free.size)
        th[self.free] = free_x
        return th


def fit_pot(
    panel: PanelData,
    cfg: LinkConfig | None = None,
    threshold: PotThreshold | None = None,
    opts: FitOptions | None = None,
) -> FitResult:
    """Peaks-over-threshold GPD regression with log links on ``xi`` and ``sigma``."""
    opts = opts or FitOptions()
    obj = PotObjective(panel, cfg, threshold)
    if opts.theta0 is not None:
        theta0 = np.asarray(opts.theta0, dtype=float)
    else:
        xi, sig = gpd_mle_unconditional(obj.z)
        slope = np.full(obj.d, 0.001)
        theta0 = np.concatenate([[np.log(sig)], slope, [np.log(xi)], slope])
        theta0 = np.where(obj.free, theta0, 0.0)
    res, theta = _run(obj, theta0, opts)
    notes = [] if res.converged else [f"optimizer did not converge: {res.message} (grad max {res.grad_max:.2e})"]
    return FitResult(
        "pot", theta, obj.names, res.fun * obj.n, res.converged, res.iterations,
        obj.threshold, obj.cfg, obj.n, res.grad_max, notes=notes,
    )


def objective_for(fit: FitResult, panel: PanelData):
    """Rebuild the objective a fit was computed from."""
    if fit.model == "splice":
        return SpliceObjective(panel, fit.cfg, fit.censoring)
    if fit.model == "pot":
        return PotObjective(panel, fit.cfg, fit.censoring)
    raise ValueError(f"unknown model {fit.model!r}")


def gradient_check(fit: FitResult, panel: PanelData) -> np.ndarray:
    """Finite-difference gradient of the mean objective at ``theta_hat`` (free entries)."""
    obj = objective_for(fit, panel)
    free = obj.free
    return fd_gradient(lambda x: obj.loglik(obj.full(x)) / obj.n, fit.theta_hat[free])
