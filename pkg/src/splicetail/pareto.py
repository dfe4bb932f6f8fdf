"""Censored maximum likelihood for a unit-scale Pareto tail, in closed form.

For ``y > 1`` with survival ``y^{-1/xi}`` and observations at or below a
known ``q`` censored, the score equation reduces to a scalar fixed point in
``xi``.  The module serves as an analytic check of the generic censored
likelihood and sandwich code.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ParetoWmlError",
    "ParetoWmlResult",
    "ParetoObjective",
    "asymptotic_variance",
    "pareto_sample",
    "pareto_wml",
    "validate_pareto",
]

DAMPING = 0.5
MAX_ITER = 500
TOL = 1e-12


class ParetoWmlError(RuntimeError):
    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


@dataclass(frozen=True)
class ParetoWmlResult:
    xi_hat: float
    tau: float
    q_tau: float
    asymp_var: float
    iterations: int
    q_known: bool = True
    notes: list = field(default_factory=list)
    path: tuple = field(default=(), repr=False)


def asymptotic_variance(xi: float, tau: float) -> float:
    """``xi^2 / (1 - tau + log(1-tau)^2 (1-tau)/tau)``; equals ``xi^2`` at ``tau = 0``."""
    if not 0 <= tau < 1:
        raise ValueError("tau must lie in [0, 1)")
    if tau == 0:
        return xi * xi
    l1 = np.log1p(-tau)
    return float(xi * xi / ((1.0 - tau) + l1 * l1 * (1.0 - tau) / tau))


def pareto_sample(xi: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draws with ``P(Y > y) = y^{-1/xi}``, ``y >= 1``."""
    return np.exp(-xi * np.log1p(-rng.uniform(size=n)))


def _censor_term(xi, log_q):
    # log q * q^{-1/xi} / (1 - q^{-1/xi})
    return log_q / np.expm1(log_q / xi)


def pareto_wml(y, tau: float, q_tau: float | None = None, *, damping: float = DAMPING, max_iter: int = MAX_ITER) -> ParetoWmlResult:
    """Solve the censored-likelihood fixed point by damped iteration.

    Starts from the uncensored estimate ``mean(log y)``, which is returned
    unchanged when ``tau == 0``.  Without ``q_tau`` the type-7 sample
    quantile at ``tau`` is used.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0 or not np.all(y > 1.0):
        raise ValueError("sample must be non-empty with every value > 1")
    if not 0 <= tau < 1:
        raise ValueError("tau must lie in [0, 1)")
    logy = np.log(y)
    xi = float(np.mean(logy))
    notes = []
    known = q_tau is not None
    if tau == 0:
        q = 1.0 if q_tau is None else float(q_tau)
        return ParetoWmlResult(xi, 0.0, q, asymptotic_variance(xi, 0.0), 0, known, notes)
    if q_tau is None:
        q = float(np.quantile(y, tau))
        notes.append("threshold estimated by the sample quantile; variance formula is approximate")
    else:
        q = float(q_tau)
        if not q > 1.0:
            raise ValueError("q_tau must exceed 1")
    above = y > q
    B = above.mean()
    if B == 0:
        raise ParetoWmlError(f"no observations above q={q:.6g}")
    A = np.mean(np.where(above, logy, 0.0))
    C = 1.0 - B
    log_q = np.log(q)
    path = [xi]
    prev_step = np.inf
    for it in range(1, max_iter + 1):
        g = (A - _censor_term(xi, log_q) * C) / B
        new = (1.0 - damping) * xi + damping * g
        # an expanding or infeasible step means the map is not a contraction
        # at this damping (large tau); shrink it and retry from xi
        while not (np.isfinite(new) and new > 0) or abs(new - xi) > prev_step:
            damping *= 0.5
            if damping < 1e-8:
                raise ParetoWmlError(f"fixed point iteration stalled at iteration {it}", last=xi)
            new = (1.0 - damping) * xi + damping * g
        prev_step = abs(new - xi)
        done = abs(new - xi) <= TOL * max(1.0, abs(xi))
        xi = float(new)
        path.append(xi)
        if done:
            return ParetoWmlResult(xi, float(tau), q, asymptotic_variance(xi, tau), it, known, notes, tuple(path))
    raise ParetoWmlError(f"fixed point did not converge in {max_iter} iterations", last=xi)


class ParetoObjective:
    """Per-observation censored log-likelihood in ``theta = [xi]``.

    Exposes the same ``contributions``/``loglik``/``free``/``n`` surface as the
    splice objectives so the generic sandwich code applies unchanged.
    """

    def __init__(self, y, q: float):
        self.y = np.asarray(y, dtype=float)
        self.q = float(q)
        self.above = self.y > self.q
        self.logy = np.log(self.y)
        self.free = np.array([True])
        self.n = self.y.size

    def contributions(self, theta, idx=None) -> np.ndarray:
        xi = float(np.asarray(theta).ravel()[0])
        logy = self.logy if idx is None else self.logy[idx]
        above = self.above if idx is None else self.above[idx]
        if xi <= 0:
            return np.full(logy.shape, -np.inf)
        log_F_q = np.log(-np.expm1(-np.log(self.q) / xi))
        return np.where(above, -np.log(xi) - (1.0 + 1.0 / xi) * logy, log_F_q)

    def loglik(self, theta) -> float:
        v = float(np.sum(self.contributions(theta)))
        return v if np.isfinite(v) else -np.inf


def validate_pareto(seed: int, *, xi0: float = 0.5, tau: float = 0.3, n: int = 100_000, runs: int = 500, tol: float = 0.05) -> list[dict]:
    """Run the closed-form checks; each entry has ``name``, ``value``, ``target``, ``passed``."""
    from .inference import sandwich_from_objective

    rng = np.random.default_rng(seed)
    checks = []

    y = pareto_sample(xi0, n, rng)
    r0 = pareto_wml(y, 0.0)
    mean_log = float(np.mean(np.log(y)))
    checks.append({"name": "tau0_equals_mean_log", "value": r0.xi_hat, "target": mean_log, "passed": r0.xi_hat == mean_log})

    q = (1.0 - tau) ** (-xi0)
    target = asymptotic_variance(xi0, tau)
    est = np.empty(runs)
    for r in range(runs):
        est[r] = pareto_wml(pareto_sample(xi0, n, rng), tau, q).xi_hat
    nvar = float(n * np.var(est, ddof=1))
    checks.append({"name": "mc_variance", "value": nvar, "target": target, "passed": abs(nvar / target - 1.0) <= tol})

    y = pareto_sample(xi0, n, rng)
    res = pareto_wml(y, tau, q)
    sw = sandwich_from_objective(ParetoObjective(y, q), np.array([res.xi_hat]))
    nsw = float(n * sw.vcv[0, 0])
    checks.append({"name": "sandwich_variance", "value": nsw, "target": target, "passed": abs(nsw / target - 1.0) <= tol})
    return checks
