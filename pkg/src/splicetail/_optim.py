"""Two-stage maximizer: Nelder-Mead warm start, then BFGS on finite differences."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

FD_STEP = 1e-6


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    converged: bool
    iterations: int
    nfev: int
    grad_max: float
    message: str


def fd_gradient(fun, x, step=FD_STEP, f0=None):
    """Central differences with relative step ``step * (1 + |x_k|)``.

    Falls back to a one-sided difference when one side is not finite.
    """
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        h = step * (1.0 + abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        fp, fm = fun(xp), fun(xm)
        if np.isfinite(fp) and np.isfinite(fm):
            g[k] = (fp - fm) / (2.0 * h)
        else:
            f0 = fun(x) if f0 is None else f0
            if np.isfinite(fp):
                g[k] = (fp - f0) / h
            elif np.isfinite(fm):
                g[k] = (f0 - fm) / h
            else:
                g[k] = np.nan
    return g


def maximize(
    fun,
    x0,
    *,
    nm_iter: int = 500,
    gtol: float = 1e-5,
    ftol: float = 1e-10,
    max_iter: int = 1000,
    restarts: int = 3,
) -> OptimResult:
    """Maximize ``fun``; non-finite values are treated as rejected points.

    Convergence requires a relative objective change below ``ftol`` between
    the last two quasi-Newton rounds and a gradient max-norm below ``gtol``.
    """
    nfev = 0

    def neg(x):
        nonlocal nfev
        nfev += 1
        v = fun(x)
        return -v if np.isfinite(v) else np.inf

    x = np.asarray(x0, dtype=float).copy()
    iters = 0
    if not np.isfinite(neg(x)):
        raise ValueError("objective is not finite at the starting values")
    if nm_iter > 0:
        r = optimize.minimize(
            neg, x, method="Nelder-Mead",
            options={"maxiter": nm_iter, "xatol": 1e-8, "fatol": 1e-12, "adaptive": x.size > 4},
        )
        if np.isfinite(r.fun):
            x = r.x
        iters += r.nit

    def grad(x):
        return fd_gradient(neg, x)

    f_prev = neg(x)
    msg = ""
    converged = False
    g = grad(x)
    for _ in range(restarts + 1):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            r = optimize.minimize(
                neg, x, jac=grad, method="BFGS",
                options={"gtol": gtol, "norm": np.inf, "maxiter": max_iter},
            )
        iters += r.nit
        msg = r.message
        if np.isfinite(r.fun) and r.fun <= f_prev:
            x = r.x
        f_new = neg(x)
        g = grad(x)
        rel = abs(f_new - f_prev) / max(1.0, abs(f_prev))
        f_prev = f_new
        if np.all(np.isfinite(g)) and np.max(np.abs(g)) < gtol and rel < ftol:
            converged = True
            break
        if np.all(np.isfinite(g)) and np.max(np.abs(g)) < gtol and r.nit <= 1:
            converged = True
            break
    gmax = float(np.max(np.abs(g))) if np.all(np.isfinite(g)) else float("inf")
    return OptimResult(x, -f_prev, converged, iters, nfev, gmax, str(msg))
