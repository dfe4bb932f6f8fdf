"""Gaussian / exponential / GPD primitives and the spliced G-E-GPD law.

All functions are vectorised over numpy arrays.  Component weights are kept in
log space relative to the lower junction point ``u_star`` so that large
``lambda * u`` products never reach ``exp``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "ParameterError",
    "GpdParams",
    "ObsParams",
    "gpd_logpdf",
    "gpd_pdf",
    "gpd_cdf",
    "gpd_sf",
    "gpd_quantile",
    "derive_obs_params",
    "splice_logpdf",
    "splice_pdf",
    "splice_logcdf",
    "splice_cdf",
    "splice_sf",
    "splice_quantile",
    "splice_sample",
]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
# |xi| below this switches the GPD to its exponential limit
XI_ZERO = 1e-8


class DomainError(ValueError):
    """Argument outside the support of a distribution function."""


class ParameterError(ValueError):
    """Distribution parameters are invalid or numerically degenerate."""


@dataclass(frozen=True)
class GpdParams:
    xi: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"GPD scale must be positive, got {self.sigma}")


def _check_scale(sigma):
    if np.any(~(np.asarray(sigma) > 0)):
        raise DomainError("GPD scale must be positive")


def gpd_logpdf(z, xi, sigma):
    """Log density of the GPD at exceedance ``z >= 0`` (``xi >= 0`` branch)."""
    z, xi, sigma = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (z, xi, sigma)))
    _check_scale(sigma)
    if np.any(z < 0):
        raise DomainError("GPD density evaluated at a negative exceedance")
    small = np.abs(xi) < XI_ZERO
    xi_safe = np.where(small, 1.0, xi)
    out = -(1.0 + 1.0 / xi_safe) * np.log1p(xi_safe * z / sigma) - np.log(sigma)
    out = np.where(small, -z / sigma - np.log(sigma), out)
    return out[()] if out.ndim == 0 else out


def gpd_pdf(z, p: GpdParams | None = None, *, xi=None, sigma=None):
    """GPD density ``h(z; xi, sigma)``.

    Accepts either a :class:`GpdParams` or explicit ``xi``/``sigma`` arrays.

    >>> float(gpd_pdf(0.0, GpdParams(0.2, 0.08)))
    12.5
    """
    if p is not None:
        xi, sigma = p.xi, p.sigma
    return np.exp(gpd_logpdf(z, xi, sigma))


def _log_sf(z, xi, sigma):
    small = np.abs(xi) < XI_ZERO
    xi_safe = np.where(small, 1.0, xi)
    out = -np.log1p(xi_safe * z / sigma) / xi_safe
    return np.where(small, -z / sigma, out)


def gpd_sf(z, p: GpdParams | None = None, *, xi=None, sigma=None):
    if p is not None:
        xi, sigma = p.xi, p.sigma
    z, xi, sigma = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (z, xi, sigma)))
    _check_scale(sigma)
    if np.any(z < 0):
        raise DomainError("GPD survival evaluated at a negative exceedance")
    out = np.exp(_log_sf(z, xi, sigma))
    return out[()] if out.ndim == 0 else out


def gpd_cdf(z, p: GpdParams | None = None, *, xi=None, sigma=None):
    if p is not None:
        xi, sigma = p.xi, p.sigma
    z, xi, sigma = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (z, xi, sigma)))
    _check_scale(sigma)
    if np.any(z < 0):
        raise DomainError("GPD cdf evaluated at a negative exceedance")
    out = -np.expm1(_log_sf(z, xi, sigma))
    return out[()] if out.ndim == 0 else out


def gpd_quantile(prob, p: GpdParams | None = None, *, xi=None, sigma=None):
    """Inverse of :func:`gpd_cdf` for ``0 <= prob < 1``."""
    if p is not None:
        xi, sigma = p.xi, p.sigma
    prob, xi, sigma = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (prob, xi, sigma)))
    _check_scale(sigma)
    if np.any((prob < 0) | (prob >= 1)) or np.any(np.isnan(prob)):
        raise DomainError("GPD quantile requires 0 <= prob < 1")
    small = np.abs(xi) < XI_ZERO
    xi_safe = np.where(small, 1.0, xi)
    log_sf = np.log1p(-prob)
    out = sigma / xi_safe * np.expm1(-xi_safe * log_sf)
    out = np.where(small, -sigma * log_sf, out)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class ObsParams:
    """Per-observation parameters of the spliced density.

    Fields may be scalars or equally shaped arrays.  ``log_g2_star`` stores
    ``log(gamma2) - lambda * u_star``; ``gamma2`` itself can overflow when
    ``lambda * u_star`` is large and is only exposed as a convenience.
    """

    mu0: np.ndarray
    s: np.ndarray
    sigma: np.ndarray
    xi: np.ndarray
    lam: np.ndarray
    u_star: np.ndarray
    u: np.ndarray
    log_gamma1: np.ndarray
    log_g2_star: np.ndarray
    log_gamma3: np.ndarray
    log_p1: np.ndarray  # log F(u_star)

    @property
    def gamma1(self):
        return np.exp(self.log_gamma1)

    @property
    def gamma2(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_g2_star + self.lam * self.u_star)

    @property
    def gamma3(self):
        return np.exp(self.log_gamma3)

    @property
    def p_u_star(self):
        """F(u_star)."""
        return np.exp(self.log_p1)

    @property
    def p_u(self):
        """F(u) = 1 - gamma3."""
        return -np.expm1(self.log_gamma3)

    def take(self, idx) -> "ObsParams":
        """Index every field (used to expand unique-row parameters)."""
        return ObsParams(*(np.asarray(getattr(self, f))[idx] for f in self.__dataclass_fields__))


def derive_obs_params(mu0, s, sigma, xi, *, check: bool = True) -> ObsParams:
    """Compute the constrained splice parameters from ``(mu0, s, sigma, xi)``.

    The exponential rate and both junction points follow from C^1 continuity,
    the component weights from continuity and unit mass::

        lambda = (1 + xi) / sigma,  u_star = mu0 + lambda s^2,  u = u_star + sigma / xi
        gamma2 = [xi e^{-lambda u} + (1 + lambda Phi(u_star)/phi(u_star)) e^{-lambda u_star}]^{-1}
        gamma1 = gamma2 e(u_star; lambda) / phi(u_star),  gamma3 = sigma gamma2 e(u; lambda)

    Raises
    ------
    ParameterError
        If inputs are not positive, or the derived weights are not finite
        (only when ``check`` is true; otherwise non-finite values propagate).
    """
    mu0, s, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu0, s, sigma, xi)))
    if check and (np.any(~(s > 0)) or np.any(~(sigma > 0)) or np.any(~(xi > 0))):
        raise ParameterError("s, sigma and xi must all be positive")
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        lam = (1.0 + xi) / sigma
        log_lam = np.log1p(xi) - np.log(sigma)
        # standardized distance of u_star from mu0
        zs = lam * s
        u_star = mu0 + zs * s
        gap = sigma / xi
        u = u_star + gap
        log_phi_star = -0.5 * zs * zs - np.log(s) - _LOG_SQRT_2PI
        log_Phi_star = special.log_ndtr(zs)
        # log(1 + lambda Phi/phi) and log(xi e^{-lambda (u - u_star)})
        b = np.logaddexp(0.0, log_lam + log_Phi_star - log_phi_star)
        a = np.log(xi) - lam * gap
        log_g2_star = -np.logaddexp(a, b)
        log_gamma1 = log_g2_star + log_lam - log_phi_star
        log_gamma3 = np.log(sigma) + log_lam + log_g2_star - lam * gap
        log_p1 = log_gamma1 + log_Phi_star
    op = ObsParams(mu0, s, sigma, xi, lam, u_star, u, log_gamma1, log_g2_star, log_gamma3, log_p1)
    if check:
        for name in ("u_star", "u", "log_gamma1", "log_g2_star", "log_gamma3"):
            if not np.all(np.isfinite(getattr(op, name))):
                raise ParameterError(f"non-finite splice parameter {name}")
    return op


def _pieces(y, op: ObsParams):
    y = np.asarray(y, dtype=float)
    lower = y <= op.u_star
    upper = y >= op.u
    return y, lower, upper


def splice_logpdf(y, op: ObsParams):
    """Log density of the three-piece G-E-GPD law."""
    y, lower, upper = _pieces(y, op)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        zg = (y - op.mu0) / op.s
        body = op.log_gamma1 - 0.5 * zg * zg - np.log(op.s) - _LOG_SQRT_2PI
        bridge = op.log_g2_star + np.log(op.lam) - op.lam * (y - op.u_star)
        zt = np.maximum(y - op.u, 0.0)
        tail = (
            op.log_gamma3
            - (1.0 + 1.0 / op.xi) * np.log1p(op.xi * zt / op.sigma)
            - np.log(op.sigma)
        )
    out = np.where(lower, body, np.where(upper, tail, bridge))
    return out[()] if np.ndim(out) == 0 else out


def splice_pdf(y, op: ObsParams):
    with np.errstate(under="ignore"):
        return np.exp(splice_logpdf(y, op))


def _log_sf_tail(y, op):
    zt = np.maximum(y - op.u, 0.0)
    return op.log_gamma3 - np.log1p(op.xi * zt / op.sigma) / op.xi


def splice_logcdf(y, op: ObsParams):
    """Log cdf, accurate deep in the Gaussian lower tail."""
    y, lower, upper = _pieces(y, op)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        body = op.log_gamma1 + special.log_ndtr((y - op.mu0) / op.s)
        mid = np.exp(op.log_p1) - np.exp(op.log_g2_star) * np.expm1(
            -op.lam * np.maximum(y - op.u_star, 0.0)
        )
        bridge = np.log(mid)
        tail = np.log1p(-np.exp(_log_sf_tail(y, op)))
    out = np.where(lower, body, np.where(upper, tail, bridge))
    return out[()] if np.ndim(out) == 0 else out


def splice_cdf(y, op: ObsParams):
    """Closed-form cdf: ``gamma1 Phi`` below ``u_star``, then the exponential
    increment, then ``1 - gamma3 * GPD survival`` above ``u``."""
    with np.errstate(under="ignore"):
        return np.exp(splice_logcdf(y, op))


def splice_sf(y, op: ObsParams):
    y, lower, upper = _pieces(y, op)
    with np.errstate(invalid="ignore", over="ignore"):
        tail = np.exp(_log_sf_tail(y, op))
        rest = -np.expm1(splice_logcdf(y, op))
    out = np.where(upper, tail, rest)
    return out[()] if np.ndim(out) == 0 else out


def splice_quantile(prob, op: ObsParams):
    """Piecewise closed-form inverse of :func:`splice_cdf` for ``0 < prob < 1``."""
    prob = np.asarray(prob, dtype=float)
    if np.any(~((prob > 0) & (prob < 1))):
        raise DomainError("splice quantile requires 0 < prob < 1")
    p1 = np.exp(op.log_p1)
    p2 = -np.expm1(op.log_gamma3)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        body = op.mu0 + op.s * special.ndtri_exp(np.log(prob) - op.log_gamma1)
        frac = (prob - p1) * np.exp(-op.log_g2_star)
        bridge = op.u_star - np.log1p(-frac) / op.lam
        # survival beyond u relative to gamma3
        log_ratio = op.log_gamma3 - np.log1p(-prob)
        tail = op.u + op.sigma / op.xi * np.expm1(op.xi * log_ratio)
    out = np.where(prob <= p1, body, np.where(prob > p2, tail, bridge))
    return out[()] if np.ndim(out) == 0 else out


def splice_sample(op: ObsParams, rng: np.random.Generator, size=None):
    """Inverse-transform draws; one draw per element of ``op`` if ``size`` is None."""
    shape = np.shape(op.u) if size is None else size
    u = rng.uniform(size=shape)
    # uniform() can return exactly 0
    u = np.where(u <= 0.0, np.finfo(float).tiny, u)
    return splice_quantile(u, op)
