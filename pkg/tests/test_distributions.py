import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, optimize, stats

from splicetail.distributions import (
    DomainError,
    GpdParams,
    ParameterError,
    derive_obs_params,
    gpd_cdf,
    gpd_logpdf,
    gpd_pdf,
    gpd_quantile,
    gpd_sf,
    splice_cdf,
    splice_logcdf,
    splice_logpdf,
    splice_pdf,
    splice_quantile,
    splice_sample,
    splice_sf,
)

EXAMPLE = dict(mu0=0.0, s=0.045, sigma=0.08, xi=0.2)


def _integrate_splice(op):
    m, s = float(op.mu0), float(op.s)
    f = lambda y: float(splice_pdf(y, op))
    pts = [(-np.inf, m - 12 * s), (m - 12 * s, float(op.u_star)), (float(op.u_star), float(op.u)), (float(op.u), np.inf)]
    return sum(integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-11, limit=400)[0] for a, b in pts if b > a)


# ------------------------------------------------------------------------ GPD


def test_gpd_density_at_zero():
    assert gpd_pdf(0.0, GpdParams(0.2, 0.08)) == pytest.approx(12.5)
    assert gpd_pdf(0.0, GpdParams(0.0, 0.08)) == pytest.approx(12.5)


def test_gpd_integrates_to_one():
    val, _ = integrate.quad(lambda z: gpd_pdf(z, xi=0.2, sigma=0.08), 0, np.inf, epsabs=1e-12)
    assert abs(val - 1.0) < 1e-8


def test_gpd_quantile_lower_endpoint_and_round_trip():
    p = GpdParams(0.3, 1.7)
    assert gpd_quantile(0.0, p) == 0.0
    assert abs(gpd_cdf(gpd_quantile(0.9, p), p) - 0.9) < 1e-10
    z = np.array([1e-6, 0.01, 0.5, 3.0, 40.0])
    assert_allclose(gpd_quantile(gpd_cdf(z, p), p), z, rtol=1e-10)


def test_gpd_median_matches_bisection():
    p = GpdParams(0.1, 0.08)
    root = optimize.bisect(lambda z: gpd_cdf(z, p) - 0.5, 0.0, 10.0, xtol=1e-15)
    assert gpd_quantile(0.5, p) == pytest.approx(root, rel=1e-10)


def test_gpd_matches_scipy_genpareto():
    z = np.linspace(0, 3, 31)
    assert_allclose(gpd_pdf(z, xi=0.25, sigma=0.5), stats.genpareto.pdf(z, 0.25, scale=0.5), rtol=1e-12)
    assert_allclose(gpd_sf(z, xi=0.25, sigma=0.5), stats.genpareto.sf(z, 0.25, scale=0.5), rtol=1e-12)


def test_gpd_exponential_limit_is_continuous():
    z = np.linspace(0, 2, 21)
    a = gpd_pdf(z, xi=1e-6, sigma=0.3)
    b = gpd_pdf(z, xi=0.0, sigma=0.3)
    assert np.max(np.abs(a / b - 1)) < 1e-4
    assert_allclose(gpd_cdf(z, xi=1e-9, sigma=0.3), 1 - np.exp(-z / 0.3), rtol=1e-12)


def test_gpd_domain_errors():
    with pytest.raises(DomainError):
        gpd_pdf(-0.1, xi=0.2, sigma=1.0)
    with pytest.raises(DomainError):
        gpd_quantile(1.0, xi=0.2, sigma=1.0)
    with pytest.raises(DomainError):
        gpd_quantile(-0.2, xi=0.2, sigma=1.0)
    with pytest.raises((DomainError, ValueError)):
        GpdParams(0.2, 0.0)
    with pytest.raises(DomainError):
        gpd_logpdf(1.0, 0.2, -1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.01, 5.0), st.floats(0.0, 0.999))
def test_gpd_quantile_inverts_cdf(xi, sigma, p):
    z = gpd_quantile(p, xi=xi, sigma=sigma)
    assert z >= 0
    assert gpd_cdf(z, xi=xi, sigma=sigma) == pytest.approx(p, abs=1e-12)


# ------------------------------------------------------------ splice parameters


def test_derived_junctions_for_example_parameters():
    op = derive_obs_params(**EXAMPLE)
    assert op.lam == pytest.approx(15.0, rel=1e-14)
    assert op.u_star == pytest.approx(0.030375, rel=1e-13)
    assert op.u == pytest.approx(0.430375, rel=1e-13)


def test_weights_match_direct_formulas():
    op = derive_obs_params(**EXAMPLE)
    lam, us, u = 15.0, 0.030375, 0.430375
    phi = stats.norm.pdf(us, 0, 0.045)
    Phi = stats.norm.cdf(us, 0, 0.045)
    g2 = 1.0 / (0.2 * np.exp(-lam * u) + (1 + lam * Phi / phi) * np.exp(-lam * us))
    assert op.gamma2 == pytest.approx(g2, rel=1e-12)
    assert op.gamma1 == pytest.approx(g2 * lam * np.exp(-lam * us) / phi, rel=1e-12)
    assert op.gamma3 == pytest.approx(0.08 * g2 * lam * np.exp(-lam * u), rel=1e-12)


def test_continuity_constraints_hold_exactly():
    op = derive_obs_params(**EXAMPLE)
    lhs = op.gamma1 * stats.norm.pdf(op.u_star, op.mu0, op.s)
    rhs = op.gamma2 * op.lam * np.exp(-op.lam * op.u_star)
    assert lhs == pytest.approx(rhs, rel=1e-13)
    assert op.gamma2 * op.lam * np.exp(-op.lam * op.u) == pytest.approx(op.gamma3 / op.sigma, rel=1e-12)


def test_vanishing_scale_pushes_junctions_out():
    op = derive_obs_params(0.0, 0.045, 1e-5, 0.2)
    assert op.u_star > 200 and op.u >= op.u_star
    assert np.isfinite(op.log_gamma3)
    # the model is Gaussian to machine precision here
    y = np.array([-0.05, 0.0, 0.07])
    assert_allclose(splice_pdf(y, op), stats.norm.pdf(y, 0, 0.045), rtol=1e-10)


def test_large_exponents_stay_finite():
    op = derive_obs_params(5.0, 0.5, 0.001, 0.3)
    assert op.lam * op.u > 700
    for v in (op.log_gamma1, op.log_g2_star, op.log_gamma3, op.log_p1):
        assert np.isfinite(v)


def test_invalid_inputs_raise():
    with pytest.raises(ParameterError):
        derive_obs_params(0.0, -1.0, 0.1, 0.2)
    with pytest.raises(ParameterError):
        derive_obs_params(0.0, 0.1, 0.1, 0.0)


# ------------------------------------------------------------------ splice law


def test_density_integrates_to_one():
    assert abs(_integrate_splice(derive_obs_params(**EXAMPLE)) - 1.0) < 1e-6


def test_cdf_matches_quadrature_at_junctions():
    op = derive_obs_params(**EXAMPLE)
    f = lambda y: float(splice_pdf(y, op))
    for y in (float(op.u_star), float(op.u), float(op.u) + 0.3):
        mass = integrate.quad(f, -np.inf, min(y, float(op.u_star)), epsabs=1e-13)[0]
        if y > op.u_star:
            mass += integrate.quad(f, float(op.u_star), min(y, float(op.u)), epsabs=1e-13)[0]
        if y > op.u:
            mass += integrate.quad(f, float(op.u), y, epsabs=1e-13)[0]
        assert splice_cdf(y, op) == pytest.approx(mass, abs=1e-9)


def test_cdf_is_continuous_at_junctions():
    op = derive_obs_params(**EXAMPLE)
    for j in (float(op.u_star), float(op.u)):
        lo, hi = np.nextafter(j, -np.inf), np.nextafter(j, np.inf)
        assert abs(splice_cdf(hi, op) - splice_cdf(lo, op)) < 1e-12


def test_cdf_limits():
    op = derive_obs_params(**EXAMPLE)
    assert splice_cdf(-np.inf, op) == 0.0
    assert splice_cdf(np.inf, op) == 1.0
    assert splice_cdf(-5.0, op) < 1e-100
    assert splice_sf(1e6, op) < 1e-20


def test_quantile_round_trip_at_reference_points():
    op = derive_obs_params(**EXAMPLE)
    us, u, s, sig = float(op.u_star), float(op.u), float(op.s), float(op.sigma)
    for y in (us - s, us, 0.5 * (us + u), u, u + sig):
        assert splice_quantile(splice_cdf(y, op), op) == pytest.approx(y, abs=1e-8)


def test_quantile_domain():
    op = derive_obs_params(**EXAMPLE)
    for p in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(DomainError):
            splice_quantile(p, op)


def test_logcdf_agrees_with_cdf():
    op = derive_obs_params(**EXAMPLE)
    y = np.linspace(-0.2, 2.0, 57)
    assert_allclose(np.exp(splice_logcdf(y, op)), splice_cdf(y, op), rtol=1e-12)


def _junction_checks(op, tol=1e-5):
    """C0 and C1 at both junctions; derivatives from one-sided stencils on log f."""
    g = lambda y: float(splice_logpdf(y, op))
    for j in (float(op.u_star), float(op.u)):
        h = 1e-9 * max(1.0, abs(j))
        left, right = float(splice_pdf(j - h, op)), float(splice_pdf(j + h, op))
        assert abs(left - right) <= tol * max(left, right)
        d = 1e-4 * float(op.sigma)
        dl = (3 * g(j) - 4 * g(j - d) + g(j - 2 * d)) / (2 * d)
        dr = (-3 * g(j) + 4 * g(j + d) - g(j + 2 * d)) / (2 * d)
        assert abs(dl - dr) <= tol * max(abs(dl), abs(dr))


def test_density_is_c1_at_junctions():
    _junction_checks(derive_obs_params(**EXAMPLE))


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(0.01, 0.2), st.floats(0.01, 0.3), st.floats(0.05, 0.6))
def test_density_properties_over_parameter_box(mu0, s, sigma, xi):
    op = derive_obs_params(mu0, s, sigma, xi)
    assert abs(_integrate_splice(op) - 1.0) < 1e-6
    p = np.array([1e-6, 0.01, 0.3, 0.5, 0.9, 0.999, 1 - 1e-7])
    assert_allclose(splice_cdf(splice_quantile(p, op), op), p, rtol=1e-9, atol=1e-14)
    _junction_checks(op)
    y = np.sort(np.concatenate([splice_quantile(p, op), [float(op.u_star), float(op.u)]]))
    assert np.all(np.diff(splice_cdf(y, op)) >= 0)


def test_sampler_is_deterministic_and_matches_cdf():
    op = derive_obs_params(**EXAMPLE)
    a = splice_sample(op, np.random.default_rng(11), 10)
    b = splice_sample(op, np.random.default_rng(11), 10)
    assert np.array_equal(a, b)
    y = splice_sample(op, np.random.default_rng(5), 1_000_000)
    ks = stats.kstest(y, lambda v: splice_cdf(v, op)).statistic
    assert ks < 0.002
