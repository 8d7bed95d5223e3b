import math

import numpy as np
import pytest
from scipy import stats

from censvc import (DataError, McConfig, SvcParams, apply_censoring,
                    censored_exact_loglik, dense_gaussian_loglik,
                    mvn_logcdf_qmc, relative_likelihood_error,
                    simulate_svc_dataset, truncated_normal_mean)
from censvc.oracle import mvn_logpdf
from conftest import random_params


def test_mvn_logpdf_matches_scipy():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(6, 6))
    cov = A @ A.T + 6 * np.eye(6)
    mean = rng.normal(size=6)
    z = rng.normal(size=6)
    want = stats.multivariate_normal(mean=mean, cov=cov).logpdf(z)
    np.testing.assert_allclose(mvn_logpdf(z, mean, cov), want, rtol=1e-12)


def test_dense_loglik_rejects_censored_rows(small_censored):
    params = random_params(np.random.default_rng(1), small_censored.p)
    with pytest.raises(DataError):
        dense_gaussian_loglik(small_censored, params)


# ---------------------------------------------------------------------------
# truncated-normal mean


def test_truncated_mean_analytic_half_normal():
    # E[Z | Z <= 0] for Z ~ N(0,1) is -sqrt(2/pi)
    got = truncated_normal_mean(0.0, 1.0, 0.0)
    assert isinstance(got, float)
    assert abs(got - (-math.sqrt(2.0 / math.pi))) < 1e-12


def test_truncated_mean_two_sigma_case():
    # mu=2, sigma=1, L=0: lambda(-2) = phi(2)/Phi(-2) ~ 2.3732
    got = truncated_normal_mean(2.0, 1.0, 0.0)
    lam = stats.norm.pdf(2.0) / stats.norm.cdf(-2.0)
    np.testing.assert_allclose(got, 2.0 - lam, rtol=1e-12)
    assert abs(got - (-0.3732)) < 5e-4


def test_truncated_mean_matches_numerical_integration():
    cases = [(0.0, 1.0, 0.0), (2.0, 1.0, 0.0), (-1.0, 0.5, -1.2),
             (3.0, 2.0, 1.0), (0.0, 1.0, -4.0)]
    for mu, sigma, L in cases:
        a = (L - mu) / sigma
        want = stats.truncnorm.mean(-np.inf, a, loc=mu, scale=sigma)
        np.testing.assert_allclose(truncated_normal_mean(mu, sigma, L), want,
                                   rtol=1e-9, atol=1e-12)


def test_truncated_mean_weak_truncation_limit():
    # L far above mu: essentially no truncation
    got = truncated_normal_mean(1.5, 0.3, 50.0)
    np.testing.assert_allclose(got, 1.5, rtol=1e-12)


def test_truncated_mean_is_strictly_below_mu_and_L():
    rng = np.random.default_rng(5)
    mu = rng.normal(size=50)
    sigma = rng.uniform(0.1, 3.0, 50)
    L = mu + rng.normal(size=50) * 2.0
    out = truncated_normal_mean(mu, sigma, L)
    assert np.all(out < np.minimum(mu, L))


def test_truncated_mean_deep_truncation_stays_finite():
    # 40-sigma truncation: naive phi/Phi overflows, the log-space path cannot
    out = truncated_normal_mean(0.0, 1.0, -40.0)
    assert np.isfinite(out)
    # asymptotically L - 1/|a| for a -> -inf
    np.testing.assert_allclose(out, -40.0 - 1.0 / 40.0, rtol=1e-3)


def test_truncated_mean_rejects_nonpositive_sigma():
    with pytest.raises(DataError):
        truncated_normal_mean(0.0, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Gaussian orthant / rectangle probabilities


def test_logcdf_dimension_zero_and_one():
    lp, se = mvn_logcdf_qmc(np.array([]), np.zeros((0, 0)), McConfig())
    assert lp == 0.0 and se == 0.0
    lp, se = mvn_logcdf_qmc(np.array([0.7]), np.array([[2.0]]), McConfig())
    np.testing.assert_allclose(lp, stats.norm.logcdf(0.7 / math.sqrt(2.0)),
                               rtol=1e-12)
    assert se == 0.0


def test_logcdf_diagonal_factorizes():
    rng = np.random.default_rng(2)
    d = 5
    v = rng.uniform(0.5, 2.0, d)
    b = rng.normal(size=d)
    lp, se = mvn_logcdf_qmc(b, np.diag(v), McConfig(samples=4096, seed=3))
    want = float(np.sum(stats.norm.logcdf(b / np.sqrt(v))))
    assert abs(lp - want) < max(4 * se, 1e-6)


def test_logcdf_bivariate_quadrature():
    """Check against direct numerical integration of the bivariate density."""
    from scipy import integrate

    cov = np.array([[2.0, 1.1], [1.1, 1.5]])
    b = np.array([0.4, -0.3])

    def integrand(y, x):
        return stats.multivariate_normal(mean=[0, 0], cov=cov).pdf([x, y])

    p, _ = integrate.dblquad(integrand, -8.0, b[0], -8.0, b[1],
                             epsabs=1e-12, epsrel=1e-10)
    lp, se = mvn_logcdf_qmc(b, cov, McConfig(samples=8192,
                                             randomizations=12, seed=5))
    assert abs(lp - math.log(p)) < max(4 * se, 1e-6)


def test_logcdf_equicorrelated_exchangeable():
    """Equicorrelated orthant probability has a known 1-D reduction."""
    from scipy import integrate

    d, rho = 4, 0.5
    cov = np.full((d, d), rho) + (1 - rho) * np.eye(d)
    # P(X <= 0) for equicorrelated normals: int phi(t) Phi(t*sqrt(r/(1-r)))^d
    def f(t):
        return stats.norm.pdf(t) * stats.norm.cdf(
            t * math.sqrt(rho / (1 - rho))) ** d

    p, _ = integrate.quad(f, -9, 9, epsabs=1e-13)
    lp, se = mvn_logcdf_qmc(np.zeros(d), cov,
                            McConfig(samples=8192, randomizations=12, seed=7))
    assert abs(lp - math.log(p)) < max(4 * se, 2e-6)


def test_logcdf_deterministic_given_seed():
    rng = np.random.default_rng(11)
    A = rng.normal(size=(4, 4))
    cov = A @ A.T + 4 * np.eye(4)
    b = rng.normal(size=4)
    mc = McConfig(samples=2048, randomizations=8, seed=42)
    a1 = mvn_logcdf_qmc(b, cov, mc)
    a2 = mvn_logcdf_qmc(b, cov, mc)
    assert a1 == a2
    b1 = mvn_logcdf_qmc(b, cov, McConfig(samples=2048, randomizations=8,
                                         seed=43))
    assert a1[0] != b1[0]


def test_logcdf_se_shrinks_with_more_samples():
    """Median SE over 20 instances should drop by ~2x when samples x4."""
    rng = np.random.default_rng(13)
    ratios = []
    for k in range(20):
        A = rng.normal(size=(6, 6))
        cov = A @ A.T + 6 * np.eye(6)
        b = rng.normal(size=6) * 0.5
        _, se1 = mvn_logcdf_qmc(b, cov, McConfig(samples=512,
                                                 randomizations=8, seed=k))
        _, se2 = mvn_logcdf_qmc(b, cov, McConfig(samples=2048,
                                                 randomizations=8, seed=k))
        ratios.append(se1 / max(se2, 1e-300))
    assert np.median(ratios) > 1.5


def test_mcconfig_floors():
    with pytest.raises(DataError):
        McConfig(samples=64)
    with pytest.raises(DataError):
        McConfig(randomizations=4)


# ---------------------------------------------------------------------------
# exact censored likelihood


def test_exact_loglik_no_censoring_equals_dense(small_dataset):
    params = random_params(np.random.default_rng(3), small_dataset.p)
    lp, se = censored_exact_loglik(small_dataset, params, McConfig())
    np.testing.assert_allclose(lp, dense_gaussian_loglik(small_dataset,
                                                         params), rtol=1e-12)
    assert se == 0.0


def test_exact_loglik_single_censored_is_closed_form():
    rng = np.random.default_rng(19)
    params = random_params(rng, 2)
    ds, _ = simulate_svc_dataset(15, 2, params, seed=21)
    dc = apply_censoring(ds, 0.05)
    assert dc.n_censored == 1
    lp, se = censored_exact_loglik(dc, params, McConfig())
    assert se == 0.0  # one censored dimension needs no Monte Carlo

    from censvc import dense_cov_matrix

    obs = ~dc.censored
    K = dense_cov_matrix(dc.sites, dc.X, params)
    mean = dc.X @ np.asarray(params.alpha)
    i = int(np.flatnonzero(dc.censored)[0])
    Koo = K[np.ix_(obs, obs)]
    kio = K[i, obs]
    sol = np.linalg.solve(Koo, dc.Z[obs] - mean[obs])
    mu_c = mean[i] + kio @ sol
    var_c = K[i, i] - kio @ np.linalg.solve(Koo, kio)
    want = (stats.multivariate_normal(mean=mean[obs], cov=Koo)
            .logpdf(dc.Z[obs])
            + stats.norm.logcdf((dc.L - mu_c) / math.sqrt(var_c)))
    np.testing.assert_allclose(lp, want, rtol=1e-9)


def test_exact_loglik_two_censored_vs_quadrature():
    from scipy import integrate

    rng = np.random.default_rng(23)
    params = random_params(rng, 1)
    ds, _ = simulate_svc_dataset(10, 1, params, seed=29)
    dc = apply_censoring(ds, 0.15)
    assert dc.n_censored == 2
    lp, se = censored_exact_loglik(
        dc, params, McConfig(samples=8192, randomizations=12, seed=31))

    from censvc import dense_cov_matrix

    obs = ~dc.censored
    cen = dc.censored
    K = dense_cov_matrix(dc.sites, dc.X, params)
    mean = dc.X @ np.asarray(params.alpha)
    Koo = K[np.ix_(obs, obs)]
    sol = np.linalg.solve(Koo, dc.Z[obs] - mean[obs])
    mu_c = mean[cen] + K[np.ix_(cen, obs)] @ sol
    Kc = (K[np.ix_(cen, cen)]
          - K[np.ix_(cen, obs)] @ np.linalg.solve(Koo, K[np.ix_(obs, cen)]))
    log_obs = stats.multivariate_normal(mean=mean[obs],
                                        cov=Koo).logpdf(dc.Z[obs])
    dist_c = stats.multivariate_normal(mean=mu_c, cov=Kc)

    def integrand(y, x):
        return dist_c.pdf([x, y])

    lo = mu_c - 14.0 * np.sqrt(np.diag(Kc))
    p, _ = integrate.dblquad(integrand, lo[0], dc.L, lo[1], dc.L,
                             epsabs=1e-13, epsrel=1e-10)
    want = log_obs + math.log(p)
    assert abs(lp - want) < max(4 * se, 1e-6 * abs(want))


def test_exact_loglik_censored_dimension_limit():
    params = SvcParams(alpha=[0.0], sigma2=[1.0], phi=[5.0], tau2=0.1)
    ds, _ = simulate_svc_dataset(250, 1, params, seed=37)
    dc = apply_censoring(ds, 0.9)
    assert dc.n_censored > 200
    with pytest.raises(DataError):
        censored_exact_loglik(dc, params, McConfig())


def test_relative_error_contract():
    np.testing.assert_allclose(relative_likelihood_error(-101.0, -100.0), 1.0)
    with pytest.raises(DataError):
        relative_likelihood_error(0.0, 0.0)
