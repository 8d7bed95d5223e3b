"""Exact reference computations: dense Gaussian likelihood, censored
likelihood via randomized quasi-Monte-Carlo integration of the multivariate
normal CDF, and truncated-normal utilities.

The CDF integrator follows the separation-of-variables construction: after
a variance-reducing variable reordering, the orthant probability becomes an
integral over the unit cube that scrambled low-discrepancy points estimate
with near-O(1/N) error. Randomized scrambles give a standard error on the
log scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import log_ndtr, logsumexp, ndtri_exp
from scipy.stats import qmc

from .covariance import dense_cov_matrix
from .data import DataError

_LN2PI = math.log(2.0 * math.pi)
_CENSORED_SCALE_LIMIT = 200


@dataclass(frozen=True)
class McConfig:
    """Tuning knobs of the randomized QMC integrator."""

    samples: int = 4096
    randomizations: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.samples < 128:
            raise DataError("McConfig.samples must be >= 128")
        if self.randomizations < 8:
            raise DataError("McConfig.randomizations must be >= 8")


def mvn_logpdf(z, mean, cov):
    """Dense multivariate normal log-density via Cholesky."""
    z = np.asarray(z, float)
    mean = np.asarray(mean, float)
    n = z.shape[0]
    try:
        c, low = cho_factor(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DataError("covariance not positive definite: %s" % exc)
    alpha = cho_solve((c, low), z - mean)
    logdet = 2.0 * math.fsum(np.log(np.diag(c)).tolist())
    return -0.5 * (n * _LN2PI + logdet + float((z - mean) @ alpha))


def dense_gaussian_loglik(dataset, params):
    """Exact log-density of an uncensored dataset under the SVC model."""
    if dataset.n_censored:
        raise DataError("dense_gaussian_loglik requires an uncensored dataset "
                        "(restrict to the observed subvector first)")
    C = dense_cov_matrix(dataset.sites, dataset.X, params, include_nugget=True)
    return mvn_logpdf(dataset.Z, dataset.X @ params.alpha, C)


def _reorder_and_chol(cov, upper):
    """Genz-Bretz variable ordering integrated with a running Cholesky.

    At step j the candidate with the smallest conditional probability
    Phi(m_i) is moved to position j; the expectation of its truncated
    standardized value feeds later conditional means.
    """
    C = np.array(cov, dtype=float)
    b = np.array(upper, dtype=float)
    d = b.shape[0]
    L = np.zeros((d, d))
    order = np.arange(d)
    y = np.zeros(d)
    for j in range(d):
        best, best_logphi, best_m, best_s = -1, np.inf, 0.0, 1.0
        for i in range(j, d):
            s = C[i, i] - L[i, :j] @ L[i, :j]
            s = max(s, 1e-300)
            m = (b[i] - L[i, :j] @ y[:j]) / math.sqrt(s)
            lp = log_ndtr(m)
            if lp < best_logphi:
                best, best_logphi, best_m, best_s = i, lp, m, s
        if best != j:
            C[[j, best], :] = C[[best, j], :]
            C[:, [j, best]] = C[:, [best, j]]
            b[[j, best]] = b[[best, j]]
            L[[j, best], :j] = L[[best, j], :j]
            order[[j, best]] = order[[best, j]]
        L[j, j] = math.sqrt(best_s)
        for i in range(j + 1, d):
            L[i, j] = (C[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
        # E[Y | Y <= m] for a standard normal: -phi(m)/Phi(m)
        y[j] = -math.exp(-0.5 * best_m * best_m - 0.5 * _LN2PI - best_logphi)
    return L, b


def mvn_logcdf_qmc(upper, cov, mc):
    """log P(X <= upper) for X ~ N(0, cov), with a log-scale standard error.

    Returns (log_p, se). Exact (se = 0) in one dimension.
    """
    upper = np.atleast_1d(np.asarray(upper, float))
    d = upper.shape[0]
    if d == 0:
        return 0.0, 0.0
    if d == 1:
        var = float(np.asarray(cov).reshape(-1)[0])
        return float(log_ndtr(upper[0] / math.sqrt(var))), 0.0
    L, b = _reorder_and_chol(cov, upper)
    ests = np.empty(mc.randomizations)
    tiny = 2.0 ** -64
    for rep in range(mc.randomizations):
        rng_seed = np.random.SeedSequence([int(mc.seed), rep])
        eng = qmc.Sobol(d - 1, scramble=True, seed=np.random.default_rng(rng_seed))
        w = np.clip(eng.random(mc.samples), tiny, 1.0 - tiny)
        npts = w.shape[0]
        logphi = np.full(npts, log_ndtr(b[0] / L[0, 0]))
        acc = logphi.copy()
        ys = np.empty((npts, d - 1))
        for j in range(1, d):
            ys[:, j - 1] = ndtri_exp(np.log(w[:, j - 1]) + logphi)
            t = ys[:, :j] @ L[j, :j]
            logphi = log_ndtr((b[j] - t) / L[j, j])
            acc += logphi
        ests[rep] = logsumexp(acc) - math.log(npts)
    est = float(np.mean(ests))
    se = float(np.std(ests, ddof=1) / math.sqrt(mc.randomizations))
    return est, se


def censored_exact_loglik(dataset, params, mc):
    """Exact censored log-likelihood: log p(Z_o) + log P(Z_c <= L | Z_o).

    The conditional CDF term is estimated by randomized QMC; the returned
    standard error is zero when the censored block has dimension <= 1.
    """
    cen = dataset.censored
    n_c = int(cen.sum())
    if n_c > _CENSORED_SCALE_LIMIT:
        raise DataError("censored dimension %d exceeds the oracle limit %d"
                        % (n_c, _CENSORED_SCALE_LIMIT))
    C = dense_cov_matrix(dataset.sites, dataset.X, params, include_nugget=True)
    mean = dataset.X @ params.alpha
    o = ~cen
    if n_c == 0:
        return mvn_logpdf(dataset.Z, mean, C), 0.0
    if o.sum() == 0:
        mu_c, S_c = mean, C
        log_obs = 0.0
    else:
        C_oo = C[np.ix_(o, o)]
        C_co = C[np.ix_(cen, o)]
        c, low = cho_factor(C_oo, lower=True)
        r_o = dataset.Z[o] - mean[o]
        mu_c = mean[cen] + C_co @ cho_solve((c, low), r_o)
        S_c = C[np.ix_(cen, cen)] - C_co @ cho_solve((c, low), C_co.T)
        S_c = 0.5 * (S_c + S_c.T)
        log_obs = mvn_logpdf(dataset.Z[o], mean[o],  C_oo)
    upper = dataset.L - mu_c
    if n_c == 1:
        return log_obs + float(log_ndtr(upper[0] / math.sqrt(S_c.reshape(-1)[0]))), 0.0
    log_cdf, se = mvn_logcdf_qmc(upper, S_c, mc)
    return log_obs + log_cdf, se


def truncated_normal_mean(mu, sigma, L):
    """E[Z | Z <= L] for Z ~ N(mu, sigma^2): mu - sigma * phi(a)/Phi(a).

    Stable for deep truncation; the result is strictly below both mu and L.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise DataError("sigma must be > 0")
    L_arr = np.asarray(L, dtype=float)
    a = (L_arr - mu) / sigma
    lam = np.exp(-0.5 * a * a - 0.5 * _LN2PI - log_ndtr(a))
    out = mu - sigma * lam
    strict = np.nextafter(np.minimum(mu, L_arr), -np.inf)
    out = np.minimum(out, strict)
    if out.ndim == 0:
        return float(out)
    return out


def relative_likelihood_error(approx_loglik, exact_loglik):
    """|approx - exact| / |exact| as a percentage."""
    if abs(exact_loglik) < 1e-30:
        raise DataError("reference log-likelihood too close to zero")
    return abs(approx_loglik - exact_loglik) / abs(exact_loglik) * 100.0
