"""Exponential kernel and the SVC covariance of responses and latent fields.

The response covariance is W Sigma_eta W^T + tau^2 I, where W spreads the
covariate rows across the p coefficient fields; entries are computed
directly as sums over covariates rather than materializing W.
"""

from __future__ import annotations

import numpy as np

from .data import DataError


def exp_cov(d, sigma2, phi):
    """Exponential kernel sigma2 * exp(-phi * d) for d >= 0."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise DataError("distance must be non-negative")
    return sigma2 * np.exp(-phi * d)


def svc_cross_cov(site_i, x_i, site_j, x_j, params, include_nugget=False):
    """Covariance between responses at two sites with covariate rows x_i, x_j.

    Returns sum_k x_i[k] x_j[k] sigma2_k exp(-phi_k d) plus tau2 when
    include_nugget is set and the two sites coincide exactly. Callers
    assembling a matrix should pass include_nugget only for diagonal
    entries, so duplicated sites do not pick up off-diagonal nugget mass.
    """
    x_i = np.asarray(x_i, dtype=float)
    x_j = np.asarray(x_j, dtype=float)
    if x_i.shape != x_j.shape or x_i.shape != (params.p,):
        raise DataError("covariate rows must both have length p")
    si = np.asarray(site_i, dtype=float)
    sj = np.asarray(site_j, dtype=float)
    d = float(np.sqrt(((si - sj) ** 2).sum()))
    val = float(np.sum(x_i * x_j * params.sigma2 * np.exp(-params.phi * d)))
    if include_nugget and d == 0.0:
        val += params.tau2
    return val


def dense_cov_matrix(sites, X, params, include_nugget=True):
    """Full n-by-n SVC covariance; symmetric by explicit mirroring.

    include_nugget=False gives the latent-field covariance W Sigma_eta W^T.
    """
    sites = np.asarray(sites, dtype=float)
    X = np.asarray(X, dtype=float)
    n = sites.shape[0]
    if X.shape[0] != n or X.shape[1] != params.p:
        raise DataError("X must be (n, p) with p matching params")
    diff = sites[:, None, :] - sites[None, :, :]
    d = np.sqrt((diff ** 2).sum(axis=2))
    C = np.zeros((n, n))
    for k in range(params.p):
        C += np.outer(X[:, k], X[:, k]) * (params.sigma2[k] * np.exp(-params.phi[k] * d))
    C = np.triu(C) + np.triu(C, 1).T
    if include_nugget:
        C[np.diag_indices(n)] += params.tau2
    return C


def cross_cov_matrix(sites_a, X_a, sites_b, X_b, params):
    """Rectangular latent-field covariance block between two site lists (no nugget)."""
    sites_a = np.asarray(sites_a, dtype=float)
    sites_b = np.asarray(sites_b, dtype=float)
    X_a = np.asarray(X_a, dtype=float)
    X_b = np.asarray(X_b, dtype=float)
    diff = sites_a[:, None, :] - sites_b[None, :, :]
    d = np.sqrt((diff ** 2).sum(axis=2))
    C = np.zeros((sites_a.shape[0], sites_b.shape[0]))
    for k in range(params.p):
        C += np.outer(X_a[:, k], X_b[:, k]) * (params.sigma2[k] * np.exp(-params.phi[k] * d))
    return C
