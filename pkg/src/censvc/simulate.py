"""Synthetic SVC data generation and left-censoring."""

from __future__ import annotations

import numpy as np

from .covariance import exp_cov
from .data import DataError, Dataset, validate_params, _fmt


def simulate_svc_dataset(n, p, params, seed=0, intercept=True,
                         covariates="normal"):
    """Draw a dataset from the SVC model on the unit square.

    Sites are uniform on [0,1]^2; covariate column 1 is an all-ones
    intercept when requested, the rest are standard normal (or uniform on
    [-1,1] with covariates="uniform"). Each coefficient field is
    alpha_j + eta_j(s) with eta_j a mean-zero GP drawn by dense Cholesky of
    the exponential kernel; the response adds N(0, tau2) noise.

    Returns (dataset, beta) where beta is the (n, p) matrix of true
    coefficient-field values used for evaluation.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    validate_params(params, p)
    if covariates not in ("normal", "uniform"):
        raise DataError("covariates must be 'normal' or 'uniform'")
    rng = np.random.default_rng([int(seed), 0x51735])
    sites = rng.uniform(0.0, 1.0, size=(n, 2))
    X = np.empty((n, p))
    k0 = 0
    if intercept:
        X[:, 0] = 1.0
        k0 = 1
    if covariates == "normal":
        X[:, k0:] = rng.standard_normal((n, p - k0))
    else:
        X[:, k0:] = rng.uniform(-1.0, 1.0, size=(n, p - k0))
    diff = sites[:, None, :] - sites[None, :, :]
    d = np.sqrt((diff ** 2).sum(axis=2))
    beta = np.empty((n, p))
    for j in range(p):
        K = exp_cov(d, params.sigma2[j], params.phi[j])
        K[np.diag_indices(n)] += 1e-12 * params.sigma2[j]  # guard against rank loss at tight ranges
        try:
            Lc = np.linalg.cholesky(K)
        except np.linalg.LinAlgError as exc:
            raise DataError("kernel Cholesky failed for component %d: %s" % (j, exc))
        beta[:, j] = params.alpha[j] + Lc @ rng.standard_normal(n)
    Z = (X * beta).sum(axis=1) + np.sqrt(params.tau2) * rng.standard_normal(n)
    ds = Dataset(sites=sites, X=X, Z=Z, censored=np.zeros(n, dtype=bool),
                 L=float(Z.min()) - 1.0)
    return ds, beta


def apply_censoring(dataset, level):
    """Censor the lowest `level` fraction of responses at their quantile.

    L is the empirical level-quantile of Z (linear interpolation); rows with
    Z <= L are flagged and their values replaced by L. level = 0 leaves the
    data untouched apart from the sentinel limit min(Z) - 1.
    """
    if not (0.0 <= level < 1.0):
        raise DataError("censoring level must lie in [0, 1)")
    if dataset.n_censored:
        raise DataError("apply_censoring expects an uncensored dataset")
    if level == 0.0:
        return Dataset(sites=dataset.sites, X=dataset.X, Z=dataset.Z,
                       censored=np.zeros(dataset.n, dtype=bool),
                       L=float(dataset.Z.min()) - 1.0)
    L = float(np.quantile(dataset.Z, level))
    mask = dataset.Z <= L
    Z = dataset.Z.copy()
    Z[mask] = L
    return Dataset(sites=dataset.sites, X=dataset.X, Z=Z, censored=mask, L=L)


def save_truth(beta, sites, path):
    """Write the true coefficient fields next to a simulated dataset."""
    beta = np.asarray(beta, float)
    p = beta.shape[1]
    cols = ["x", "y"] + ["beta%d" % (j + 1) for j in range(p)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(beta.shape[0]):
            row = [_fmt(sites[i, 0]), _fmt(sites[i, 1])]
            row += [_fmt(v) for v in beta[i]]
            fh.write(",".join(row) + "\n")


def load_truth(path):
    """Read a truth CSV written by save_truth; returns (sites, beta)."""
    import csv

    with open(path, "r", encoding="utf-8") as fh:
        rdr = csv.reader(fh)
        header = next(rdr)
        if header[:2] != ["x", "y"]:
            raise DataError("%s: expected columns x,y,beta1..betap" % path)
        rows = [[float(v) for v in row] for row in rdr if row]
    arr = np.asarray(rows, float)
    return arr[:, :2], arr[:, 2:]
