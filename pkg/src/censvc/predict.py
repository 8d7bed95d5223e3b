"""Posterior predictive means and conditional simulations at new sites.

Two prediction styles share the machinery here. The default treats
prediction sites as conditionally independent given the observations (each
site kriges from its M nearest observed neighbors), which parallelizes and
chunks freely. joint=True orders prediction sites after the observations
and lets each condition on earlier predictions as well, giving draws from
the joint Vecchia law via sequential propagation.

The latent-free path is the two-stage procedure: censored responses are
first replaced by truncated-normal (Mills-ratio) conditional means computed
through the response covariance, then the augmented response vector drives
ordinary latent-surface kriging.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels
from .covariance import cross_cov_matrix, dense_cov_matrix, svc_cross_cov
from .data import DataError, SvcParams, _fmt
from .oracle import truncated_normal_mean
from .ordering import conditioning_sets, prediction_order, response_neighbor_sets
from .vecchia import build_factor

_CHUNK = 2000


@dataclass(frozen=True)
class PredictiveDraws:
    """Conditional simulations on a grid plus their per-site summaries."""

    sites: np.ndarray
    X: np.ndarray
    draws: np.ndarray  # (n_draws, n_sites)
    mean: np.ndarray
    sd: np.ndarray


def _summarize(sites, X, draws):
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    mean = draws.mean(axis=0)
    sd = draws.std(axis=0, ddof=1) if draws.shape[0] > 1 else np.zeros(draws.shape[1])
    return PredictiveDraws(sites=np.asarray(sites, float), X=np.asarray(X, float),
                           draws=draws, mean=mean, sd=sd)


# ---------------------------------------------------------------------------
# dense path


def predict_full_latent(w_o_draw, params_draw, obs, pred_sites, pred_X,
                        rng=None, n_draws=1):
    """Dense latent-GP conditioning: exact mean, variance, and joint draws.

    Returns (mu_p, draw); draw has shape (n_P,) for n_draws=1, else
    (n_draws, n_P). The latent covariance carries no nugget, so predictions
    interpolate w_o exactly at observed sites.
    """
    pred_sites = np.asarray(pred_sites, float)
    pred_X = np.asarray(pred_X, float)
    n_o, n_p = obs.n, pred_sites.shape[0]
    if n_o + n_p > 2000:
        raise DataError("dense prediction limited to n_O + n_P <= 2000")
    w_o = np.asarray(w_o_draw, float)
    K_oo = dense_cov_matrix(obs.sites, obs.X, params_draw, include_nugget=False)
    K_po = cross_cov_matrix(pred_sites, pred_X, obs.sites, obs.X, params_draw)
    K_pp = cross_cov_matrix(pred_sites, pred_X, pred_sites, pred_X, params_draw)
    try:
        c, low = cho_factor(K_oo, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DataError("observed latent covariance not positive definite: %s" % exc)
    r = w_o - obs.X @ params_draw.alpha
    mu_p = pred_X @ params_draw.alpha + K_po @ cho_solve((c, low), r)
    cond = K_pp - K_po @ cho_solve((c, low), K_po.T)
    cond = 0.5 * (cond + cond.T)
    try:
        Lc = np.linalg.cholesky(cond + 1e-12 * np.trace(cond) / n_p * np.eye(n_p))
    except np.linalg.LinAlgError as exc:
        raise DataError("conditional covariance not positive definite: %s" % exc)
    rng = np.random.default_rng(0) if rng is None else rng
    eps = rng.standard_normal((n_draws, n_p))
    draws = mu_p + eps @ Lc.T
    return mu_p, (draws[0] if n_draws == 1 else draws)


# ---------------------------------------------------------------------------
# chunked independent kriging (shared by the Vecchia-path predictors)


def _nearest_obs(obs_sites, pred_chunk, M):
    d2 = ((pred_chunk[:, None, :] - obs_sites[None, :, :]) ** 2).sum(axis=2)
    take = min(M, obs_sites.shape[0])
    return np.argsort(d2, axis=1, kind="stable")[:, :take]


def _chunk_bf(obs_sites, obs_X, params, diag_add_obs, pred_chunk, pred_X_chunk,
              M, nbr=None):
    """Kriging weights/variances for one chunk of prediction sites.

    diag_add_obs is a length-n_o vector added to the self-variance of each
    observed row (nugget placement); prediction rows get none. Returns
    (nbr, bpad, fvar) with nbr the (nc, M') neighbor indices.
    """
    nc = pred_chunk.shape[0]
    if nbr is None:
        nbr = _nearest_obs(obs_sites, pred_chunk, M)
    Mn = nbr.shape[1]
    loc_sites = np.concatenate([obs_sites[nbr], pred_chunk[:, None, :]], axis=1)
    loc_X = np.concatenate([obs_X[nbr], pred_X_chunk[:, None, :]], axis=1)
    diff = loc_sites[:, :, None, :] - loc_sites[:, None, :, :]
    D = np.sqrt((diff ** 2).sum(axis=3))
    S = np.zeros_like(D)
    for k in range(params.p):
        S += (params.sigma2[k] * np.exp(-params.phi[k] * D)
              * loc_X[:, :, k][:, :, None] * loc_X[:, :, k][:, None, :])
    add = np.concatenate([np.asarray(diag_add_obs, float)[nbr],
                          np.zeros((nc, 1))], axis=1)
    rows = np.arange(Mn + 1)
    S[:, rows, rows] += add
    ksz = np.full(nc, Mn + 1, dtype=np.int64)
    bpad = np.zeros((nc, Mn))
    fvar = np.empty(nc)
    _kernels.factor_bf(np.ascontiguousarray(S), 0.0, ksz, bpad, fvar)
    if not np.all(np.isfinite(fvar)) or np.any(fvar <= 0):
        raise DataError("prediction conditional variance not positive")
    return nbr, bpad, fvar


def _independent_predict(obs_sites, obs_X, values, params, diag_add_obs,
                         pred_sites, pred_X, M, rng, n_draws):
    """Mean/draws at prediction sites, each conditioned on observations only."""
    n_p = pred_sites.shape[0]
    mu = np.empty(n_p)
    fv = np.empty(n_p)
    resid = values - obs_X @ params.alpha
    for lo in range(0, n_p, _CHUNK):
        hi = min(lo + _CHUNK, n_p)
        nbr, bpad, fvar = _chunk_bf(obs_sites, obs_X, params, diag_add_obs,
                                    pred_sites[lo:hi], pred_X[lo:hi], M)
        mu[lo:hi] = (pred_X[lo:hi] @ params.alpha
                     + np.einsum("ij,ij->i", bpad, resid[nbr]))
        fv[lo:hi] = fvar
    eps = rng.standard_normal((n_draws, n_p))
    draws = mu + np.sqrt(fv) * eps
    return mu, fv, draws


def _joint_predict(obs_sites, obs_X, values, params, diag_add_obs,
                   pred_sites, pred_X, M, rng, n_draws):
    """Sequential Vecchia prediction where later sites see earlier draws."""
    n_o = obs_sites.shape[0]
    n_p = pred_sites.shape[0]
    sites = np.vstack([obs_sites, pred_sites])
    X = np.vstack([obs_X, pred_X])
    perm = prediction_order(obs_sites, pred_sites)
    nbr = conditioning_sets(sites, perm, M)
    tensors_idx = [perm[s] for s in nbr.sets]  # original indices per position
    mean_all = X @ params.alpha
    diag_add = np.concatenate([np.asarray(diag_add_obs, float), np.zeros(n_p)])
    # local factors per prediction position
    params_ = params
    mu_val = np.concatenate([np.asarray(values, float), np.zeros(n_p)])
    draw_val = np.tile(mu_val, (n_draws, 1))
    mu_out = np.empty(n_p)
    dr_out = np.empty((n_draws, n_p))
    eps = rng.standard_normal((n_draws, n_p))
    col = 0
    for pos in range(n_o, n_o + n_p):
        orig = perm[pos]
        ids = tensors_idx[pos]
        m = ids.shape[0]
        C = np.empty((m + 1, m + 1))
        allids = np.append(ids, orig)
        for a in range(m + 1):
            for b in range(a + 1):
                v = svc_cross_cov(sites[allids[a]], X[allids[a]],
                                  sites[allids[b]], X[allids[b]], params_)
                C[a, b] = C[b, a] = v
            C[a, a] += diag_add[allids[a]]
        b_w = np.linalg.solve(C[:m, :m], C[:m, m]) if m else np.empty(0)
        fv = C[m, m] - (C[:m, m] @ b_w if m else 0.0)
        if fv <= 0:
            raise DataError("prediction conditional variance not positive")
        mu_out[col] = mean_all[orig] + (b_w @ (mu_val[ids] - mean_all[ids]) if m else 0.0)
        mu_val[orig] = mu_out[col]
        step = (draw_val[:, ids] - mean_all[ids]) @ b_w if m else 0.0
        dr_out[:, col] = mean_all[orig] + step + math.sqrt(fv) * eps[:, col]
        draw_val[:, orig] = dr_out[:, col]
        col += 1
    # back to the caller's prediction-row order
    inv = np.empty(n_p, dtype=np.int64)
    inv[perm[n_o:] - n_o] = np.arange(n_p)
    return mu_out[inv], dr_out[:, inv]


def predict_latent_vecchia(w_o_draw, params_draw, obs, pred_sites, pred_X, M,
                           rng=None, n_draws=1, joint=False):
    """Vecchia kriging of the latent surface from a latent-field draw.

    Default: each prediction site conditions on its M nearest observations
    (independent given w_o). joint=True instead orders predictions after
    the observations and propagates draws sequentially, sampling the joint
    Vecchia law over the prediction block.
    """
    pred_sites = np.asarray(pred_sites, float)
    pred_X = np.asarray(pred_X, float)
    w_o = np.asarray(w_o_draw, float)
    rng = np.random.default_rng(0) if rng is None else rng
    zeros = np.zeros(obs.n)
    if joint:
        mu, draws = _joint_predict(obs.sites, obs.X, w_o, params_draw, zeros,
                                   pred_sites, pred_X, M, rng, n_draws)
    else:
        mu, _, draws = _independent_predict(obs.sites, obs.X, w_o, params_draw,
                                            zeros, pred_sites, pred_X, M, rng,
                                            n_draws)
    return mu, (draws[0] if n_draws == 1 else draws)


def mills_adjust(mu_c, var_c, L):
    """Truncated-normal means at censored sites: each output is below L."""
    mu_c = np.asarray(mu_c, float)
    var_c = np.asarray(var_c, float)
    if np.any(var_c <= 0):
        raise DataError("variances must be positive")
    return truncated_normal_mean(mu_c, np.sqrt(var_c), L)


def stage1_adjusted_responses(dataset, params_draw, M, inflate_noise=False):
    """Replace censored responses by Mills-adjusted conditional means.

    Each censored site is kriged through the response covariance (nugget
    included) from its M nearest non-censored predecessors, then pulled
    below the detection limit by the truncated-normal mean. Returns
    (z_tilde, diag_add) where diag_add is the per-row nugget vector for
    Stage 2 (optionally inflated by the Stage-1 conditional variance).
    """
    n = dataset.n
    diag_add = np.full(n, params_draw.tau2)
    if dataset.n_censored == 0:
        return dataset.Z.copy(), diag_add
    nbr = response_neighbor_sets(dataset, M)
    fac = build_factor(dataset.sites, dataset.X, params_draw, nbr,
                       include_nugget=True)
    mean = dataset.X @ params_draw.alpha
    resid = dataset.Z - mean
    cen_pos = np.nonzero(dataset.censored[nbr.perm])[0]
    mu_c = np.empty(cen_pos.shape[0])
    var_c = np.empty(cen_pos.shape[0])
    for t, pos in enumerate(cen_pos):
        orig = nbr.perm[pos]
        ids = nbr.perm[nbr.sets[pos]]
        mu_c[t] = mean[orig] + (fac.weights[pos] @ resid[ids]
                                if ids.size else 0.0)
        var_c[t] = fac.cond_var[pos]
    mu_star = mills_adjust(mu_c, var_c, dataset.L)
    z_tilde = dataset.Z.copy()
    orig_cen = nbr.perm[cen_pos]
    z_tilde[orig_cen] = mu_star
    if inflate_noise:
        diag_add[orig_cen] += var_c
    return z_tilde, diag_add


def predict_latent_free(dataset, params_draw, pred_sites, pred_X, M,
                        rng=None, n_draws=1, joint=False, inflate_noise=False):
    """Two-stage latent-free prediction of the latent surface.

    Stage 1 adjusts censored responses with the inverse Mills ratio; Stage 2
    kriges the latent (noise-free) surface from the augmented responses,
    keeping the nugget on observed/augmented rows only.
    """
    pred_sites = np.asarray(pred_sites, float)
    pred_X = np.asarray(pred_X, float)
    rng = np.random.default_rng(0) if rng is None else rng
    z_tilde, diag_add = stage1_adjusted_responses(dataset, params_draw, M,
                                                  inflate_noise=inflate_noise)
    if joint:
        mu, draws = _joint_predict(dataset.sites, dataset.X, z_tilde,
                                   params_draw, diag_add, pred_sites, pred_X,
                                   M, rng, n_draws)
    else:
        mu, _, draws = _independent_predict(dataset.sites, dataset.X, z_tilde,
                                            params_draw, diag_add, pred_sites,
                                            pred_X, M, rng, n_draws)
    return mu, (draws[0] if n_draws == 1 else draws)


# ---------------------------------------------------------------------------
# posterior predictive aggregation


def _thinned_rows(samples, thin):
    rows = []
    for c in samples.chains:
        kept = c.draws.shape[0]
        for r in range(0, kept, thin):
            rows.append((c, r))
    return rows


def posterior_predictive(samples, dataset, grid_sites, grid_X, model_kind, M,
                         thin=1, seed=0, joint=False, inflate_noise=False):
    """One conditional simulation per retained posterior draw at every grid site."""
    grid_sites = np.asarray(grid_sites, float)
    grid_X = np.asarray(grid_X, float)
    if grid_X.ndim != 2 or grid_X.shape[0] != grid_sites.shape[0] \
            or grid_X.shape[1] != dataset.p:
        raise DataError("grid covariates must be (n_grid, p)")
    if model_kind != samples.model:
        raise DataError("model kind %r does not match samples from %r"
                        % (model_kind, samples.model))
    p = dataset.p
    latent_kind = model_kind in ("full-latent", "latent-vecchia")
    if latent_kind and any(c.latent is None for c in samples.chains):
        raise DataError("latent draws absent from samples of a latent model kind")
    rows = _thinned_rows(samples, max(1, thin))
    if not rows:
        raise DataError("no posterior draws to predict from")
    rng = np.random.default_rng([int(seed), 7])
    n_g = grid_sites.shape[0]
    out = np.empty((len(rows), n_g))
    for t, (chain, r) in enumerate(rows):
        vec = chain.draws[r]
        params = SvcParams(alpha=vec[:p], sigma2=vec[p:2 * p],
                           phi=vec[2 * p:3 * p], tau2=vec[3 * p])
        if model_kind == "full-latent":
            _, draw = predict_full_latent(chain.latent[r], params, dataset,
                                          grid_sites, grid_X, rng=rng)
        elif model_kind == "latent-vecchia":
            _, draw = predict_latent_vecchia(chain.latent[r], params, dataset,
                                             grid_sites, grid_X, M, rng=rng,
                                             joint=joint)
        else:
            _, draw = predict_latent_free(dataset, params, grid_sites, grid_X,
                                          M, rng=rng, joint=joint,
                                          inflate_noise=inflate_noise)
        out[t] = draw
    return _summarize(grid_sites, grid_X, out)


# ---------------------------------------------------------------------------
# file formats


def load_grid(path):
    """Read a prediction grid CSV with columns x,y,x1..xp."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["x", "y"]:
            raise DataError("%s: expected columns x,y,x1..xp" % path)
        p = len(header) - 2
        if p < 1 or header[2:] != ["x%d" % (j + 1) for j in range(p)]:
            raise DataError("%s: covariate columns must be named x1..xp" % path)
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2 + p:
                raise DataError("%s line %d: expected %d fields"
                                % (path, lineno, 2 + p))
            rows.append([float(v) for v in parts])
    arr = np.asarray(rows, float)
    if arr.size == 0:
        raise DataError("%s: no grid rows" % path)
    return arr[:, :2], arr[:, 2:]


def save_grid(path, sites, X):
    sites = np.asarray(sites, float)
    X = np.asarray(X, float)
    cols = ["x", "y"] + ["x%d" % (j + 1) for j in range(X.shape[1])]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(sites.shape[0]):
            fh.write(",".join([_fmt(sites[i, 0]), _fmt(sites[i, 1])]
                              + [_fmt(v) for v in X[i]]) + "\n")


def save_prediction(path, result):
    """Write the per-site posterior predictive summary: x,y,mean,sd."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("x,y,mean,sd\n")
        for i in range(result.sites.shape[0]):
            fh.write(",".join([_fmt(result.sites[i, 0]), _fmt(result.sites[i, 1]),
                               _fmt(result.mean[i]), _fmt(result.sd[i])]) + "\n")


def load_prediction(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "x,y,mean,sd":
            raise DataError("%s: expected header x,y,mean,sd" % path)
        rows = [[float(v) for v in line.strip().split(",")]
                for line in fh if line.strip()]
    arr = np.asarray(rows, float)
    return arr[:, :2], arr[:, 2], arr[:, 3]


def save_draw_matrix(path_bin, path_json, draws):
    """Full draw matrix as little-endian float64, row-major, with sidecar."""
    arr = np.ascontiguousarray(np.asarray(draws, float), dtype="<f8")
    arr.tofile(path_bin)
    with open(path_json, "w", encoding="utf-8") as fh:
        json.dump({"shape": list(arr.shape), "dtype": "<f8", "order": "C"},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_draw_matrix(path_bin, path_json):
    with open(path_json, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    return np.fromfile(path_bin, dtype=meta["dtype"]).reshape(meta["shape"])
