"""Sparse Vecchia factors and the Gaussian / censored / latent log-likelihoods.

The heavy lifting is done on padded per-position tensors (see _kernels):
distance and covariate-outer-product tensors are built once per
(neighbor-structure, data) pair, per-covariate kernel tensors are cached,
and parameter proposals only recompute what they change. Log-terms are
summed with math.fsum in position order, so a likelihood value is
bit-stable no matter how the per-position work is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse
from scipy.special import log_ndtr

from . import _kernels
from .data import DataError
from .ordering import NeighborSets, response_neighbor_sets

_LN2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PaddedTensors:
    """Per-position gather indices and geometry/covariate tensors.

    idx[i, a] is the original row index in slot a of position i (neighbors
    first, self in slot ksz[i]-1, padding repeats self and is never read).
    D holds pairwise distances among the slot rows; O[k] the outer products
    of covariate column k.
    """

    idx: np.ndarray
    ksz: np.ndarray
    D: np.ndarray
    O: tuple

    @property
    def n(self):
        return self.idx.shape[0]


def padded_tensors(sites, X, nbr):
    sites = np.asarray(sites, dtype=float)
    X = np.asarray(X, dtype=float)
    n = nbr.n
    ksz = np.array([len(s) + 1 for s in nbr.sets], dtype=np.int64)
    Mm = int(ksz.max())
    idx = np.empty((n, Mm), dtype=np.int64)
    for i in range(n):
        own = nbr.perm[i]
        k = ksz[i]
        idx[i, : k - 1] = nbr.perm[nbr.sets[i]]
        idx[i, k - 1 :] = own
    pts = sites[idx]  # (n, Mm, 2)
    diff = pts[:, :, None, :] - pts[:, None, :, :]
    D = np.sqrt((diff ** 2).sum(axis=3))
    p = X.shape[1]
    O = tuple(X[idx, k][:, :, None] * X[idx, k][:, None, :] for k in range(p))
    return PaddedTensors(idx=idx, ksz=ksz, D=np.ascontiguousarray(D),
                         O=tuple(np.ascontiguousarray(o) for o in O))


def component_tensor(tensors, k, sigma2_k, phi_k):
    """Kernel tensor of one coefficient field: sigma2_k exp(-phi_k D) * O_k."""
    return sigma2_k * np.exp(-phi_k * tensors.D) * tensors.O[k]


@dataclass(frozen=True)
class VecchiaFactor:
    """Conditional-regression weights b_i and variances F_ii per position."""

    neighbor_sets: NeighborSets
    weights: list
    cond_var: np.ndarray
    include_nugget: bool
    _idx: np.ndarray
    _ksz: np.ndarray
    _bpad: np.ndarray

    @property
    def n(self):
        return self.cond_var.shape[0]

    @property
    def perm(self):
        return self.neighbor_sets.perm


def build_factor(sites, X, params, neighbor_sets, include_nugget=True):
    """Vecchia factor of the SVC covariance restricted to the neighbor sets.

    For each position i with conditioning set v: b_i = C_vv^{-1} C_vi and
    F_ii = C_ii - C_iv b_i, where C is svc_cross_cov over {v, i} (nugget on
    the diagonal when include_nugget). No solve exceeds M x M.
    """
    if not (np.all(np.isfinite(params.sigma2)) and np.all(np.isfinite(params.phi))
            and np.isfinite(params.tau2)):
        raise DataError("non-finite covariance parameters")
    tensors = padded_tensors(sites, X, neighbor_sets)
    S = np.zeros_like(tensors.D)
    for k in range(len(tensors.O)):
        S += component_tensor(tensors, k, params.sigma2[k], params.phi[k])
    tau2 = params.tau2 if include_nugget else 0.0
    n, Mm = tensors.idx.shape
    bpad = np.zeros((n, max(Mm - 1, 1)))
    fvar = np.empty(n)
    _kernels.factor_bf(S, tau2, tensors.ksz, bpad, fvar)
    if not np.all(np.isfinite(fvar)) or np.any(fvar <= 0):
        raise DataError("singular neighbor covariance (duplicated sites with tau2=0?)")
    weights = [bpad[i, : tensors.ksz[i] - 1].copy() for i in range(n)]
    return VecchiaFactor(neighbor_sets=neighbor_sets, weights=weights,
                         cond_var=fvar, include_nugget=include_nugget,
                         _idx=tensors.idx, _ksz=tensors.ksz, _bpad=bpad)


def _conditional_residuals(factor, values, mean):
    """e_i = (value - mean)_i - b_i . (value - mean)_neighbors, per position."""
    r = np.asarray(values, dtype=float) - np.asarray(mean, dtype=float)
    rp = r[factor._idx]  # (n, Mm)
    n, Mm = rp.shape
    if Mm > 1:
        proj = np.einsum("ij,ij->i", factor._bpad[:, : Mm - 1], rp[:, : Mm - 1])
    else:
        proj = np.zeros(n)
    return rp[np.arange(n), factor._ksz - 1] - proj


def gaussian_vecchia_loglik(factor, Z, mean):
    """Sum of conditional Gaussian log-densities in position order."""
    Z = np.asarray(Z, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if not (np.isfinite(Z).all() and np.isfinite(mean).all()):
        raise DataError("non-finite input to gaussian_vecchia_loglik")
    e = _conditional_residuals(factor, Z, mean)
    F = factor.cond_var
    terms = -0.5 * (_LN2PI + np.log(F) + e * e / F)
    return math.fsum(terms.tolist())


def latent_vecchia_logdensity(factor, w, mean):
    """Vecchia log-density of a latent field; factor must be nugget-free."""
    if factor.include_nugget:
        raise DataError("latent density requires a factor built without nugget")
    return gaussian_vecchia_loglik(factor, w, mean)


def censored_loglik_terms(u, logf, cens_pos):
    """Per-position log-likelihood terms from standardized residuals.

    Observed positions contribute Gaussian log-densities reconstructed from
    (u, log F); censored positions contribute log Phi(u), where u is the
    standardized distance of the detection limit below the conditional mean.
    """
    terms = np.where(cens_pos, log_ndtr(u), -0.5 * (_LN2PI + logf + u * u))
    return terms


def censored_vecchia_loglik(dataset, params, neighbor_sets):
    """Latent-free censored log-likelihood.

    Observed positions get Gaussian conditional densities and censored
    positions get log Phi terms; all conditioning is restricted to
    non-censored rows (enforced here), so no latent values are needed.
    """
    cens_pos = dataset.censored[neighbor_sets.perm]
    for i, s in enumerate(neighbor_sets.sets):
        if s.size and cens_pos[s].any():
            raise DataError(
                "conditioning set of position %d contains a censored row" % i)
    tensors = padded_tensors(dataset.sites, dataset.X, neighbor_sets)
    S = np.zeros_like(tensors.D)
    for k in range(dataset.p):
        S += component_tensor(tensors, k, params.sigma2[k], params.phi[k])
    n, Mm = tensors.idx.shape
    resid = dataset.Z - dataset.X @ params.alpha
    r = np.ascontiguousarray(resid[tensors.idx])
    u = np.empty(n)
    logf = np.empty(n)
    Lout = np.empty((n, Mm, Mm))
    _kernels.factor_eval_all(S, params.tau2, tensors.ksz, r, u, logf, Lout)
    val = math.fsum(censored_loglik_terms(u, logf, cens_pos).tolist())
    if not math.isfinite(val):
        raise DataError("non-finite censored log-likelihood")
    return val


def sparse_U(factor):
    """Upper-triangular U (position order) with U U^T = implied precision."""
    n = factor.n
    root = 1.0 / np.sqrt(factor.cond_var)
    rows, cols, vals = [], [], []
    for i in range(n):
        s = factor.neighbor_sets.sets[i]
        rows.extend(s.tolist())
        cols.extend([i] * s.size)
        vals.extend((-factor.weights[i] * root[i]).tolist())
        rows.append(i)
        cols.append(i)
        vals.append(root[i])
    return scipy.sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))


class CachedFactorEval:
    """Incremental evaluator of Vecchia conditionals under parameter moves.

    Holds per-covariate kernel tensors and their sum; a proposal changing
    one (sigma2_j, phi_j) pair recomputes a single exp tensor and refactors,
    a tau2 move refactors from the cached sum, and a mean move only re-runs
    forward substitution against stored Cholesky factors. Current and
    proposed (u, log F) live in double buffers swapped on acceptance.
    """

    def __init__(self, sites, X, Z, nbr, include_nugget):
        self.nbr = nbr
        self.include_nugget = include_nugget
        self.tensors = padded_tensors(sites, X, nbr)
        self.X = np.asarray(X, dtype=float)
        self.Z = np.asarray(Z, dtype=float)
        n, Mm = self.tensors.idx.shape
        self.n, self.Mm = n, Mm
        self.E = None          # list of per-covariate tensors
        self.S = None          # their sum
        self.sigma2 = None
        self.phi = None
        self.tau2 = None
        self._r = np.empty((n, Mm))
        self._r_prop = np.empty((n, Mm))
        self._u = np.empty(n)
        self._u_prop = np.empty(n)
        self._logf = np.empty(n)
        self._logf_prop = np.empty(n)
        self._L = np.empty((n, Mm, Mm))
        self._L_prop = np.empty((n, Mm, Mm))
        self._T_prop = None
        self._pair_j = -1

    # -- state ------------------------------------------------------------

    @property
    def u(self):
        return self._u

    @property
    def logf(self):
        return self._logf

    def set_state(self, sigma2, phi, tau2, resid):
        """Full rebuild at the given parameters and residual vector."""
        self.sigma2 = np.array(sigma2, dtype=float)
        self.phi = np.array(phi, dtype=float)
        self.tau2 = float(tau2) if self.include_nugget else 0.0
        p = len(self.tensors.O)
        self.E = [self.sigma2[k] * np.exp(-self.phi[k] * self.tensors.D) * self.tensors.O[k]
                  for k in range(p)]
        self.S = np.zeros_like(self.tensors.D)
        for e in self.E:
            self.S += e
        np.copyto(self._r, np.asarray(resid)[self.tensors.idx])
        _kernels.factor_eval_all(self.S, self.tau2, self.tensors.ksz,
                                 self._r, self._u, self._logf, self._L)

    # -- proposals ----------------------------------------------------------

    def eval_pair(self, j, sigma2_j, phi_j):
        """(u, logF) under a proposed (sigma2_j, phi_j); state unchanged."""
        self._T_prop = np.exp(-phi_j * self.tensors.D)
        self._pair_j = j
        _kernels.factor_eval_pair(self.S, self.E[j], self._T_prop,
                                  self.tensors.O[j], sigma2_j, self.tau2,
                                  self.tensors.ksz, self._r,
                                  self._u_prop, self._logf_prop, self._L_prop)
        return self._u_prop, self._logf_prop

    def eval_tau(self, tau2):
        _kernels.factor_eval_all(self.S, tau2, self.tensors.ksz, self._r,
                                 self._u_prop, self._logf_prop, self._L_prop)
        return self._u_prop, self._logf_prop

    def eval_sigma_tau(self, j, sigma2_j, tau2):
        """(u, logF) under a joint (sigma2_j, tau2) proposal; phi_j fixed."""
        self._T_prop = np.exp(-self.phi[j] * self.tensors.D)
        self._pair_j = j
        _kernels.factor_eval_pair(self.S, self.E[j], self._T_prop,
                                  self.tensors.O[j], sigma2_j, tau2,
                                  self.tensors.ksz, self._r,
                                  self._u_prop, self._logf_prop, self._L_prop)
        return self._u_prop, self._logf_prop

    def eval_resid(self, resid):
        """(u, logF) under a new residual vector (mean move); factors reused."""
        np.copyto(self._r_prop, np.asarray(resid)[self.tensors.idx])
        _kernels.factor_fsub(self._L, self.tensors.ksz, self._r_prop, self._u_prop)
        np.copyto(self._logf_prop, self._logf)
        return self._u_prop, self._logf_prop

    # -- acceptance ---------------------------------------------------------

    def _swap_ulf(self, swap_L):
        self._u, self._u_prop = self._u_prop, self._u
        self._logf, self._logf_prop = self._logf_prop, self._logf
        if swap_L:
            self._L, self._L_prop = self._L_prop, self._L

    def accept_pair(self, j, sigma2_j, phi_j):
        E_new = sigma2_j * self._T_prop * self.tensors.O[j]
        self.S += E_new - self.E[j]
        self.E[j] = E_new
        self.sigma2[j] = sigma2_j
        self.phi[j] = phi_j
        self._swap_ulf(swap_L=True)

    def accept_tau(self, tau2):
        self.tau2 = float(tau2)
        self._swap_ulf(swap_L=True)

    def accept_sigma_tau(self, j, sigma2_j, tau2):
        E_new = sigma2_j * self._T_prop * self.tensors.O[j]
        self.S += E_new - self.E[j]
        self.E[j] = E_new
        self.sigma2[j] = sigma2_j
        self.tau2 = float(tau2)
        self._swap_ulf(swap_L=True)

    def accept_resid(self):
        self._r, self._r_prop = self._r_prop, self._r
        self._swap_ulf(swap_L=False)

    # -- derived quantities ---------------------------------------------------

    def weights_and_vars(self):
        """Explicit (padded b, F) at the current parameters."""
        bpad = np.zeros((self.n, max(self.Mm - 1, 1)))
        fvar = np.empty(self.n)
        _kernels.factor_bf(self.S, self.tau2, self.tensors.ksz, bpad, fvar)
        return bpad, fvar


def response_loglik(dataset, params, M):
    """Convenience wrapper: censored-aware sets + latent-free likelihood."""
    nbr = response_neighbor_sets(dataset, M)
    return censored_vecchia_loglik(dataset, params, nbr)
