"""Fused numeric kernels for Vecchia factor construction and evaluation.

Everything here works on padded per-position tensors: for position i with
conditioning set of size m_i, slots 0..m_i-1 hold the neighbors in position
order and slot m_i holds the site itself; k = ksz[i] = m_i + 1 slots are
active and padding is never read.

Each evaluation kernel forms the local (k x k) covariance in a scratch
buffer, runs an in-place left-looking Cholesky, and forward-solves the
residual vector. The last Cholesky row yields the conditional quantities:
F_ii = L[k-1,k-1]^2 and u_i = (r_i - b_i.r_nbrs)/sqrt(F_ii), which is both
the standardized Gaussian residual and the probit argument for censored
positions.

fastmath reorders a handful of flops inside one position's factorization;
results stay deterministic for a fixed build because the instruction
schedule is fixed at compile time.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_OPTS = dict(cache=True, fastmath=True, boundscheck=False)


@njit(**_OPTS)
def _chol_solve_last(L, k, r_i, scratch):
    """In-place Cholesky of L[:k,:k] (lower), then forward-solve scratch=r.

    Returns (u_last, log_fii). L's lower triangle must hold the covariance
    on entry.
    """
    for a in range(k):
        s = L[a, a]
        for q in range(a):
            s -= L[a, q] * L[a, q]
        d = np.sqrt(s)
        L[a, a] = d
        inv = 1.0 / d
        for b in range(a + 1, k):
            s2 = L[b, a]
            for q in range(a):
                s2 -= L[b, q] * L[a, q]
            L[b, a] = s2 * inv
    for a in range(k):
        s = r_i[a]
        for q in range(a):
            s -= L[a, q] * scratch[q]
        scratch[a] = s / L[a, a]
    return scratch[k - 1], 2.0 * np.log(L[k - 1, k - 1])


@njit(**_OPTS)
def factor_eval_all(S, tau2, ksz, r, u, logf, Lout):
    """Factor every position of C = S + tau2*I_local and solve residuals.

    S : (n, Mm, Mm) summed covariance tensors (no nugget).
    r : (n, Mm) gathered residuals, self in slot k-1.
    Writes u, logf (length n) and the Cholesky factors to Lout.
    """
    n, Mm = r.shape
    y = np.empty(Mm)
    for i in range(n):
        k = ksz[i]
        L = Lout[i]
        for a in range(k):
            for b in range(a):
                L[a, b] = S[i, a, b]
            L[a, a] = S[i, a, a] + tau2
        u[i], logf[i] = _chol_solve_last(L, k, r[i], y)


@njit(**_OPTS)
def factor_eval_pair(S, Eold, T, O, s2new, tau2, ksz, r, u, logf, Lout):
    """Like factor_eval_all but with component j's tensor swapped out.

    Local covariance = S - Eold + s2new * T * O + tau2*I, where Eold is the
    current per-position tensor of component j, T = exp(-phi_new * D) and O
    the covariate outer products. Avoids materializing the proposed total.
    """
    n, Mm = r.shape
    y = np.empty(Mm)
    for i in range(n):
        k = ksz[i]
        L = Lout[i]
        for a in range(k):
            for b in range(a):
                L[a, b] = S[i, a, b] - Eold[i, a, b] + s2new * T[i, a, b] * O[i, a, b]
            L[a, a] = S[i, a, a] - Eold[i, a, a] + s2new * T[i, a, a] * O[i, a, a] + tau2
        u[i], logf[i] = _chol_solve_last(L, k, r[i], y)


@njit(**_OPTS)
def factor_fsub(Lout, ksz, r, u):
    """Forward-solve only, against factors stored by a previous eval."""
    n, Mm = r.shape
    y = np.empty(Mm)
    for i in range(n):
        k = ksz[i]
        L = Lout[i]
        for a in range(k):
            s = r[i, a]
            for q in range(a):
                s -= L[a, q] * y[q]
            y[a] = s / L[a, a]
        u[i] = y[k - 1]


@njit(**_OPTS)
def factor_bf(S, tau2, ksz, bpad, fvar):
    """Explicit kriging weights b_i and conditional variances F_ii.

    After the local Cholesky, row k-1 of L holds l = L_vv^{-1} c, so
    b = L_vv^{-T} l by back substitution. bpad rows are padded with zeros.
    """
    n = ksz.shape[0]
    Mm = S.shape[1]
    L = np.empty((Mm, Mm))
    for i in range(n):
        k = ksz[i]
        for a in range(k):
            for b in range(a):
                L[a, b] = S[i, a, b]
            L[a, a] = S[i, a, a] + tau2
        for a in range(k):
            s = L[a, a]
            for q in range(a):
                s -= L[a, q] * L[a, q]
            d = np.sqrt(s)
            L[a, a] = d
            inv = 1.0 / d
            for b in range(a + 1, k):
                s2 = L[b, a]
                for q in range(a):
                    s2 -= L[b, q] * L[a, q]
                L[b, a] = s2 * inv
        fvar[i] = L[k - 1, k - 1] * L[k - 1, k - 1]
        m = k - 1
        for a in range(Mm - 1):
            bpad[i, a] = 0.0
        for a in range(m - 1, -1, -1):
            s = L[m, a]
            for q in range(a + 1, m):
                s -= L[q, a] * bpad[i, q]
            bpad[i, a] = s / L[a, a]
