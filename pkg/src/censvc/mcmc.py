"""Adaptive random-walk Metropolis samplers for the three model kinds.

Blocks per iteration: a joint Gaussian move on alpha, one 2-D move per
(log sigma2_j, log phi_j) pair, a scalar move on log tau2, and — for the
latent kinds — a full single-site sweep over the latent field. Proposal
scales follow Robbins-Monro toward 0.234 (multivariate blocks) or 0.44
(scalar / single-site) acceptance and freeze at the end of burn-in; the
alpha and pair blocks additionally adapt their proposal covariance from
the burn-in history. During warm-up only, the latent-free kind adds joint
(log sigma2_j, log tau2) exchange proposals that carry chains along the
weakly identified variance/nugget valley; they stop at the end of burn-in,
so the kernel the kept draws come from is exactly the blocks above.

Positive parameters are sampled on the log scale; all posterior values
reported or stored are on the natural scale.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.linalg.lapack import dpotri
from scipy.special import gammaln, log_ndtr

from .covariance import dense_cov_matrix
from .data import DataError, SvcParams, default_priors, validate_params, _fmt
from .ordering import latent_neighbor_sets, response_neighbor_sets
from .vecchia import (CachedFactorEval, build_factor, censored_loglik_terms,
                      censored_vecchia_loglik, gaussian_vecchia_loglik)

_LN2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# priors and the reference log-posterior


def _logpdf_normal(x, mean, sd):
    return -0.5 * _LN2PI - np.log(sd) - 0.5 * ((x - mean) / sd) ** 2


def _logpdf_invgamma(x, shape, scale):
    return shape * np.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x


def _logpdf_gamma(x, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def log_prior(params, priors):
    """Natural-scale log-prior plus the log-transform Jacobian.

    The Jacobian terms (+log sigma2_j, +log phi_j, +log tau2) make this the
    density of the transformed state the samplers actually walk in.
    """
    terms = [
        float(np.sum(_logpdf_normal(params.alpha, priors.alpha_mean, priors.alpha_sd))),
        float(np.sum(_logpdf_invgamma(params.sigma2, priors.sigma2_shape,
                                      priors.sigma2_scale))),
        float(np.sum(_logpdf_gamma(params.phi, priors.phi_shape, priors.phi_rate))),
        _logpdf_invgamma(params.tau2, priors.tau2_shape, priors.tau2_scale),
        float(np.sum(np.log(params.sigma2)) + np.sum(np.log(params.phi))
              + math.log(params.tau2)),
    ]
    return math.fsum(terms)


def data_loglik_terms(Z, w, tau2, censored, L):
    """Per-site log p(Z_i | w_i, tau2): Gaussian or Phi((L - w_i)/tau)."""
    tau = math.sqrt(tau2)
    obs_terms = -0.5 * (_LN2PI + math.log(tau2) + (Z - w) ** 2 / tau2)
    cen_terms = log_ndtr((L - w) / tau)
    return np.where(censored, cen_terms, obs_terms)


def log_posterior(model_kind, state, dataset, neighbor_sets, priors):
    """Reference (slow-path) log-posterior used for checks and tests.

    state is a dict with 'params' (SvcParams) and, for latent kinds, 'w'.
    """
    params = state["params"]
    validate_params(params, dataset.p)
    lp = log_prior(params, priors)
    if model_kind == "latent-free":
        ll = censored_vecchia_loglik(dataset, params, neighbor_sets)
        return ll + lp
    w = np.asarray(state["w"], dtype=float)
    ld = math.fsum(data_loglik_terms(dataset.Z, w, params.tau2,
                                     dataset.censored, dataset.L).tolist())
    mean = dataset.X @ params.alpha
    if model_kind == "latent-vecchia":
        fac = build_factor(dataset.sites, dataset.X, params, neighbor_sets,
                           include_nugget=False)
        lw = gaussian_vecchia_loglik(fac, w, mean)
    elif model_kind == "full-latent":
        K = dense_cov_matrix(dataset.sites, dataset.X, params, include_nugget=False)
        c, low = cho_factor(K, lower=True)
        r = w - mean
        lw = -0.5 * (dataset.n * _LN2PI
                     + 2.0 * math.fsum(np.log(np.diag(c)).tolist())
                     + float(r @ cho_solve((c, low), r)))
    else:
        raise DataError("unknown model kind %r" % (model_kind,))
    return ld + lw + lp


# ---------------------------------------------------------------------------
# results containers and convergence diagnostics


@dataclass
class ChainResult:
    draws: np.ndarray           # (kept, 3p+1) natural scale
    latent: np.ndarray | None   # (kept, n) for latent kinds
    accept_rates: dict
    wall_time: float
    chain_index: int


@dataclass
class PosteriorSamples:
    model: str
    M: int
    param_names: list
    chains: list
    rhat: dict
    ess: dict
    burn_in: int

    def stacked_draws(self):
        return np.vstack([c.draws for c in self.chains])

    @property
    def n_draws(self):
        return sum(c.draws.shape[0] for c in self.chains)


def param_names(p):
    return (["alpha_%d" % (j + 1) for j in range(p)]
            + ["sigma2_%d" % (j + 1) for j in range(p)]
            + ["phi_%d" % (j + 1) for j in range(p)]
            + ["tau2"])


def rhat(chains):
    """Split-chain potential scale reduction factor for one parameter."""
    seqs = [np.asarray(c, dtype=float) for c in chains]
    if len(seqs) < 2:
        raise DataError("rhat needs at least 2 chains")
    N = min(s.shape[0] for s in seqs)
    if N < 4:
        raise DataError("rhat needs at least 4 draws per chain")
    half = N // 2
    split = []
    for s in seqs:
        split.append(s[:half])
        split.append(s[half:2 * half])
    arr = np.asarray(split)
    W = arr.var(axis=1, ddof=1).mean()
    if W <= 0:
        return 1.0
    B = half * arr.mean(axis=1).var(ddof=1)
    var_plus = (half - 1) / half * W + B / half
    return float(np.sqrt(var_plus / W))


def ess(draws):
    """Effective sample size via Geyer's initial positive sequence."""
    x = np.asarray(draws, dtype=float)
    N = x.shape[0]
    if N < 10:
        raise DataError("ess needs at least 10 draws")
    x = x - x.mean()
    v = float(x @ x) / N
    if v <= 0:
        return 1.0
    nfft = int(2 ** np.ceil(np.log2(2 * N)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:N].real / N
    rho = acov / acov[0]
    s = 0.0
    t = 1
    while t + 1 < N:
        g = rho[t] + rho[t + 1]
        if g <= 0:
            break
        s += g
        t += 2
    out = N / (1.0 + 2.0 * s)
    return float(min(max(out, 1.0), N))


# ---------------------------------------------------------------------------
# shared sampler scaffolding


class _Adapt:
    """Robbins-Monro log-scale state for one proposal block."""

    def __init__(self, scale, target):
        self.log_s = math.log(scale)
        self.target = target
        self.t = 0

    def update(self, accepted):
        self.t += 1
        g = (1.0 + self.t) ** -0.6
        self.log_s += g * ((1.0 if accepted else 0.0) - self.target)
        self.log_s = min(max(self.log_s, -15.0), 15.0)

    @property
    def scale(self):
        return math.exp(self.log_s)


def _initial_values(dataset):
    """Least-squares initialization on the non-censored rows."""
    obs = ~dataset.censored
    if obs.sum() == 0:
        raise DataError("cannot initialize: every observation is censored")
    Xo = dataset.X[obs]
    Zo = dataset.Z[obs]
    alpha, *_ = np.linalg.lstsq(Xo, Zo, rcond=None)
    resid = Zo - Xo @ alpha
    v = float(resid.var()) if resid.size > 1 else 1.0
    v = max(v, 1e-8)
    d = np.sqrt(((dataset.sites[:, None, :] - dataset.sites[None, :, :]) ** 2).sum(-1))
    maxdist = max(float(d.max()), 1e-12)
    p = dataset.p
    sigma2 = np.full(p, v / p)
    phi = np.full(p, 10.0 / maxdist)
    tau2 = 0.1 * v
    params = SvcParams(alpha=alpha, sigma2=sigma2, phi=phi, tau2=tau2)
    w = dataset.X @ alpha
    w = np.where(dataset.censored, dataset.L - math.sqrt(tau2), w)
    # proposal covariance seed for the alpha block: LS covariance shape
    XtX = Xo.T @ Xo + 1e-10 * np.eye(p)
    alpha_cov = np.linalg.inv(XtX) * v
    return params, w, alpha_cov


class _LatentFreeModel:
    """Likelihood bookkeeping for the latent-free sampler."""

    has_latent = False

    def __init__(self, dataset, M):
        self.dataset = dataset
        self.nbr = response_neighbor_sets(dataset, M)
        self.cens_pos = dataset.censored[self.nbr.perm]
        self.cache = CachedFactorEval(dataset.sites, dataset.X, dataset.Z,
                                      self.nbr, include_nugget=True)
        self.ll = None

    def _terms(self, u, logf):
        return math.fsum(censored_loglik_terms(u, logf, self.cens_pos).tolist())

    def init_state(self, params, w):
        resid = self.dataset.Z - self.dataset.X @ params.alpha
        self.cache.set_state(params.sigma2, params.phi, params.tau2, resid)
        self.ll = self._terms(self.cache.u, self.cache.logf)
        return {"loglik": self.ll}

    # each eval returns the candidate total log-likelihood

    def eval_alpha(self, alpha):
        u, logf = self.cache.eval_resid(self.dataset.Z - self.dataset.X @ alpha)
        return self._terms(u, logf)

    def accept_alpha(self, alpha, ll):
        self.cache.accept_resid()
        self.ll = ll

    def eval_pair(self, j, sigma2_j, phi_j):
        u, logf = self.cache.eval_pair(j, sigma2_j, phi_j)
        return self._terms(u, logf)

    def accept_pair(self, j, sigma2_j, phi_j, ll):
        self.cache.accept_pair(j, sigma2_j, phi_j)
        self.ll = ll

    def eval_tau(self, tau2):
        u, logf = self.cache.eval_tau(tau2)
        return self._terms(u, logf)

    def accept_tau(self, tau2, ll):
        self.cache.accept_tau(tau2)
        self.ll = ll

    def eval_sigma_tau(self, j, sigma2_j, tau2):
        u, logf = self.cache.eval_sigma_tau(j, sigma2_j, tau2)
        return self._terms(u, logf)

    def accept_sigma_tau(self, j, sigma2_j, tau2, ll):
        self.cache.accept_sigma_tau(j, sigma2_j, tau2)
        self.ll = ll

    def total(self):
        return self.ll

    def sweep(self, rng, adapt, params, w, frozen):
        return w


class _LatentVecchiaModel:
    """Latent-field sampler pieces with a Vecchia prior (no nugget)."""

    has_latent = True

    def __init__(self, dataset, M):
        self.dataset = dataset
        self.nbr = latent_neighbor_sets(dataset.sites, M)
        self.cache = CachedFactorEval(dataset.sites, dataset.X, dataset.Z,
                                      self.nbr, include_nugget=False)
        self.perm = self.nbr.perm
        self._build_dep_structure()
        self.w = None
        self.lw = None          # latent prior log-density
        self.dterm = None       # per-site data terms (original index)
        self._bf_dirty = True

    def _build_dep_structure(self):
        # static CSR-style map: position i -> the positions whose
        # conditioning sets contain i, with the slot to read the weight from
        src, dst, slot = [], [], []
        for jpos, s in enumerate(self.nbr.sets):
            for q, ipos in enumerate(s):
                src.append(ipos)
                dst.append(jpos)
                slot.append(q)
        src = np.asarray(src, dtype=np.int64)
        order = np.argsort(src, kind="stable")
        self._dep_dst = np.asarray(dst, dtype=np.int64)[order]
        self._dep_slot = np.asarray(slot, dtype=np.int64)[order]
        bounds = np.searchsorted(src[order], np.arange(self.nbr.n + 1))
        self._dep_bounds = bounds
        self._dep_b = np.zeros(self._dep_dst.shape[0])

    def _refresh_bf(self):
        self.bpad, self.fvar = self.cache.weights_and_vars()
        if self._dep_dst.size:
            self._dep_b = self.bpad[self._dep_dst, self._dep_slot]
        self._bf_dirty = False

    def init_state(self, params, w):
        self.w = w.copy()
        self.params_alpha = params.alpha.copy()
        self.tau2 = params.tau2
        resid = self.w - self.dataset.X @ params.alpha
        self.cache.set_state(params.sigma2, params.phi, params.tau2, resid)
        self.lw = self._gauss_total(self.cache.u, self.cache.logf)
        self.dterm = data_loglik_terms(self.dataset.Z, self.w, params.tau2,
                                       self.dataset.censored, self.dataset.L)
        self.ld = math.fsum(self.dterm.tolist())
        self._bf_dirty = True
        return {"loglik": self.lw + self.ld}

    @staticmethod
    def _gauss_total(u, logf):
        return math.fsum((-0.5 * (_LN2PI + logf + u * u)).tolist())

    def eval_alpha(self, alpha):
        u, logf = self.cache.eval_resid(self.w - self.dataset.X @ alpha)
        return self._gauss_total(u, logf) + self.ld

    def accept_alpha(self, alpha, ll):
        self.cache.accept_resid()
        self.params_alpha = alpha.copy()
        self.lw = ll - self.ld

    def eval_pair(self, j, sigma2_j, phi_j):
        u, logf = self.cache.eval_pair(j, sigma2_j, phi_j)
        return self._gauss_total(u, logf) + self.ld

    def accept_pair(self, j, sigma2_j, phi_j, ll):
        self.cache.accept_pair(j, sigma2_j, phi_j)
        self.lw = ll - self.ld
        self._bf_dirty = True

    def eval_tau(self, tau2):
        dt = data_loglik_terms(self.dataset.Z, self.w, tau2,
                               self.dataset.censored, self.dataset.L)
        return self.lw + math.fsum(dt.tolist())

    def accept_tau(self, tau2, ll):
        self.tau2 = tau2
        self.dterm = data_loglik_terms(self.dataset.Z, self.w, tau2,
                                       self.dataset.censored, self.dataset.L)
        self.ld = math.fsum(self.dterm.tolist())
        self.lw = ll - self.ld

    def total(self):
        return self.lw + self.ld

    def sweep(self, rng, adapt, params, w_ignored, frozen):
        if self._bf_dirty:
            self._refresh_bf()
        n = self.nbr.n
        perm = self.perm
        Z, L = self.dataset.Z, self.dataset.L
        cen = self.dataset.censored
        tau2 = self.tau2
        tau = math.sqrt(tau2)
        mean = self.dataset.X @ self.params_alpha
        r = self.w - mean
        rp = r[self.cache.tensors.idx]
        Mm = rp.shape[1]
        if Mm > 1:
            proj = np.einsum("ij,ij->i", self.bpad[:, : Mm - 1], rp[:, : Mm - 1])
        else:
            proj = np.zeros(n)
        e = rp[np.arange(n), self.cache.tensors.ksz - 1] - proj
        F = self.fvar
        eps = rng.standard_normal(n)
        logu = np.log(rng.random(n))
        scales = adapt["latent_scales"]
        accepted = 0
        for i in range(n):
            orig = perm[i]
            delta = scales[i] * eps[i]
            wi_new = self.w[orig] + delta
            if cen[orig]:
                new_d = log_ndtr((L - wi_new) / tau)
            else:
                new_d = -0.5 * (_LN2PI + math.log(tau2) + (Z[orig] - wi_new) ** 2 / tau2)
            dd = new_d - self.dterm[orig]
            lo, hi = self._dep_bounds[i], self._dep_bounds[i + 1]
            ei = e[i]
            dp = -(delta * ei + 0.5 * delta * delta) / F[i]
            if hi > lo:
                bdep = self._dep_b[lo:hi]
                jdep = self._dep_dst[lo:hi]
                edep = e[jdep]
                step = bdep * delta
                dp += float(np.sum((step * edep - 0.5 * step * step) / F[jdep]))
            if logu[i] < dd + dp:
                accepted += 1
                self.w[orig] = wi_new
                self.dterm[orig] = new_d
                e[i] += delta
                if hi > lo:
                    e[jdep] -= step
                if not frozen:
                    scales[i] *= math.exp(adapt["latent_gamma"] * (1.0 - 0.44))
            elif not frozen:
                scales[i] *= math.exp(adapt["latent_gamma"] * (0.0 - 0.44))
        # refresh cached conditionals and totals from the new field
        u, logf = self.cache.eval_resid(self.w - mean)
        self.cache.accept_resid()
        self.lw = self._gauss_total(u, logf)
        self.ld = math.fsum(self.dterm.tolist())
        return accepted / n


class _FullLatentModel:
    """Dense-covariance latent sampler pieces."""

    has_latent = True

    def __init__(self, dataset, M):
        self.dataset = dataset
        self.nbr = None  # dense path has no neighbor structure
        d = np.sqrt(((dataset.sites[:, None, :] - dataset.sites[None, :, :]) ** 2).sum(-1))
        self._dist = d
        self._outer = [np.outer(dataset.X[:, k], dataset.X[:, k])
                       for k in range(dataset.p)]

    def _component(self, j, sigma2_j, phi_j):
        return sigma2_j * np.exp(-phi_j * self._dist) * self._outer[j]

    def init_state(self, params, w):
        self.w = w.copy()
        self.alpha = params.alpha.copy()
        self.sigma2 = params.sigma2.copy()
        self.phi = params.phi.copy()
        self.tau2 = params.tau2
        p = self.dataset.p
        self.Kcomp = [self._component(j, self.sigma2[j], self.phi[j]) for j in range(p)]
        self.K = sum(self.Kcomp)
        self._factor()
        self.r = self.w - self.dataset.X @ self.alpha
        self.lw = self._latent_logpdf(self.r, self._chol)
        self.dterm = data_loglik_terms(self.dataset.Z, self.w, self.tau2,
                                       self.dataset.censored, self.dataset.L)
        self.ld = math.fsum(self.dterm.tolist())
        return {"loglik": self.lw + self.ld}

    def _factor(self, K=None):
        K = self.K if K is None else K
        try:
            c, low = cho_factor(K, lower=True)
        except np.linalg.LinAlgError as exc:
            raise DataError("latent covariance not positive definite: %s" % exc)
        self._chol = (c, low)
        inv, info = dpotri(c, lower=1)
        if info != 0:
            raise DataError("precision inversion failed (dpotri info=%d)" % info)
        # dpotri fills only the lower triangle; the upper holds leftovers
        self.Q = np.tril(inv) + np.tril(inv, -1).T
        self._logdet = 2.0 * math.fsum(np.log(np.diag(c)).tolist())

    def _latent_logpdf(self, r, chol, logdet=None):
        logdet = self._logdet if logdet is None else logdet
        quad = float(r @ cho_solve(chol, r))
        return -0.5 * (self.dataset.n * _LN2PI + logdet + quad)

    def eval_alpha(self, alpha):
        r = self.w - self.dataset.X @ alpha
        self._r_prop = r
        return self._latent_logpdf(r, self._chol) + self.ld

    def accept_alpha(self, alpha, ll):
        self.alpha = alpha.copy()
        self.r = self._r_prop
        self.lw = ll - self.ld

    def eval_pair(self, j, sigma2_j, phi_j):
        Knew = self.K - self.Kcomp[j] + self._component(j, sigma2_j, phi_j)
        try:
            c, low = cho_factor(Knew, lower=True)
        except np.linalg.LinAlgError:
            return -np.inf
        self._K_prop = Knew
        self._chol_prop = (c, low)
        self._logdet_prop = 2.0 * math.fsum(np.log(np.diag(c)).tolist())
        quad = float(self.r @ cho_solve((c, low), self.r))
        lw = -0.5 * (self.dataset.n * _LN2PI + self._logdet_prop + quad)
        return lw + self.ld

    def accept_pair(self, j, sigma2_j, phi_j, ll):
        self.Kcomp[j] = self._component(j, sigma2_j, phi_j)
        self.K = self._K_prop
        self._chol = self._chol_prop
        self._logdet = self._logdet_prop
        c = self._chol[0]
        inv, info = dpotri(c, lower=1)
        if info != 0:
            raise DataError("precision inversion failed (dpotri info=%d)" % info)
        self.Q = np.tril(inv) + np.tril(inv, -1).T
        self.sigma2[j] = sigma2_j
        self.phi[j] = phi_j
        self.lw = ll - self.ld

    def eval_tau(self, tau2):
        dt = data_loglik_terms(self.dataset.Z, self.w, tau2,
                               self.dataset.censored, self.dataset.L)
        return self.lw + math.fsum(dt.tolist())

    def accept_tau(self, tau2, ll):
        self.tau2 = tau2
        self.dterm = data_loglik_terms(self.dataset.Z, self.w, tau2,
                                       self.dataset.censored, self.dataset.L)
        self.ld = math.fsum(self.dterm.tolist())
        self.lw = ll - self.ld

    def total(self):
        return self.lw + self.ld

    def sweep(self, rng, adapt, params, w_ignored, frozen):
        n = self.dataset.n
        Z, L = self.dataset.Z, self.dataset.L
        cen = self.dataset.censored
        tau2 = self.tau2
        tau = math.sqrt(tau2)
        v = self.Q @ self.r
        Qd = np.diag(self.Q).copy()
        eps = rng.standard_normal(n)
        logu = np.log(rng.random(n))
        scales = adapt["latent_scales"]
        accepted = 0
        for i in range(n):
            delta = scales[i] * eps[i]
            wi_new = self.w[i] + delta
            if cen[i]:
                new_d = log_ndtr((L - wi_new) / tau)
            else:
                new_d = -0.5 * (_LN2PI + math.log(tau2) + (Z[i] - wi_new) ** 2 / tau2)
            dd = new_d - self.dterm[i]
            dp = -(delta * v[i] + 0.5 * delta * delta * Qd[i])
            if logu[i] < dd + dp:
                accepted += 1
                self.w[i] = wi_new
                self.r[i] += delta
                v += delta * self.Q[:, i]
                self.dterm[i] = new_d
                if not frozen:
                    scales[i] *= math.exp(adapt["latent_gamma"] * (1.0 - 0.44))
            elif not frozen:
                scales[i] *= math.exp(adapt["latent_gamma"] * (0.0 - 0.44))
        self.lw = self._latent_logpdf(self.r, self._chol)
        self.ld = math.fsum(self.dterm.tolist())
        return accepted / n


_MODEL_IMPL = {
    "latent-free": _LatentFreeModel,
    "latent-vecchia": _LatentVecchiaModel,
    "full-latent": _FullLatentModel,
}


def _prior_terms(alpha, sigma2, phi, tau2, priors):
    """Log-prior pieces in the sampling (log) parameterization."""
    p = len(sigma2)
    lp_alpha = float(np.sum(_logpdf_normal(alpha, priors.alpha_mean,
                                           priors.alpha_sd)))
    lp_pairs = [float(_logpdf_invgamma(sigma2[j], priors.sigma2_shape[j],
                                       priors.sigma2_scale[j])
                      + _logpdf_gamma(phi[j], priors.phi_shape[j],
                                      priors.phi_rate[j])
                      + math.log(sigma2[j]) + math.log(phi[j]))
                for j in range(p)]
    lp_tau = float(_logpdf_invgamma(tau2, priors.tau2_shape, priors.tau2_scale)
                   + math.log(tau2))
    return lp_alpha, lp_pairs, lp_tau


def run_chain(model_kind, dataset, run_config, priors, chain_index,
              check_every=0):
    """One adaptive RWM chain; deterministic given (seed, chain_index).

    check_every > 0 re-evaluates the log-posterior from scratch every that
    many iterations and raises if the cached value drifted (debug tool).
    """
    if model_kind not in _MODEL_IMPL:
        raise DataError("unknown model kind %r" % (model_kind,))
    rng = np.random.default_rng([int(run_config.seed), int(chain_index)])
    p = dataset.p
    params0, w0, alpha_cov = _initial_values(dataset)
    model = _MODEL_IMPL[model_kind](dataset, run_config.M)
    t_start = time.perf_counter()
    model.init_state(params0, w0)
    ll = model.total()
    if not math.isfinite(ll):
        raise DataError("non-finite log-likelihood at initialization")
    alpha = params0.alpha.copy()
    sigma2 = params0.sigma2.copy()
    phi = params0.phi.copy()
    tau2 = params0.tau2
    lp_alpha, lp_pairs, lp_tau = _prior_terms(alpha, sigma2, phi, tau2, priors)
    if not math.isfinite(lp_alpha + sum(lp_pairs) + lp_tau):
        raise DataError("non-finite log-prior at initialization")

    iters, burn = run_config.iterations, run_config.burn_in
    kept = iters - burn
    k_par = 3 * p + 1
    draws = np.empty((kept, k_par))
    latent = np.empty((kept, dataset.n)) if model.has_latent else None

    # adaptation state
    ad_alpha = _Adapt(2.38 / math.sqrt(p), 0.234)
    ad_pairs = [_Adapt(0.5, 0.234) for _ in range(p)]
    ad_tau = _Adapt(0.4, 0.44)
    ad_x = [_Adapt(0.5, 0.234) for _ in range(p)]
    try:
        alpha_L = np.linalg.cholesky(alpha_cov + 1e-12 * np.eye(p))
    except np.linalg.LinAlgError:
        alpha_L = np.eye(p)
    pair_L = [np.eye(2) for _ in range(p)]
    x_L = [np.eye(2) for _ in range(p)]
    hist_alpha = np.empty((burn, p)) if burn else None
    hist_pair = np.empty((burn, p, 2)) if burn else None
    hist_tau = np.empty(burn) if burn else None
    latent_scales = np.full(dataset.n, 0.5 * math.sqrt(tau2))
    accept = {"alpha": 0, "tau2": 0}
    accept_pairs = [0 for _ in range(p)]
    latent_acc = 0.0
    n_count = 0
    best_lp = -math.inf
    best_state = None

    for it in range(iters):
        frozen = it >= burn
        if it == burn and best_state is not None:
            # Start the kept phase from the highest-posterior state visited
            # during warm-up; a chain that ends warm-up mid-transit between
            # variance arrangements would otherwise freeze wherever the
            # cutoff caught it.
            if best_lp > ll + lp_alpha + sum(lp_pairs) + lp_tau:
                alpha = best_state[0].copy()
                sigma2 = best_state[1].copy()
                phi = best_state[2].copy()
                tau2 = best_state[3]
                model.init_state(SvcParams(alpha=alpha, sigma2=sigma2,
                                           phi=phi, tau2=tau2), None)
                ll = model.total()
                lp_alpha, lp_pairs, lp_tau = _prior_terms(alpha, sigma2, phi,
                                                          tau2, priors)
        # --- alpha block
        prop = alpha + ad_alpha.scale * (alpha_L @ rng.standard_normal(p))
        logu = math.log(rng.random())
        try:
            ll_new = model.eval_alpha(prop)
        except (DataError, np.linalg.LinAlgError):
            ll_new = -np.inf
        lp_new = float(np.sum(_logpdf_normal(prop, priors.alpha_mean, priors.alpha_sd)))
        ok = math.isfinite(ll_new) and logu < (ll_new + lp_new) - (ll + lp_alpha)
        if ok:
            model.accept_alpha(prop, ll_new)
            alpha, ll, lp_alpha = prop, ll_new, lp_new
        if not frozen:
            ad_alpha.update(ok)
        accept["alpha"] += ok and frozen

        # --- (sigma2_j, phi_j) blocks
        for j in range(p):
            t_cur = np.array([math.log(sigma2[j]), math.log(phi[j])])
            t_new = t_cur + ad_pairs[j].scale * (pair_L[j] @ rng.standard_normal(2))
            logu = math.log(rng.random())
            if np.any(np.abs(t_new) > 40.0):
                ll_new = -np.inf
                lp_new = -np.inf
            else:
                s2n, phn = math.exp(t_new[0]), math.exp(t_new[1])
                try:
                    ll_new = model.eval_pair(j, s2n, phn)
                except (DataError, np.linalg.LinAlgError):
                    ll_new = -np.inf
                lp_new = float(_logpdf_invgamma(s2n, priors.sigma2_shape[j],
                                                priors.sigma2_scale[j])
                               + _logpdf_gamma(phn, priors.phi_shape[j],
                                               priors.phi_rate[j])
                               + t_new[0] + t_new[1])
            ok = math.isfinite(ll_new) and logu < (ll_new + lp_new) - (ll + lp_pairs[j])
            if ok:
                model.accept_pair(j, s2n, phn, ll_new)
                sigma2[j], phi[j] = s2n, phn
                ll, lp_pairs[j] = ll_new, lp_new
            if not frozen:
                ad_pairs[j].update(ok)
            accept_pairs[j] += ok and frozen

        # --- tau2 block
        t_new = math.log(tau2) + ad_tau.scale * rng.standard_normal()
        logu = math.log(rng.random())
        if abs(t_new) > 40.0:
            ll_new = -np.inf
            lp_new = -np.inf
        else:
            t2n = math.exp(t_new)
            try:
                ll_new = model.eval_tau(t2n)
            except (DataError, np.linalg.LinAlgError):
                ll_new = -np.inf
            lp_new = float(_logpdf_invgamma(t2n, priors.tau2_shape, priors.tau2_scale)
                           + t_new)
        ok = math.isfinite(ll_new) and logu < (ll_new + lp_new) - (ll + lp_tau)
        if ok:
            model.accept_tau(t2n, ll_new)
            tau2, ll, lp_tau = t2n, ll_new, lp_new
        if not frozen:
            ad_tau.update(ok)
        accept["tau2"] += ok and frozen

        # --- burn-in only: joint (log sigma2_j, log tau2) exchange moves.
        # The process-variance/nugget split is the slowest posterior
        # direction when ranges are short relative to site spacing, and the
        # two parameters live in different blocks, so single-block moves
        # cross the valley only diffusively. These warm-up proposals
        # transport chains along it so the kept phase starts stationary; the
        # frozen kernel is exactly the blocks above. Latent kinds skip them:
        # with w held fixed a variance swap is nearly always rejected, the
        # move only helps in the marginalized geometry.
        if not frozen and not model.has_latent:
            for j in range(p):
                t_cur = np.array([math.log(sigma2[j]), math.log(tau2)])
                t_new = t_cur + ad_x[j].scale * (x_L[j] @ rng.standard_normal(2))
                logu = math.log(rng.random())
                if np.any(np.abs(t_new) > 40.0):
                    ll_new = -np.inf
                    lp_p_new = -np.inf
                    lp_t_new = -np.inf
                else:
                    s2n, t2n = math.exp(t_new[0]), math.exp(t_new[1])
                    try:
                        ll_new = model.eval_sigma_tau(j, s2n, t2n)
                    except (DataError, np.linalg.LinAlgError):
                        ll_new = -np.inf
                    lp_p_new = float(_logpdf_invgamma(s2n, priors.sigma2_shape[j],
                                                      priors.sigma2_scale[j])
                                     + _logpdf_gamma(phi[j], priors.phi_shape[j],
                                                     priors.phi_rate[j])
                                     + t_new[0] + math.log(phi[j]))
                    lp_t_new = float(_logpdf_invgamma(t2n, priors.tau2_shape,
                                                      priors.tau2_scale)
                                     + t_new[1])
                ok = math.isfinite(ll_new) and logu < (
                    (ll_new + lp_p_new + lp_t_new) - (ll + lp_pairs[j] + lp_tau))
                if ok:
                    model.accept_sigma_tau(j, s2n, t2n, ll_new)
                    sigma2[j] = s2n
                    tau2 = t2n
                    ll, lp_pairs[j], lp_tau = ll_new, lp_p_new, lp_t_new
                ad_x[j].update(ok)

        # --- latent sweep
        if model.has_latent:
            rate = model.sweep(rng, {"latent_scales": latent_scales,
                                     "latent_gamma": (1.0 + it) ** -0.6},
                               None, None, frozen)
            ll = model.total()
            if frozen:
                latent_acc += rate
                n_count += 1

        # --- covariance adaptation from burn-in history
        if not frozen:
            if not model.has_latent:
                lp_tot = ll + lp_alpha + sum(lp_pairs) + lp_tau
                if lp_tot > best_lp:
                    best_lp = lp_tot
                    best_state = (alpha.copy(), sigma2.copy(), phi.copy(),
                                  tau2)
            hist_alpha[it] = alpha
            hist_tau[it] = math.log(tau2)
            for j in range(p):
                hist_pair[it, j, 0] = math.log(sigma2[j])
                hist_pair[it, j, 1] = math.log(phi[j])
            if (it + 1) % 100 == 0 and it + 1 >= 100:
                lo = (it + 1) // 2
                seg = hist_alpha[lo:it + 1]
                if seg.shape[0] >= 50:
                    cov = np.cov(seg.T).reshape(p, p) + 1e-9 * np.eye(p)
                    try:
                        alpha_L = np.linalg.cholesky(cov)
                    except np.linalg.LinAlgError:
                        pass
                    for j in range(p):
                        cov2 = np.cov(hist_pair[lo:it + 1, j].T) + 1e-9 * np.eye(2)
                        try:
                            pair_L[j] = np.linalg.cholesky(cov2)
                        except np.linalg.LinAlgError:
                            pass
                        st = np.column_stack([hist_pair[lo:it + 1, j, 0],
                                              hist_tau[lo:it + 1]])
                        cov3 = np.cov(st.T) + 1e-9 * np.eye(2)
                        try:
                            x_L[j] = np.linalg.cholesky(cov3)
                        except np.linalg.LinAlgError:
                            pass

        if check_every and (it + 1) % check_every == 0:
            state = {"params": SvcParams(alpha=alpha, sigma2=sigma2, phi=phi,
                                         tau2=tau2)}
            if model.has_latent:
                state["w"] = model.w
            fresh = log_posterior(model_kind, state, dataset, model.nbr, priors)
            cached = ll + lp_alpha + sum(lp_pairs) + lp_tau
            if abs(fresh - cached) > 1e-6 * max(1.0, abs(fresh)):
                raise AssertionError("cached log-posterior drifted: %r vs %r"
                                     % (cached, fresh))

        if frozen:
            row = it - burn
            draws[row, :p] = alpha
            draws[row, p:2 * p] = sigma2
            draws[row, 2 * p:3 * p] = phi
            draws[row, 3 * p] = tau2
            if model.has_latent:
                latent[row] = model.w

    wall = time.perf_counter() - t_start
    rates = {"alpha": accept["alpha"] / kept if kept else 0.0,
             "tau2": accept["tau2"] / kept if kept else 0.0}
    for j in range(p):
        rates["sigma_phi_%d" % (j + 1)] = accept_pairs[j] / kept if kept else 0.0
    if model.has_latent and n_count:
        rates["latent"] = latent_acc / n_count
    return ChainResult(draws=draws, latent=latent, accept_rates=rates,
                       wall_time=wall, chain_index=chain_index)


def run_mcmc(dataset, run_config, priors=None, check_every=0):
    """Run all chains sequentially and assemble convergence diagnostics."""
    if priors is None:
        priors = default_priors(dataset.sites, dataset.p)
    if priors.p != dataset.p:
        raise DataError("prior dimension %d does not match p=%d"
                        % (priors.p, dataset.p))
    chains = [run_chain(run_config.model, dataset, run_config, priors, c,
                        check_every=check_every)
              for c in range(run_config.chains)]
    names = param_names(dataset.p)
    kept = chains[0].draws.shape[0]
    rh, es = {}, {}
    for k, name in enumerate(names):
        per_chain = [c.draws[:, k] for c in chains]
        rh[name] = (rhat(per_chain)
                    if len(chains) >= 2 and kept >= 4 else None)
        es[name] = (float(sum(ess(d) for d in per_chain))
                    if kept >= 10 else None)
    return PosteriorSamples(model=run_config.model, M=run_config.M,
                            param_names=names, chains=chains, rhat=rh, ess=es,
                            burn_in=run_config.burn_in)


# ---------------------------------------------------------------------------
# external formats


def save_draws(samples, path):
    """One CSV row per draw: chain, iteration, parameters (natural scale)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("chain,iteration," + ",".join(samples.param_names) + "\n")
        for c in samples.chains:
            for row in range(c.draws.shape[0]):
                it = samples.burn_in + row + 1
                vals = ",".join(_fmt(v) for v in c.draws[row])
                fh.write("%d,%d,%s\n" % (c.chain_index + 1, it, vals))


def load_draws(path):
    """Read a draws CSV back into (param_names, list of per-chain arrays)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["chain", "iteration"]:
            raise DataError("%s: not a draws CSV" % path)
        names = header[2:]
        by_chain = {}
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            by_chain.setdefault(int(parts[0]), []).append(
                [float(v) for v in parts[2:]])
    return names, [np.asarray(by_chain[k], dtype=float)
                   for k in sorted(by_chain)]


def save_diagnostics(samples, path):
    import json

    doc = {
        "model": samples.model,
        "M": samples.M,
        "chains": len(samples.chains),
        "kept_draws": samples.n_draws,
        "burn_in": samples.burn_in,
        "rhat": samples.rhat,
        "ess": samples.ess,
        "acceptance": {str(c.chain_index + 1): c.accept_rates
                       for c in samples.chains},
        "wall_time_seconds": {str(c.chain_index + 1): c.wall_time
                              for c in samples.chains},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_latent(samples, path_bin, path_json):
    """Latent draws in row-major little-endian float64 with a JSON sidecar."""
    import json

    mats = [c.latent for c in samples.chains if c.latent is not None]
    if not mats:
        raise DataError("model kind %r holds no latent draws" % samples.model)
    full = np.vstack(mats).astype("<f8")
    full.tofile(path_bin)
    with open(path_json, "w", encoding="utf-8") as fh:
        json.dump({"shape": list(full.shape), "dtype": "<f8", "order": "C"},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_latent(path_bin, path_json):
    import json

    with open(path_json, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    arr = np.fromfile(path_bin, dtype=meta["dtype"])
    return arr.reshape(meta["shape"])
