"""Core data containers, validation, and file/config IO.

The dataset file format is CSV with one comment-style header record carrying
the detection limit, e.g.::

    # L=0.25
    x,y,z,censored,x1,x2
    0.1,0.2,0.25,1,1.0,-0.3
    ...

Censored rows (``censored=1``) must hold ``z`` equal to the detection limit.
Floats are written with 17 significant digits so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

MODEL_KINDS = ("full-latent", "latent-vecchia", "latent-free")


def _fmt(x):
    return format(float(x), ".17g")


class DataError(ValueError):
    """Raised for malformed datasets or configs."""


@dataclass(frozen=True)
class Dataset:
    """Spatial observations with optional left-censoring.

    Attributes
    ----------
    sites : (n, 2) float array
        Planar coordinates.
    X : (n, p) float array
        Design matrix; column 0 may be an all-ones intercept.
    Z : (n,) float array
        Responses; censored entries hold the detection limit L.
    censored : (n,) bool array
        True where only Z <= L was observed.
    L : float
        Global detection limit (same units as Z).
    """

    sites: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    censored: np.ndarray
    L: float

    def __post_init__(self):
        sites = np.ascontiguousarray(np.asarray(self.sites, dtype=float))
        X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        Z = np.ascontiguousarray(np.asarray(self.Z, dtype=float))
        cen = np.ascontiguousarray(np.asarray(self.censored, dtype=bool))
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "censored", cen)
        object.__setattr__(self, "L", float(self.L))
        if sites.ndim != 2 or sites.shape[1] != 2:
            raise DataError("sites must be an (n, 2) array")
        n = sites.shape[0]
        if X.ndim != 2 or X.shape[0] != n:
            raise DataError("X must be an (n, p) array matching sites")
        if Z.shape != (n,) or cen.shape != (n,):
            raise DataError("Z and censored must be length-n vectors")
        if not np.isfinite(sites).all():
            raise DataError("non-finite coordinate")
        if not np.isfinite(X).all():
            raise DataError("non-finite covariate value")
        if not np.isfinite(Z).all() or not math.isfinite(self.L):
            raise DataError("non-finite response or detection limit")
        bad = np.nonzero(cen & (Z != self.L))[0]
        if bad.size:
            raise DataError(
                "censored row %d has z=%r but L=%r" % (bad[0], Z[bad[0]], self.L)
            )

    @property
    def n(self):
        return self.sites.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def n_censored(self):
        return int(self.censored.sum())


@dataclass(frozen=True)
class SvcParams:
    """Model parameters: fixed effects plus per-covariate GP hyperparameters.

    alpha[j] is the global mean of coefficient field j, (sigma2[j], phi[j])
    its exponential-kernel variance and decay rate, tau2 the nugget variance.
    """

    alpha: np.ndarray
    sigma2: np.ndarray
    phi: np.ndarray
    tau2: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.atleast_1d(np.asarray(self.alpha, float)))
        object.__setattr__(self, "sigma2", np.atleast_1d(np.asarray(self.sigma2, float)))
        object.__setattr__(self, "phi", np.atleast_1d(np.asarray(self.phi, float)))
        object.__setattr__(self, "tau2", float(self.tau2))

    @property
    def p(self):
        return self.alpha.shape[0]


def validate_params(params, p):
    """Check SvcParams invariants against covariate count p; raise DataError."""
    if params.alpha.shape != (p,) or params.sigma2.shape != (p,) or params.phi.shape != (p,):
        raise DataError("parameter length mismatch: expected p=%d" % p)
    arrs = np.concatenate([params.alpha, params.sigma2, params.phi, [params.tau2]])
    if not np.isfinite(arrs).all():
        raise DataError("non-finite parameter")
    if np.any(params.sigma2 <= 0):
        raise DataError("sigma2 must be > 0")
    if np.any(params.phi <= 0):
        raise DataError("phi must be > 0")
    if params.tau2 <= 0:
        raise DataError("tau2 must be > 0")


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyperparameters.

    Gaussian (mean, sd) per alpha_j; inverse-gamma (shape, scale) per sigma2_j
    and for tau2; gamma (shape, rate) per phi_j.
    """

    alpha_mean: np.ndarray
    alpha_sd: np.ndarray
    sigma2_shape: np.ndarray
    sigma2_scale: np.ndarray
    phi_shape: np.ndarray
    phi_rate: np.ndarray
    tau2_shape: float
    tau2_scale: float

    def __post_init__(self):
        for name in ("alpha_mean", "alpha_sd", "sigma2_shape", "sigma2_scale",
                     "phi_shape", "phi_rate"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), float)))
        object.__setattr__(self, "tau2_shape", float(self.tau2_shape))
        object.__setattr__(self, "tau2_scale", float(self.tau2_scale))
        pos = np.concatenate([self.alpha_sd, self.sigma2_shape, self.sigma2_scale,
                              self.phi_shape, self.phi_rate,
                              [self.tau2_shape, self.tau2_scale]])
        if not np.isfinite(pos).all() or np.any(pos <= 0):
            raise DataError("prior sd/shape/scale/rate values must be strictly positive")

    @property
    def p(self):
        return self.alpha_mean.shape[0]


def default_priors(sites, p):
    """Weakly informative, scale-aware defaults.

    alpha_j ~ N(0, 10^2); sigma2_j, tau2 ~ InvGamma(2, 1);
    phi_j ~ Gamma(2, rate 2/phi0) with phi0 = 10 / max pairwise distance,
    so the prior mean decay corresponds to an effective range of a tenth
    of the domain diameter.
    """
    sites = np.asarray(sites, float)
    d = np.sqrt(((sites[:, None, :] - sites[None, :, :]) ** 2).sum(-1))
    maxdist = float(d.max())
    if maxdist <= 0:
        maxdist = 1.0
    phi0 = 10.0 / maxdist
    return PriorConfig(
        alpha_mean=np.zeros(p),
        alpha_sd=np.full(p, 10.0),
        sigma2_shape=np.full(p, 2.0),
        sigma2_scale=np.full(p, 1.0),
        phi_shape=np.full(p, 2.0),
        phi_rate=np.full(p, 2.0 / phi0),
        tau2_shape=2.0,
        tau2_scale=1.0,
    )


@dataclass(frozen=True)
class RunConfig:
    """MCMC / simulation run settings."""

    model: str = "latent-free"
    M: int = 30
    chains: int = 4
    iterations: int = 2000
    burn_in: int = 1000
    seed: int = 0
    censoring_level: float = 0.0
    out_dir: str = ""
    joint_predictions: bool = False
    stage1_noise_inflation: bool = False

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise DataError("unknown model kind %r" % (self.model,))
        if self.M < 1:
            raise DataError("M must be >= 1")
        if self.chains < 1:
            raise DataError("chains must be >= 1")
        if not (0 <= self.burn_in < self.iterations):
            raise DataError("burn-in must satisfy 0 <= burn_in < iterations")
        if not (0.0 <= self.censoring_level < 1.0):
            raise DataError("censoring level must lie in [0, 1)")


def save_dataset(dataset, path):
    """Write a Dataset to CSV with the `# L=` header record."""
    p = dataset.p
    cols = ["x", "y", "z", "censored"] + ["x%d" % (j + 1) for j in range(p)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# L=%s\n" % _fmt(dataset.L))
        fh.write(",".join(cols) + "\n")
        for i in range(dataset.n):
            row = [_fmt(dataset.sites[i, 0]), _fmt(dataset.sites[i, 1]),
                   _fmt(dataset.Z[i]), "1" if dataset.censored[i] else "0"]
            row += [_fmt(v) for v in dataset.X[i]]
            fh.write(",".join(row) + "\n")


def load_dataset(path):
    """Read and validate a Dataset written by save_dataset (or by hand)."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("#"):
            raise DataError("%s: missing '# L=<value>' header record" % path)
        body = first.lstrip("#").strip()
        if not body.startswith("L="):
            raise DataError("%s: header record must look like '# L=<value>'" % path)
        try:
            L = float(body[2:])
        except ValueError as exc:
            raise DataError("%s: cannot parse detection limit: %s" % (path, exc))
        header = fh.readline().strip()
        names = [c.strip() for c in header.split(",")]
        if names[:4] != ["x", "y", "z", "censored"]:
            raise DataError("%s: expected columns x,y,z,censored,x1..xp, got %r"
                            % (path, header))
        p = len(names) - 4
        if p < 1 or names[4:] != ["x%d" % (j + 1) for j in range(p)]:
            raise DataError("%s: covariate columns must be named x1..xp" % path)
        sites, X, Z, cen = [], [], [], []
        for lineno, line in enumerate(fh, start=3):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4 + p:
                raise DataError("%s line %d: expected %d fields, got %d"
                                % (path, lineno, 4 + p, len(parts)))
            try:
                vals = [float(v) for v in parts[:3]]
                cflag = parts[3].strip()
                if cflag not in ("0", "1"):
                    raise ValueError("censored flag must be 0 or 1")
                xs = [float(v) for v in parts[4:]]
            except ValueError as exc:
                raise DataError("%s line %d: %s" % (path, lineno, exc))
            sites.append(vals[:2])
            Z.append(vals[2])
            cen.append(cflag == "1")
            X.append(xs)
        if not sites:
            raise DataError("%s: no data rows" % path)
        cen = np.array(cen, bool)
        Z = np.array(Z, float)
        bad = np.nonzero(cen & (Z != L))[0]
        if bad.size:
            raise DataError("%s row %d: censored row holds z=%r, expected L=%r"
                            % (path, bad[0] + 1, Z[bad[0]], L))
        return Dataset(sites=np.array(sites), X=np.array(X), Z=Z, censored=cen, L=L)


# ---------------------------------------------------------------------------
# JSON config document: {"run": {...}, "priors": {...}, "params": {...}}


_RUN_KEYS = {"model", "M", "chains", "iterations", "burn_in", "seed",
             "censoring_level", "out_dir", "joint_predictions",
             "stage1_noise_inflation"}
_PRIOR_KEYS = {"alpha_mean", "alpha_sd", "sigma2_shape", "sigma2_scale",
               "phi_shape", "phi_rate", "tau2_shape", "tau2_scale"}
_PARAM_KEYS = {"alpha", "sigma2", "phi", "tau2"}


def _reject_unknown(d, allowed, where):
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise DataError("unknown key%s %s in %s section"
                        % ("s" if len(unknown) > 1 else "", unknown, where))


def load_config(path):
    """Parse the single JSON config document.

    Returns a dict with optional entries 'run' (RunConfig), 'priors'
    (PriorConfig) and 'params' (SvcParams). Unknown keys anywhere are
    rejected.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError("%s: invalid JSON: %s" % (path, exc))
    if not isinstance(doc, dict):
        raise DataError("%s: top level must be a JSON object" % path)
    _reject_unknown(doc, {"run", "priors", "params"}, "top-level")
    out = {}
    if "run" in doc:
        _reject_unknown(doc["run"], _RUN_KEYS, "run")
        out["run"] = RunConfig(**doc["run"])
    if "priors" in doc:
        _reject_unknown(doc["priors"], _PRIOR_KEYS, "priors")
        out["priors"] = PriorConfig(**doc["priors"])
    if "params" in doc:
        _reject_unknown(doc["params"], _PARAM_KEYS, "params")
        out["params"] = SvcParams(**doc["params"])
    return out


def save_config(path, run=None, priors=None, params=None):
    doc = {}
    if run is not None:
        doc["run"] = {
            "model": run.model, "M": run.M, "chains": run.chains,
            "iterations": run.iterations, "burn_in": run.burn_in,
            "seed": run.seed, "censoring_level": run.censoring_level,
            "out_dir": run.out_dir, "joint_predictions": run.joint_predictions,
            "stage1_noise_inflation": run.stage1_noise_inflation,
        }
    if priors is not None:
        doc["priors"] = {
            "alpha_mean": list(priors.alpha_mean), "alpha_sd": list(priors.alpha_sd),
            "sigma2_shape": list(priors.sigma2_shape),
            "sigma2_scale": list(priors.sigma2_scale),
            "phi_shape": list(priors.phi_shape), "phi_rate": list(priors.phi_rate),
            "tau2_shape": priors.tau2_shape, "tau2_scale": priors.tau2_scale,
        }
    if params is not None:
        doc["params"] = {
            "alpha": list(params.alpha), "sigma2": list(params.sigma2),
            "phi": list(params.phi), "tau2": params.tau2,
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
