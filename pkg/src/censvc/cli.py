"""Command-line interface.

Subcommands: simulate, fit, predict, validate-likelihood, compare-methods,
score. Every command is deterministic given its flags, input files, and
--seed; re-runs are byte-identical except for the timestamp inside
manifest.json (and wall-clock measurements in timing.csv, which are
measurements, not derived quantities).

Exit codes: 0 success; 2 usage or validation error (the message names the
offending flag or file); 3 the MCMC run finished but some split R-hat
exceeded 1.05 (outputs are still written); 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import (DataError, RunConfig, default_priors, load_config,
                   load_dataset, save_dataset, validate_params)
from .evaluate import (LikelihoodErrorConfig, MethodComparisonConfig,
                       likelihood_error_experiment, mean_crps,
                       method_comparison_experiment, study_params, rmse,
                       write_manifest)
from .mcmc import (PosteriorSamples, ChainResult, load_draws, load_latent,
                   run_mcmc, save_diagnostics, save_draws, save_latent)
from .predict import (load_draw_matrix, load_grid, load_prediction,
                      posterior_predictive, save_draw_matrix, save_prediction)
from .simulate import apply_censoring, save_truth, simulate_svc_dataset

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONVERGENCE = 3
EXIT_NUMERICAL = 4

_NUMERICAL_ERRORS = (np.linalg.LinAlgError, FloatingPointError,
                     OverflowError, ZeroDivisionError)


def _require_file(path, flag):
    if not Path(path).is_file():
        raise DataError("%s: file not found: %s" % (flag, path))
    return Path(path)


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _int_list(text, flag):
    try:
        vals = [int(t) for t in text.split(",") if t != ""]
    except ValueError:
        raise DataError("%s: expected a comma-separated list of integers, "
                        "got %r" % (flag, text))
    if not vals:
        raise DataError("%s: empty list" % flag)
    return vals


def _float_list(text, flag):
    try:
        vals = [float(t) for t in text.split(",") if t != ""]
    except ValueError:
        raise DataError("%s: expected a comma-separated list of numbers, "
                        "got %r" % (flag, text))
    if not vals:
        raise DataError("%s: empty list" % flag)
    return vals


def _add_common(sub):
    sub.add_argument("--seed", type=int, default=0,
                     help="integer RNG seed (default 0)")
    sub.add_argument("--threads", type=int, default=1,
                     help="worker threads (accepted for compatibility; "
                          "execution is sequential)")
    sub.add_argument("--out", required=True,
                     help="output directory (created if missing)")


def _cmd_simulate(args):
    if args.config is not None:
        _require_file(args.config, "--config")
        params = load_config(args.config).get("params")
        if params is None:
            raise DataError("--config: no \"params\" section in %s"
                            % args.config)
    elif args.p == 2:
        params = study_params()
    else:
        raise DataError("--config is required when --p != 2 "
                        "(no default parameter set of that size)")
    validate_params(params, args.p)
    if not 0.0 <= args.censoring < 1.0:
        raise DataError("--censoring: must lie in [0, 1), got %s"
                        % args.censoring)
    ds, beta = simulate_svc_dataset(args.n, args.p, params, seed=args.seed)
    ds = apply_censoring(ds, args.censoring)
    out = _out_dir(args)
    save_dataset(ds, out / "data.csv")
    save_truth(beta, ds.sites, out / "truth.csv")
    write_manifest(out / "manifest.json", "simulate",
                   {"n": args.n, "p": args.p, "censoring": args.censoring,
                    "config": args.config}, args.seed)
    print("wrote %s (%d sites, %d censored)"
          % (out / "data.csv", ds.n, ds.n_censored))
    return EXIT_OK


def _cmd_fit(args):
    _require_file(args.data, "--data")
    ds = load_dataset(args.data)
    rc = RunConfig(model=args.model, M=args.M, chains=args.chains,
                   iterations=args.iters, burn_in=args.burnin, seed=args.seed)
    priors = default_priors(ds.sites, ds.p)
    samples = run_mcmc(ds, rc, priors)
    out = _out_dir(args)
    save_draws(samples, out / "draws.csv")
    save_diagnostics(samples, out / "diagnostics.json")
    if samples.chains[0].latent is not None:
        save_latent(samples, out / "latent.bin", out / "latent.json")
    write_manifest(out / "manifest.json", "fit",
                   {"model": args.model, "data": args.data, "M": args.M,
                    "chains": args.chains, "iters": args.iters,
                    "burnin": args.burnin}, args.seed)
    bad = {k: v for k, v in samples.rhat.items()
           if v is not None and v > 1.05}
    if bad:
        worst = max(bad, key=bad.get)
        print("warning: split R-hat above 1.05 for %d parameter(s); "
              "worst %s = %.4f (outputs written to %s)"
              % (len(bad), worst, bad[worst], out), file=sys.stderr)
        return EXIT_CONVERGENCE
    print("fit complete: %d kept draws per chain, outputs in %s"
          % (samples.chains[0].draws.shape[0], out))
    return EXIT_OK


def _load_samples_dir(path, model, M, p):
    """Rebuild a PosteriorSamples shell from a fit output directory."""
    d = Path(path)
    _require_file(d / "draws.csv", "--fit-dir")
    names, per_chain = load_draws(d / "draws.csv")
    latents = [None] * len(per_chain)
    if (d / "latent.bin").is_file():
        stacked = load_latent(d / "latent.bin", d / "latent.json")
        kept = per_chain[0].shape[0]
        if stacked.shape[0] != kept * len(per_chain):
            raise DataError("--fit-dir: latent.bin has %d rows, draws.csv "
                            "implies %d" % (stacked.shape[0],
                                            kept * len(per_chain)))
        latents = [stacked[c * kept:(c + 1) * kept]
                   for c in range(len(per_chain))]
    chains = [ChainResult(draws=dr, latent=la, accept_rates={},
                          wall_time=0.0, chain_index=i)
              for i, (dr, la) in enumerate(zip(per_chain, latents))]
    if chains[0].draws.shape[1] != 3 * p + 1:
        raise DataError("--fit-dir: draws.csv has %d parameter columns, "
                        "expected %d for p=%d covariates"
                        % (chains[0].draws.shape[1], 3 * p + 1, p))
    return PosteriorSamples(model=model, M=M, param_names=names,
                            chains=chains, rhat={}, ess={}, burn_in=0)


def _cmd_predict(args):
    _require_file(args.data, "--data")
    _require_file(args.grid, "--grid")
    ds = load_dataset(args.data)
    grid_sites, grid_X = load_grid(args.grid)
    if grid_X.shape[1] != ds.p:
        raise DataError("--grid: grid has %d covariate columns, data has %d"
                        % (grid_X.shape[1], ds.p))
    samples = _load_samples_dir(args.fit_dir, args.model, args.M, ds.p)
    pred = posterior_predictive(samples, ds, grid_sites, grid_X, args.model,
                                args.M, thin=args.thin, seed=args.seed,
                                joint=args.joint,
                                inflate_noise=args.inflate_noise)
    out = _out_dir(args)
    save_prediction(out / "predictions.csv", pred)
    save_draw_matrix(out / "pred_draws.bin", out / "pred_draws.json",
                     pred.draws)
    write_manifest(out / "manifest.json", "predict",
                   {"model": args.model, "data": args.data, "grid": args.grid,
                    "fit_dir": args.fit_dir, "M": args.M, "thin": args.thin,
                    "joint": args.joint,
                    "inflate_noise": args.inflate_noise}, args.seed)
    print("wrote %s (%d sites)" % (out / "predictions.csv", pred.mean.size))
    return EXIT_OK


def _cmd_validate_likelihood(args):
    cfg = LikelihoodErrorConfig(
        replicates=args.replicates,
        M_list=tuple(_int_list(args.M, "--M")),
        levels=tuple(_float_list(args.levels, "--levels")),
        n=args.n, seed=args.seed, mc_samples=args.mc_samples,
        mc_randomizations=args.mc_randomizations)
    for lv in cfg.levels:
        if not 0.0 <= lv < 1.0:
            raise DataError("--levels: censoring level %s outside [0, 1)" % lv)
    out = _out_dir(args)
    rows, _ = likelihood_error_experiment(cfg, out_dir=out)
    print("wrote %s (%d rows)" % (out / "results.csv", len(rows)))
    return EXIT_OK


def _cmd_compare_methods(args):
    cfg = MethodComparisonConfig(
        models=tuple(args.models.split(",")),
        M_list=tuple(_int_list(args.M, "--M")),
        levels=tuple(_float_list(args.levels, "--levels")),
        replicates=args.replicates, n_train=args.n_train,
        n_test=args.n_test, chains=args.chains, iterations=args.iters,
        burn_in=args.burnin, thin=args.thin, seed=args.seed)
    from .data import MODEL_KINDS

    for m in cfg.models:
        if m not in MODEL_KINDS:
            raise DataError("--models: unknown model kind %r (choose from %s)"
                            % (m, ", ".join(MODEL_KINDS)))
    out = _out_dir(args)
    rows, _ = method_comparison_experiment(cfg, out_dir=out)
    print("wrote %s (%d rows)" % (out / "results.csv", len(rows)))
    return EXIT_OK


def _load_truth_values(path):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[1] != 3:
        raise DataError("--truth: expected 3 columns x,y,value, got %d"
                        % rows.shape[1])
    return rows[:, 2]


def _cmd_score(args):
    _require_file(args.pred, "--pred")
    _require_file(args.truth, "--truth")
    pred_sites, mean, sd = load_prediction(args.pred)
    truth = _load_truth_values(args.truth)
    if truth.size != mean.size:
        raise DataError("--truth: %d rows but --pred has %d"
                        % (truth.size, mean.size))
    scores = {"rmse": rmse(mean, truth), "n_sites": int(mean.size)}
    if args.draw_matrix is not None:
        _require_file(args.draw_matrix, "--draw-matrix")
        sidecar = Path(args.draw_matrix).with_suffix(".json")
        _require_file(sidecar, "--draw-matrix")
        dm = load_draw_matrix(args.draw_matrix, sidecar)
        if dm.shape[1] != mean.size:
            raise DataError("--draw-matrix: %d columns but --pred has %d "
                            "sites" % (dm.shape[1], mean.size))
        scores["mean_crps"] = mean_crps(dm, truth)
    out = _out_dir(args)
    with open(out / "scores.json", "w", encoding="utf-8") as fh:
        json.dump(scores, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out / "manifest.json", "score",
                   {"pred": args.pred, "truth": args.truth,
                    "draw_matrix": args.draw_matrix}, args.seed)
    print(json.dumps(scores, sort_keys=True))
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(
        prog="censvc",
        description="Bayesian spatially varying coefficient models for "
                    "left-censored spatial data")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic dataset")
    s.add_argument("--n", type=int, required=True, help="number of sites")
    s.add_argument("--p", type=int, required=True, help="number of covariates")
    s.add_argument("--config", default=None,
                   help="JSON config supplying the \"params\" section")
    s.add_argument("--censoring", type=float, default=0.0,
                   help="fraction of responses below the detection limit")
    _add_common(s)
    s.set_defaults(func=_cmd_simulate)

    s = sub.add_parser("fit", help="run MCMC on a dataset")
    s.add_argument("--model", required=True,
                   choices=["full-latent", "latent-vecchia", "latent-free"])
    s.add_argument("--data", required=True, help="dataset CSV")
    s.add_argument("--M", type=int, default=30, help="conditioning-set size")
    s.add_argument("--chains", type=int, default=4)
    s.add_argument("--iters", type=int, default=2000,
                   help="total iterations per chain")
    s.add_argument("--burnin", type=int, default=1000)
    _add_common(s)
    s.set_defaults(func=_cmd_fit)

    s = sub.add_parser("predict", help="posterior predictive on a site grid")
    s.add_argument("--model", required=True,
                   choices=["full-latent", "latent-vecchia", "latent-free"])
    s.add_argument("--data", required=True, help="dataset CSV used for the fit")
    s.add_argument("--grid", required=True, help="grid CSV (x,y,x1..xp)")
    s.add_argument("--fit-dir", required=True,
                   help="directory written by the fit command")
    s.add_argument("--M", type=int, default=30)
    s.add_argument("--thin", type=int, default=10,
                   help="use every thin-th kept draw")
    s.add_argument("--joint", action="store_true",
                   help="propagate draws sequentially instead of per-site")
    s.add_argument("--inflate-noise", action="store_true",
                   help="add first-stage imputation variance to the nugget")
    _add_common(s)
    s.set_defaults(func=_cmd_predict)

    s = sub.add_parser("validate-likelihood",
                       help="compare the approximate censored likelihood "
                            "against the Monte Carlo oracle")
    s.add_argument("--replicates", type=int, default=50)
    s.add_argument("--M", default="10,30,50",
                   help="comma-separated conditioning-set sizes")
    s.add_argument("--levels", default="0,0.05,0.25,0.5,0.75",
                   help="comma-separated censoring levels")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--mc-samples", type=int, default=4096)
    s.add_argument("--mc-randomizations", type=int, default=8)
    _add_common(s)
    s.set_defaults(func=_cmd_validate_likelihood)

    s = sub.add_parser("compare-methods",
                       help="fit all model kinds across M and censoring "
                            "levels; score recovery, timing, prediction")
    s.add_argument("--models", default="full-latent,latent-vecchia,latent-free")
    s.add_argument("--M", default="10,30,50")
    s.add_argument("--levels", default="0.25")
    s.add_argument("--replicates", type=int, default=1)
    s.add_argument("--n-train", type=int, default=200)
    s.add_argument("--n-test", type=int, default=400)
    s.add_argument("--chains", type=int, default=4)
    s.add_argument("--iters", type=int, default=2000)
    s.add_argument("--burnin", type=int, default=1000)
    s.add_argument("--thin", type=int, default=10)
    _add_common(s)
    s.set_defaults(func=_cmd_compare_methods)

    s = sub.add_parser("score", help="RMSE / CRPS of predictions vs truth")
    s.add_argument("--pred", required=True, help="predictions CSV")
    s.add_argument("--truth", required=True, help="CSV with columns x,y,value")
    s.add_argument("--draw-matrix", default=None,
                   help="binary draw matrix for CRPS (optional)")
    _add_common(s)
    s.set_defaults(func=_cmd_score)

    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except _NUMERICAL_ERRORS as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
