"""Release acceptance suite.

Every check prints exactly one line of the form

    ACCEPTANCE <tag> PASS|FAIL — <measured values vs. threshold>

followed by a hard assertion, so `pytest tests/test_acceptance.py -v -s`
doubles as the release report. The heavyweight likelihood study (criteria
2 and 3) runs once and is shared between the two tests.
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from censvc import (Dataset, LikelihoodErrorConfig, MethodComparisonConfig,
                    RunConfig, SvcParams, apply_censoring, build_factor,
                    conditioning_sets, crps_empirical,
                    cross_cov_matrix, default_priors, dense_cov_matrix,
                    dense_gaussian_loglik,
                    likelihood_error_experiment, load_prediction,
                    method_comparison_experiment, mills_adjust,
                    posterior_predictive, predict_full_latent,
                    predict_latent_free, predict_latent_vecchia,
                    prediction_order, response_loglik, run_mcmc, save_config,
                    save_grid, simulate_svc_dataset, sparse_U)
from censvc.cli import main as cli_main
from censvc.evaluate import study_params
from censvc.ordering import NeighborSets


def _report(tag, ok, detail):
    line = "ACCEPTANCE %s %s — %s" % (tag, "PASS" if ok else "FAIL", detail)
    print(line)
    assert ok, line


def _random_instance(rng, n, p, seed):
    params = SvcParams(alpha=rng.normal(0, 3, p).tolist(),
                       sigma2=rng.uniform(0.5, 20, p).tolist(),
                       phi=rng.uniform(2, 40, p).tolist(),
                       tau2=float(1e-9 * rng.uniform(0.5, 2)))
    ds, _ = simulate_svc_dataset(n, p, params, seed=seed)
    return ds, params


# ---------------------------------------------------------------------------
# 1. exactness at unrestricted conditioning


def test_criterion_01_exactness_chain():
    rng = np.random.default_rng(2026)
    t0 = time.time()
    worst_ll = 0.0
    worst_pred = 0.0
    for i in range(20):
        n = 20 if i % 2 == 0 else 50
        p = (1, 2, 3)[i % 3]
        ds, params = _random_instance(rng, n, p, seed=1000 + i)

        dense = dense_gaussian_loglik(ds, params)
        approx = response_loglik(ds, params, M=n - 1)
        worst_ll = max(worst_ll, abs(approx - dense) / abs(dense))

        n_p = 10
        pred_sites = rng.uniform(size=(n_p, 2))
        pred_X = np.column_stack([np.ones(n_p), rng.normal(size=(n_p, p - 1))])
        full_M = n + n_p - 1
        mu_a, _ = predict_full_latent(ds.Z, params, ds, pred_sites, pred_X,
                                      rng=np.random.default_rng(i))
        mu_b, _ = predict_latent_vecchia(ds.Z, params, ds, pred_sites, pred_X,
                                         M=full_M, rng=np.random.default_rng(i))
        mu_c, _ = predict_latent_free(ds, params, pred_sites, pred_X,
                                      M=full_M, rng=np.random.default_rng(i))
        den = np.linalg.norm(mu_a)
        for other in (mu_b, mu_c):
            worst_pred = max(worst_pred, np.linalg.norm(other - mu_a) / den)
    elapsed = time.time() - t0
    ok = worst_ll < 1e-8 and worst_pred < 1e-6 and elapsed < 60
    _report("1", ok,
            "20 instances: max loglik rel err %.2e (< 1e-8), max predictor "
            "disagreement %.2e (< 1e-6), %.1fs (< 60s)"
            % (worst_ll, worst_pred, elapsed))


# ---------------------------------------------------------------------------
# 2 & 3. censored-likelihood accuracy against the exact oracle (shared run)


@pytest.fixture(scope="module")
def likelihood_study():
    cfg = LikelihoodErrorConfig(replicates=50, M_list=(10, 30, 50),
                                levels=(0.05, 0.25, 0.5, 0.75), n=200, p=2,
                                seed=0, mc_samples=4096, mc_randomizations=8)
    t0 = time.time()
    rows, summary = likelihood_error_experiment(cfg)
    return {"rows": rows, "summary": summary, "elapsed": time.time() - t0}


def _cell(summary, M, level):
    return next(s for s in summary if s["M"] == M and s["level"] == level)


def test_criterion_02_censored_likelihood_accuracy(likelihood_study):
    summary = likelihood_study["summary"]
    elapsed = likelihood_study["elapsed"]
    meds = {lv: _cell(summary, 30, lv)["median_delta_rel_pct"]
            for lv in (0.05, 0.25, 0.5)}
    med75 = _cell(summary, 50, 0.75)["median_delta_rel_pct"]
    ok = all(v < 2.0 for v in meds.values()) and med75 < 10.0 \
        and elapsed < 1800
    _report("2", ok,
            "median rel err at M=30: " +
            ", ".join("%.3f%% (lv %.2f)" % (meds[lv], lv) for lv in meds) +
            " (each < 2%%); M=50 lv 0.75: %.3f%% (< 10%%); %.0fs (< 1800s)"
            % (med75, elapsed))


def test_criterion_03_error_monotone_in_M(likelihood_study):
    # Trend checks compare medians of the per-replicate error distribution
    # across M, so the slack scale is the sampling SE of those medians
    # (the oracle's own MC noise is orders of magnitude smaller and is
    # covered separately by the accuracy check above).
    summary = likelihood_study["summary"]
    checks = []
    ok = True
    for lv in (0.05, 0.25, 0.5):
        med = {M: _cell(summary, M, lv)["median_delta_rel_pct"]
               for M in (10, 30, 50)}
        se = {M: _cell(summary, M, lv)["median_se_pct"]
              for M in (10, 30, 50)}
        mono = (med[30] <= med[10] + 3.0 * math.hypot(se[10], se[30])
                and med[50] <= med[30] + 3.0 * math.hypot(se[30], se[50]))
        # improvement 30->50 must not exceed improvement 10->30:
        # med10 - 2*med30 + med50 >= 0 up to the same 3-SE scale
        curv = med[10] - 2.0 * med[30] + med[50]
        curv_se = math.sqrt(se[10] ** 2 + 4.0 * se[30] ** 2 + se[50] ** 2)
        concave = curv >= -3.0 * curv_se
        ok = ok and mono and concave
        checks.append("lv %.2f: %.3f/%.3f/%.3f%% (3SE %.3f)%s" %
                      (lv, med[10], med[30], med[50],
                       3.0 * math.hypot(se[10], se[30]),
                       "" if (mono and concave) else " VIOLATED"))
    _report("3", ok, "medians over M=10/30/50 with 3-SE slack — "
            + "; ".join(checks))


# ---------------------------------------------------------------------------
# 4. parameter recovery across seeded replicates


def test_criterion_04_parameter_recovery():
    truth = study_params()
    t0 = time.time()
    worst_rhat = 0.0
    covered = 0
    for rep in range(10):
        base, _ = simulate_svc_dataset(200, 2, truth, seed=4000 + rep)
        ds = apply_censoring(base, 0.25)
        # Scale-aware variance priors: IG(2, v_hat/p) with v_hat the LS
        # residual variance, as a practitioner would choose for data whose
        # variance sits orders of magnitude above O(1). The stock IG(2, 1)
        # default concentrates on (0.2, 3) and, with the short-range/nugget
        # split only weakly identified here, subsidizes a degenerate
        # nugget-absorbs-everything mode that stalls chains.
        obs = ~ds.censored
        alpha_ls, *_ = np.linalg.lstsq(ds.X[obs], ds.Z[obs], rcond=None)
        v_hat = float((ds.Z[obs] - ds.X[obs] @ alpha_ls).var())
        priors = replace(default_priors(ds.sites, ds.p),
                         sigma2_scale=np.full(ds.p, v_hat / ds.p))
        rc = RunConfig(model="latent-free", M=30, chains=4, iterations=2000,
                       burn_in=1000, seed=rep)
        samples = run_mcmc(ds, rc, priors=priors)
        worst_rhat = max(worst_rhat,
                         max(v for v in samples.rhat.values()
                             if v is not None))
        stacked = samples.stacked_draws()
        hit = True
        for j, target in enumerate(truth.alpha):
            lo, hi = np.percentile(stacked[:, j], [2.5, 97.5])
            hit = hit and (lo <= target <= hi)
        covered += int(hit)
    elapsed = time.time() - t0
    ok = worst_rhat < 1.05 and covered >= 8 and elapsed < 1200
    _report("4", ok,
            "10 replicates: worst split R-hat %.4f (< 1.05), alpha CIs "
            "covered truth in %d/10 (>= 8), %.0fs (< 1200s)"
            % (worst_rhat, covered, elapsed))


# ---------------------------------------------------------------------------
# 5. the three samplers agree on the first coefficient


def test_criterion_05_method_consistency():
    truth = study_params()
    base, _ = simulate_svc_dataset(200, 2, truth, seed=5000)
    ds = apply_censoring(base, 0.25)
    t0 = time.time()
    intervals = {}
    for model in ("full-latent", "latent-vecchia", "latent-free"):
        rc = RunConfig(model=model, M=30, chains=4, iterations=2000,
                       burn_in=1000, seed=55)
        samples = run_mcmc(ds, rc)
        lo, hi = np.percentile(samples.stacked_draws()[:, 0], [2.5, 97.5])
        intervals[model] = (lo, hi)
    elapsed = time.time() - t0
    names = list(intervals)
    overlap = all(intervals[a][0] <= intervals[b][1]
                  and intervals[b][0] <= intervals[a][1]
                  for i, a in enumerate(names) for b in names[i + 1:])
    ok = overlap and elapsed < 1800
    _report("5", ok,
            "alpha_1 95%% CIs " +
            ", ".join("%s [%.2f, %.2f]" % (m, lo, hi)
                      for m, (lo, hi) in intervals.items()) +
            " mutually overlap: %s; %.0fs (< 1800s)" % (overlap, elapsed))


# ---------------------------------------------------------------------------
# 6. per-iteration cost ordering


@pytest.fixture(scope="module")
def warm_samplers():
    """Trigger all JIT compilation before anything is timed."""
    base, _ = simulate_svc_dataset(30, 2, study_params(), seed=1)
    ds = apply_censoring(base, 0.25)
    for model in ("latent-free", "full-latent"):
        run_mcmc(ds, RunConfig(model=model, M=5, chains=1, iterations=20,
                               burn_in=10, seed=0))


def _per_1000_iters(ds, model, M):
    rc = RunConfig(model=model, M=M, chains=1, iterations=1100, burn_in=100,
                   seed=9)
    samples = run_mcmc(ds, rc)
    return samples.chains[0].wall_time / 1100.0 * 1000.0


@pytest.mark.parametrize("M", [10, 30, 50])
def test_criterion_06_timing_direction(M, warm_samplers):
    base, _ = simulate_svc_dataset(200, 2, study_params(), seed=6000)
    ds = apply_censoring(base, 0.25)
    lf = _per_1000_iters(ds, "latent-free", M)
    fl = _per_1000_iters(ds, "full-latent", M)
    ok = lf < fl
    _report("6[M=%d]" % M, ok,
            "wall per 1000 iterations at n=200: latent-free %.2fs vs "
            "full-latent %.2fs (must be strictly less)" % (lf, fl))


# ---------------------------------------------------------------------------
# 7. held-out prediction quality degrades under censoring


def test_criterion_07_prediction_degradation():
    cfg = MethodComparisonConfig(models=("latent-free",), M_list=(50,),
                                 levels=(0.0, 0.5), replicates=5,
                                 n_train=200, n_test=400, p=2, chains=2,
                                 iterations=1500, burn_in=750, thin=10,
                                 seed=21)
    t0 = time.time()
    rows, _ = method_comparison_experiment(cfg)
    elapsed = time.time() - t0

    def metric(level, rep, key):
        return next(r[key] for r in rows
                    if r["level"] == level and r["replicate"] == rep)

    msgs = []
    ok = elapsed < 1800
    for key in ("rmse", "crps"):
        d = np.array([metric(0.5, r, key) - metric(0.0, r, key)
                      for r in range(5)])
        se = d.std(ddof=1) / math.sqrt(5)
        passed = d.mean() > -3.0 * se
        ok = ok and passed
        msgs.append("%s mean diff %+.4f (3-SE %.4f)%s"
                    % (key, d.mean(), 3 * se, "" if passed else " VIOLATED"))
    _report("7", ok, "censoring 0.5 vs 0.0 over 5 paired replicates: "
            + "; ".join(msgs) + "; %.0fs (< 1800s)" % elapsed)


# ---------------------------------------------------------------------------
# 8. truncated-normal mean against rejection sampling


def _rejection_mean(mu, sigma, L, total, seed):
    rng = np.random.default_rng(seed)
    s = s2 = 0.0
    k = 0
    for _ in range(10):
        x = rng.normal(mu, sigma, total // 10)
        x = x[x < L]
        s += x.sum()
        s2 += (x * x).sum()
        k += x.size
    mean = s / k
    var = (s2 - k * mean * mean) / (k - 1)
    return mean, math.sqrt(var / k)


def test_criterion_08_mills_ratio_oracle():
    analytic = mills_adjust(0.0, 1.0, 0.0)
    exact_ok = abs(analytic - (-0.7978845608)) < 1e-9
    worst_z = 0.0
    case = 0
    for mu in (-2.0, -0.5, 0.0, 1.0, 3.0):
        for sigma in (0.5, 2.0):
            for off in (-1.0, 1.0):
                L = mu + off * sigma
                got = mills_adjust(mu, sigma ** 2, L)
                ref, se = _rejection_mean(mu, sigma, L, 10_000_000,
                                          seed=800 + case)
                worst_z = max(worst_z, abs(got - ref) / se)
                case += 1
    ok = exact_ok and worst_z < 3.0
    _report("8", ok,
            "analytic case err %.1e (< 1e-9); %d rejection-sampled cases "
            "(1e7 proposals each): worst |z| %.2f (< 3)"
            % (abs(analytic + 0.7978845608), case, worst_z))


# ---------------------------------------------------------------------------
# 9. CRPS fast path equals the quadratic-cost definition


def test_criterion_09_crps_estimator():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 2001))
        draws = rng.normal(size=m) * rng.uniform(0.2, 3)
        y = rng.normal()
        brute = (np.abs(draws - y).mean()
                 - 0.5 * np.abs(draws[:, None] - draws[None, :]).mean())
        worst = max(worst, abs(crps_empirical(draws, y) - brute))
    ok = worst < 1e-10
    _report("9", ok, "100 cases with m <= 2000: max |fast - brute| %.2e "
            "(< 1e-10)" % worst)


# ---------------------------------------------------------------------------
# 10. conditional-simulation law of every predictor


def _hand_kriging_cov(ds, params, pred_sites, pred_X, M, tau2_on_obs):
    """Per-site conditional mean weights and variances, dense per-site."""
    n_p = pred_sites.shape[0]
    fvar = np.empty(n_p)
    for i in range(n_p):
        d2 = ((ds.sites - pred_sites[i]) ** 2).sum(axis=1)
        nbr = np.argsort(d2, kind="stable")[:M]
        C = dense_cov_matrix(ds.sites[nbr], ds.X[nbr], params,
                             include_nugget=False)
        if tau2_on_obs:
            C = C + params.tau2 * np.eye(M)
        c = cross_cov_matrix(ds.sites[nbr], ds.X[nbr],
                             pred_sites[[i]], pred_X[[i]], params)[:, 0]
        own = cross_cov_matrix(pred_sites[[i]], pred_X[[i]],
                               pred_sites[[i]], pred_X[[i]], params)[0, 0]
        fvar[i] = own - c @ np.linalg.solve(C, c)
    return fvar


def _check_law(tag, draws, mu_ref, cov_ref, reports):
    N = draws.shape[0]
    emp_mean = draws.mean(axis=0)
    emp_cov = np.cov(draws.T, ddof=1)
    se_mean = np.sqrt(np.diag(cov_ref) / N)
    z_mean = np.max(np.abs(emp_mean - mu_ref) / se_mean)
    dg = np.diag(cov_ref)
    se_cov = np.sqrt((np.outer(dg, dg) + cov_ref ** 2) / N)
    z_cov = np.max(np.abs(emp_cov - cov_ref) / se_cov)
    reports.append("%s mean-z %.2f cov-z %.2f" % (tag, z_mean, z_cov))
    return z_mean < 5.0 and z_cov < 5.0


def test_criterion_10_conditional_simulation_law():
    params = SvcParams(alpha=[1.0, -2.0], sigma2=[3.0, 2.0],
                       phi=[8.0, 12.0], tau2=0.3)
    base, _ = simulate_svc_dataset(40, 2, params, seed=1010)
    ds = apply_censoring(base, 0.25)
    rng = np.random.default_rng(7)
    n_p, M, N = 4, 12, 100_000
    pred_sites = rng.uniform(size=(n_p, 2))
    pred_X = np.column_stack([np.ones(n_p), rng.normal(size=n_p)])
    w_o = ds.Z
    reports = []
    ok = True

    # dense path: full joint Schur complement
    mu_a, dr_a = predict_full_latent(w_o, params, ds, pred_sites, pred_X,
                                     rng=np.random.default_rng(1), n_draws=N)
    C_oo = dense_cov_matrix(ds.sites, ds.X, params, include_nugget=False)
    C_po = cross_cov_matrix(pred_sites, pred_X, ds.sites, ds.X, params)
    C_pp = dense_cov_matrix(pred_sites, pred_X, params, include_nugget=False)
    cov_a = C_pp - C_po @ np.linalg.solve(C_oo, C_po.T)
    ok = _check_law("dense", dr_a, mu_a, cov_a, reports) and ok

    # independent latent kriging: diagonal law
    mu_b, dr_b = predict_latent_vecchia(w_o, params, ds, pred_sites, pred_X,
                                        M=M, rng=np.random.default_rng(2),
                                        n_draws=N)
    cov_b = np.diag(_hand_kriging_cov(ds, params, pred_sites, pred_X, M,
                                      tau2_on_obs=False))
    ok = _check_law("independent", dr_b, mu_b, cov_b, reports) and ok

    # joint sequential propagation: precision U_pp U_pp^T
    mu_c, dr_c = predict_latent_vecchia(w_o, params, ds, pred_sites, pred_X,
                                        M=M, rng=np.random.default_rng(3),
                                        n_draws=N, joint=True)
    stacked = np.vstack([ds.sites, pred_sites])
    stacked_X = np.vstack([ds.X, pred_X])
    perm = prediction_order(ds.sites, pred_sites)
    nbr = conditioning_sets(stacked, perm, M)
    fac = build_factor(stacked, stacked_X, params, nbr, include_nugget=False)
    U = sparse_U(fac).toarray()
    U_pp = U[ds.n:, ds.n:]
    cov_pos = np.linalg.inv(U_pp @ U_pp.T)
    order = perm[ds.n:] - ds.n
    inv = np.empty(n_p, dtype=int)
    inv[order] = np.arange(n_p)
    cov_c = cov_pos[np.ix_(inv, inv)]
    ok = _check_law("joint", dr_c, mu_c, cov_c, reports) and ok

    # two-stage path: diagonal law with the nugget on observation rows
    mu_d, dr_d = predict_latent_free(ds, params, pred_sites, pred_X, M=M,
                                     rng=np.random.default_rng(4), n_draws=N)
    cov_d = np.diag(_hand_kriging_cov(ds, params, pred_sites, pred_X, M,
                                      tau2_on_obs=True))
    ok = _check_law("two-stage", dr_d, mu_d, cov_d, reports) and ok

    _report("10", ok, "1e5 draws, n_P=%d: %s (all |z| < 5)"
            % (n_p, "; ".join(reports)))


# ---------------------------------------------------------------------------
# end-to-end case-study analog on a 10,000-site grid


def test_end_to_end_case_study_analog(tmp_path):
    t0 = time.time()
    params = SvcParams(alpha=[3.0, -2.0, 1.5, -1.0, 2.0, 0.5, -0.8],
                       sigma2=[8.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0],
                       phi=[30.0, 25.0, 20.0, 15.0, 12.0, 10.0, 8.0],
                       tau2=0.5)
    cfg = tmp_path / "params.json"
    save_config(cfg, params=params)
    sim, fit, pred = tmp_path / "sim", tmp_path / "fit", tmp_path / "pred"
    assert cli_main(["simulate", "--n", "136", "--p", "7",
                     "--censoring", "0.5", "--config", str(cfg),
                     "--seed", "12", "--out", str(sim)]) == 0
    rc_fit = cli_main(["fit", "--model", "latent-free",
                       "--data", str(sim / "data.csv"), "--M", "40",
                       "--chains", "2", "--iters", "1500", "--burnin", "750",
                       "--seed", "0", "--out", str(fit)])
    assert rc_fit in (0, 3)  # outputs are written either way

    g = np.linspace(0.005, 0.995, 100)
    gx, gy = np.meshgrid(g, g)
    grid_sites = np.column_stack([gx.ravel(), gy.ravel()])
    grng = np.random.default_rng(77)
    grid_X = np.column_stack([np.ones(10000), grng.normal(size=(10000, 6))])
    save_grid(tmp_path / "grid.csv", grid_sites, grid_X)
    assert cli_main(["predict", "--model", "latent-free",
                     "--data", str(sim / "data.csv"),
                     "--grid", str(tmp_path / "grid.csv"),
                     "--fit-dir", str(fit), "--M", "40", "--thin", "25",
                     "--seed", "1", "--out", str(pred)]) == 0
    sites, mean, sd = load_prediction(pred / "predictions.csv")
    elapsed = time.time() - t0
    ok = (sites.shape[0] == 10000 and np.all(np.isfinite(mean))
          and np.all(sd > 0) and elapsed < 3600)
    _report("CASE-STUDY", ok,
            "n=136, p=7, 50%% censoring, M=40, 10,000-site grid: "
            "%d predictions, all finite, sd > 0, %.0fs (< 3600s)"
            % (sites.shape[0], elapsed))
