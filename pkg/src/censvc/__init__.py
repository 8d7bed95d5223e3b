"""Bayesian spatially varying coefficient models for left-censored spatial data.

The package fits Gaussian-process SVC models to observations subject to a
detection limit, using a Vecchia-type sparse factorization that integrates
the censored values out of the likelihood analytically (one univariate
normal CDF per censored observation) instead of sampling them.
"""

from .covariance import (cross_cov_matrix, dense_cov_matrix, exp_cov,
                         svc_cross_cov)
from .data import (DataError, Dataset, PriorConfig, RunConfig, SvcParams,
                   default_priors, load_config, load_dataset, save_config,
                   save_dataset, validate_params, MODEL_KINDS)
from .evaluate import (LikelihoodErrorConfig, MethodComparisonConfig,
                       crps_empirical, likelihood_error_experiment, mean_crps,
                       method_comparison_experiment, rmse)
from .mcmc import (PosteriorSamples, ess, load_draws, load_latent, rhat,
                   run_mcmc, save_diagnostics, save_draws, save_latent)
from .oracle import (McConfig, censored_exact_loglik, dense_gaussian_loglik,
                     mvn_logcdf_qmc, relative_likelihood_error,
                     truncated_normal_mean)
from .ordering import (NeighborSets, censored_aware_order, conditioning_sets,
                       latent_neighbor_sets, maxmin_order, prediction_order,
                       response_neighbor_sets)
from .predict import (PredictiveDraws, load_draw_matrix, load_grid,
                      load_prediction, mills_adjust, posterior_predictive,
                      predict_full_latent, predict_latent_free,
                      predict_latent_vecchia, save_draw_matrix, save_grid,
                      save_prediction, stage1_adjusted_responses)
from .simulate import apply_censoring, load_truth, save_truth, simulate_svc_dataset
from .vecchia import (CachedFactorEval, VecchiaFactor, build_factor,
                      censored_vecchia_loglik, gaussian_vecchia_loglik,
                      latent_vecchia_logdensity, response_loglik, sparse_U)

__version__ = "0.1.0"

__all__ = [
    "CachedFactorEval", "DataError", "Dataset", "LikelihoodErrorConfig",
    "McConfig", "MethodComparisonConfig", "MODEL_KINDS", "NeighborSets",
    "PosteriorSamples", "PredictiveDraws", "PriorConfig", "RunConfig",
    "SvcParams", "VecchiaFactor", "apply_censoring", "build_factor",
    "censored_aware_order", "censored_exact_loglik",
    "censored_vecchia_loglik", "conditioning_sets", "cross_cov_matrix",
    "crps_empirical", "default_priors", "dense_cov_matrix",
    "dense_gaussian_loglik", "ess", "exp_cov", "gaussian_vecchia_loglik",
    "latent_neighbor_sets", "latent_vecchia_logdensity",
    "likelihood_error_experiment", "load_config", "load_dataset",
    "load_draw_matrix", "load_draws", "load_grid", "load_latent",
    "load_prediction", "load_truth", "maxmin_order", "mean_crps",
    "method_comparison_experiment", "mills_adjust", "mvn_logcdf_qmc",
    "posterior_predictive", "predict_full_latent", "predict_latent_free",
    "predict_latent_vecchia", "prediction_order", "relative_likelihood_error",
    "response_loglik", "response_neighbor_sets", "rhat", "rmse", "run_mcmc",
    "save_config", "save_dataset", "save_diagnostics", "save_draw_matrix",
    "save_draws", "save_grid", "save_latent", "save_prediction", "save_truth",
    "simulate_svc_dataset", "sparse_U", "stage1_adjusted_responses",
    "svc_cross_cov", "truncated_normal_mean", "validate_params",
]
