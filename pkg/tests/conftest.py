import numpy as np
import pytest

from censvc import SvcParams, apply_censoring, simulate_svc_dataset


@pytest.fixture
def study_like_params():
    return SvcParams(alpha=[-5.0, 10.0], sigma2=[15.0, 30.0],
                     phi=[40.0, 15.0], tau2=0.1)


@pytest.fixture
def small_dataset(study_like_params):
    ds, _ = simulate_svc_dataset(40, 2, study_like_params, seed=101)
    return ds


@pytest.fixture
def small_censored(study_like_params):
    ds, _ = simulate_svc_dataset(40, 2, study_like_params, seed=101)
    return apply_censoring(ds, 0.25)


def random_params(rng, p, tau2=None):
    """Random but well-scaled parameter draw for property tests."""
    return SvcParams(
        alpha=rng.normal(0.0, 3.0, p),
        sigma2=rng.uniform(0.5, 20.0, p),
        phi=rng.uniform(2.0, 40.0, p),
        tau2=float(rng.uniform(0.05, 1.0)) if tau2 is None else tau2,
    )
