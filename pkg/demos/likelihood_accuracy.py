"""How close is the latent-free likelihood to the exact censored likelihood?

For one simulated dataset and a ladder of censoring levels, compares the
sparse approximation against the QMC oracle at several conditioning-set
sizes M. The oracle's Monte Carlo standard error is printed so you can see
when the residual difference is just oracle noise.
"""

from censvc import (McConfig, apply_censoring, censored_exact_loglik,
                    censored_vecchia_loglik, response_neighbor_sets,
                    simulate_svc_dataset)
from censvc.evaluate import study_params

params = study_params()
base, _ = simulate_svc_dataset(150, 2, params, seed=4)

print("%8s %6s %14s %14s %10s %10s"
      % ("level", "M", "approx", "exact", "3*mc_se", "rel err %"))
for level in (0.05, 0.25, 0.5, 0.75):
    ds = apply_censoring(base, level)
    mc = McConfig(samples=4096, randomizations=8, seed=11)
    exact, se = censored_exact_loglik(ds, params, mc)
    for M in (5, 10, 20, 40):
        nbr = response_neighbor_sets(ds, M)
        approx = censored_vecchia_loglik(ds, params, nbr)
        rel = abs(approx - exact) / abs(exact) * 100.0
        print("%8.2f %6d %14.4f %14.4f %10.4f %9.4f%%"
              % (level, M, approx, exact, 3 * se, rel))
    print()
