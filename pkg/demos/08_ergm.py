"""
Does mortality drive tie formation?
===================================

An ERGM with an edge term, a geometrically weighted degree term and a
mortality activity term. The pseudo-likelihood fit seeds a stochastic
approximation run against a single-toggle Metropolis chain.
"""
import numpy as np
from scipy.special import expit, logit

from crowdnet.ergm import ErgmModel, fit_mcmc_mle, fit_mple, simulate

rng = np.random.default_rng(4)
n = 80
dead = (rng.random(n) < 0.3).astype(float)
p = expit(logit(0.06) + 0.0 * (dead[:, None] + dead[None, :]))  # no planted effect
upper = np.triu(rng.random((n, n)) < p, 1)
adj = (upper | upper.T).astype(np.uint8)

model = ErgmModel.default("deceased")
mple = fit_mple(adj, model, {"deceased": dead})
mcmc = fit_mcmc_mle(adj, model, {"deceased": dead}, seed=0, samples=2000)
for label, a, b, se in zip(model.labels, mple.theta, mcmc.theta, mcmc.se):
    print(f"{label:18} MPLE {a:+.3f}  MCMC-MLE {b:+.3f} (se {se:.3f})")
print("mortality z:", round(mcmc.z("nodecov.deceased"), 2), "| acceptance", round(mcmc.diagnostics["acceptance_rate"], 3))
print("converged:", mcmc.diagnostics["converged"], "| t-ratios:",
      {k: round(v, 3) for k, v in mcmc.diagnostics["t_ratios"].items()})

edges = ErgmModel(["edges"])
print("density at theta = logit(0.1):", round(simulate(edges, [logit(0.1)], 40, seed=1, n_samples=200).mean_density(40), 3))
