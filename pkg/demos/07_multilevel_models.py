"""
Random-intercept logistic models
================================

Mortality is regressed on standardised network covariates with random
intercepts for set and nation, fitted by Laplace approximation. The
empty model gives the variance decomposition with the individual level
fixed at pi^2/3.
"""
import numpy as np
from scipy.special import expit

from crowdnet.glmm import GlmmSpec, composite_r2, fit_glmm, fit_logistic_bootstrap, predict_probability, \
    variance_decomposition

rng = np.random.default_rng(3)
sets = np.repeat(np.arange(30), 25)
nations = sets % 3
x = rng.normal(size=(sets.size, 2))
eta = -1.0 + x @ [0.8, 0.0] + rng.normal(0, 0.6, 30)[sets] + rng.normal(0, 0.3, 3)[nations]
y = (rng.random(sets.size) < expit(eta)).astype(float)
factors = {"set": [f"S{s}" for s in sets], "nation": [f"N{n}" for n in nations]}

empty = fit_glmm(GlmmSpec(y, np.zeros((y.size, 0)), factors))
print("variance components:", {k: round(v, 3) for k, v in empty.variance_components.items()})
print("decomposition (%):", {k: round(v, 2) for k, v in variance_decomposition(empty).items()})

fit = fit_glmm(GlmmSpec(y, x, factors, covariate_names=["signal", "noise"]))
for name, b, se, orr in zip(fit.names, fit.beta, fit.se, fit.odds_ratios):
    print(f"{name:9} beta={b:+.3f} se={se:.3f} OR={orr:.2f}")
print(f"AIC {fit.aic:.1f}, composite R2 {composite_r2(fit):.3f}, converged {fit.converged}")
print("P(death) at mean covariates:", round(predict_probability(fit, [0.0, 0.0]), 3))

boot = fit_logistic_bootstrap(y, x, b=300, seed=0, names=["signal", "noise"])
print("single-level bootstrap SEs:", np.round(boot.se, 3), "pseudo-R2", round(boot.pseudo_r2, 3))
