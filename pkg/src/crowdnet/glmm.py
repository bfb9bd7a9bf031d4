"""Random-intercept logistic regression and single-level logistic fits.

The multilevel model is

    logit P(y_i = 1) = x_i' beta + sum_f b_{f, g_f(i)},   b_{f, .} ~ N(0, sigma2_f)

with any number of independent grouping factors. Nesting (sets within
nations) is expressed by globally unique level labels. The marginal
likelihood is approximated by Laplace's method around the joint mode of
all random effects, written in terms of spherical effects ``u`` with
``b = Lambda u`` so that variance components may sit on the zero boundary.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.special import expit

from .errors import NonConvergence, SeparationDetected, SingularDesign

LATENT_VARIANCE = math.pi ** 2 / 3.0
VARIANCE_FLOOR = 1e-10
_LOG_VAR_BOUNDS = (-25.0, 8.0)


def _loglik(y, eta):
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _check_design(x):
    if x.shape[1] and np.linalg.matrix_rank(x) < x.shape[1]:
        raise SingularDesign(f"design matrix of shape {x.shape} is rank deficient")


@dataclass
class LogisticFit:
    beta: np.ndarray
    cov: np.ndarray
    loglik: float
    iterations: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


def fit_logistic(y, x, tol: float = 1e-8, max_iter: int = 100, beta_limit: float = 30.0) -> LogisticFit:
    """Maximum-likelihood logistic regression by iteratively reweighted least squares.

    ``x`` must already contain an intercept column if one is wanted.
    Iteration stops when no coefficient moves by more than ``tol``.
    Diverging coefficients raise :class:`SeparationDetected`.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_design(x)
    beta = np.zeros(x.shape[1])
    ll = _loglik(y, x @ beta)
    for it in range(1, max_iter + 1):
        eta = x @ beta
        mu = expit(eta)
        w = mu * (1.0 - mu)
        info = x.T @ (w[:, None] * x)
        try:
            step = linalg.solve(info, x.T @ (y - mu), assume_a="pos")
        except (linalg.LinAlgError, ValueError) as exc:
            raise SeparationDetected("information matrix became singular", {"iteration": it}) from exc
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = _loglik(y, x @ cand)
            if ll_new >= ll - 1e-12 or t < 1e-8:
                break
            t /= 2.0
        beta, ll = cand, ll_new
        if np.max(np.abs(beta)) > beta_limit:
            raise SeparationDetected("coefficients diverge (quasi-complete separation)",
                                     {"iteration": it, "beta": beta.tolist()})
        if np.max(np.abs(t * step)) < tol:
            break
    else:
        raise NonConvergence(f"IRLS did not converge in {max_iter} iterations")
    mu = expit(x @ beta)
    info = x.T @ ((mu * (1 - mu))[:, None] * x)
    return LogisticFit(beta, linalg.inv(info), ll, it)


@dataclass
class GlmmSpec:
    outcome: np.ndarray
    covariates: np.ndarray
    grouping_factors: dict[str, Sequence] = field(default_factory=dict)
    covariate_names: list[str] | None = None
    intercept: bool = True
    max_iter: int = 500
    tolerance: float = 1e-9

    def __post_init__(self):
        self.outcome = np.asarray(self.outcome, dtype=float)
        n = self.outcome.shape[0]
        cov = np.asarray(self.covariates, dtype=float)
        self.covariates = cov.reshape(n, -1) if cov.size else np.zeros((n, 0))
        if self.covariate_names is None:
            self.covariate_names = [f"x{j}" for j in range(self.covariates.shape[1])]
        if len(self.covariate_names) != self.covariates.shape[1]:
            raise ValueError("covariate_names does not match the covariate columns")
        if not np.isin(self.outcome, (0.0, 1.0)).all():
            raise ValueError("outcome must be binary 0/1")
        for name, labels in self.grouping_factors.items():
            if len(labels) != n:
                raise ValueError(f"grouping factor {name!r} has {len(labels)} labels for {n} rows")
            if len(set(labels)) < 2:
                raise ValueError(f"grouping factor {name!r} has a single level")

    @property
    def design(self) -> np.ndarray:
        if self.intercept:
            return np.column_stack([np.ones(self.outcome.shape[0]), self.covariates])
        return self.covariates

    @property
    def names(self) -> list[str]:
        return (["intercept"] if self.intercept else []) + list(self.covariate_names)


class LaplaceObjective:
    """Laplace-approximate marginal log-likelihood and its exact gradient.

    Parameters are packed as ``theta = (beta, log_var)`` with
    ``sigma2_f = exp(log_var_f) + VARIANCE_FLOOR``.
    """

    def __init__(self, y, x, factors: Mapping[str, Sequence]):
        self.y = np.asarray(y, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.factor_names = list(factors)
        self.levels: list[list] = []
        blocks, col_factor = [], []
        for f, labels in enumerate(factors.values()):
            levels, inv = np.unique(np.asarray(labels, dtype=object).astype(str), return_inverse=True)
            self.levels.append(list(levels))
            z = np.zeros((self.y.size, len(levels)))
            z[np.arange(self.y.size), inv] = 1.0
            blocks.append(z)
            col_factor.extend([f] * len(levels))
        self.z = np.hstack(blocks) if blocks else np.zeros((self.y.size, 0))
        self.col_factor = np.array(col_factor, dtype=int)
        self.p = self.x.shape[1]
        self.k = len(self.factor_names)
        self.q = self.z.shape[1]

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        beta, log_var = theta[: self.p], theta[self.p :]
        var = np.exp(log_var) + VARIANCE_FLOOR
        return beta, log_var, var

    def mode(self, beta, sigma, tol: float = 1e-11, max_iter: int = 100):
        """Posterior mode of the spherical random effects by damped Newton."""
        eta0 = self.x @ beta
        m = self.z * sigma[self.col_factor]
        u = np.zeros(self.q)

        def psi(u_):
            return _loglik(self.y, eta0 + m @ u_) - 0.5 * u_ @ u_

        cur = psi(u)
        for _ in range(max_iter):
            mu = expit(eta0 + m @ u)
            w = mu * (1 - mu)
            g = m.T @ (self.y - mu) - u
            if np.max(np.abs(g), initial=0.0) < tol:
                break
            h = (m.T * w) @ m + np.eye(self.q)
            step = linalg.solve(h, g, assume_a="pos")
            t = 1.0
            while True:
                new = psi(u + t * step)
                if new >= cur - 1e-13 or t < 1e-10:
                    break
                t /= 2.0
            u, cur = u + t * step, new
        return u, m

    def evaluate(self, theta, gradient: bool = False):
        beta, log_var, var = self.unpack(theta)
        sigma = np.sqrt(var)
        if self.q == 0:
            eta = self.x @ beta
            ll = _loglik(self.y, eta)
            if not gradient:
                return ll
            return ll, self.x.T @ (self.y - expit(eta))
        u, m = self.mode(beta, sigma)
        eta = self.x @ beta + m @ u
        mu = expit(eta)
        w = mu * (1 - mu)
        h = (m.T * w) @ m + np.eye(self.q)
        chol = linalg.cho_factor(h, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
        ll = _loglik(self.y, eta) - 0.5 * u @ u - 0.5 * logdet
        if not gradient:
            return ll
        r = self.y - mu
        dw = w * (1 - 2 * mu)
        hinv = linalg.cho_solve(chol, np.eye(self.q))
        mh = m @ hinv
        lev = np.sum(mh * m, axis=1)
        a = self.z.T @ (w[:, None] * m)
        ah = a @ hinv
        # fixed effects: envelope term plus trace term through W(u_hat(beta))
        du_b = -hinv @ (m.T @ (w[:, None] * self.x))
        deta_b = self.x + m @ du_b
        g_beta = self.x.T @ r - 0.5 * (lev * dw) @ deta_b
        g_sigma = np.zeros(self.k)
        for f in range(self.k):
            cols = self.col_factor == f
            zeta = self.z[:, cols] @ u[cols]
            rhs = -m.T @ (w * zeta)
            rhs[cols] += self.z[:, cols].T @ r
            deta = zeta + m @ (hinv @ rhs)
            tr = 2.0 * np.trace(ah[np.ix_(cols, cols)]) + (lev * dw) @ deta
            g_sigma[f] = r @ zeta - 0.5 * tr
        g_logvar = g_sigma * np.exp(log_var) / (2.0 * sigma)
        return ll, np.concatenate([g_beta, g_logvar])

    def random_effects(self, theta) -> dict[str, dict[str, float]]:
        beta, _, var = self.unpack(theta)
        sigma = np.sqrt(var)
        u, _ = self.mode(beta, sigma)
        b = u * sigma[self.col_factor]
        out = {}
        for f, name in enumerate(self.factor_names):
            vals = b[self.col_factor == f]
            out[name] = {lvl: float(v) for lvl, v in zip(self.levels[f], vals)}
        return out


@dataclass
class GlmmFit:
    names: list[str]
    beta: np.ndarray
    se: np.ndarray
    variance_components: dict[str, float]
    log_likelihood: float
    aic: float
    converged: bool
    iterations: int
    n_obs: int
    linear_predictor_variance: float
    cov: np.ndarray | None = None
    variance_se: dict[str, float] = field(default_factory=dict)
    history: list[float] = field(default_factory=list)
    random_effects: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def odds_ratios(self) -> np.ndarray:
        return np.exp(self.beta)

    @property
    def odds_ratio_se(self) -> np.ndarray:
        return np.exp(self.beta) * self.se

    @property
    def z_values(self) -> np.ndarray:
        return self.beta / self.se

    @property
    def p_values(self) -> np.ndarray:
        from scipy.stats import norm

        return 2 * norm.sf(np.abs(self.z_values))

    @property
    def composite_r2(self) -> float:
        return composite_r2(self)

    def coefficient(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])

    def to_json(self) -> dict:
        coefs = []
        for j, name in enumerate(self.names):
            coefs.append({
                "name": name,
                "estimate": float(self.beta[j]),
                "se": float(self.se[j]),
                "odds_ratio": float(self.odds_ratios[j]),
                "odds_ratio_se": float(self.odds_ratio_se[j]),
                "z": float(self.z_values[j]),
                "p_value": float(self.p_values[j]),
            })
        return {
            "coefficients": coefs,
            "variance_components": {k: float(v) for k, v in self.variance_components.items()},
            "log_likelihood": float(self.log_likelihood),
            "aic": float(self.aic),
            "composite_r2": float(self.composite_r2),
            "n_obs": self.n_obs,
            "converged": self.converged,
            "iterations": self.iterations,
        }


def _hessian(fun_grad, theta, step=1e-5):
    n = theta.size
    hess = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step * max(1.0, abs(theta[j]))
        hess[:, j] = (fun_grad(theta + e) - fun_grad(theta - e)) / (2 * e[j])
    return (hess + hess.T) / 2


def _predictor_variance(spec: GlmmSpec, beta) -> float:
    """Population variance of the fixed-effect predictor; the intercept adds nothing to it."""
    coefs = beta[1:] if spec.intercept else beta
    if coefs.size == 0:
        return 0.0
    return float(np.var(spec.covariates @ coefs))


def fit_glmm(spec: GlmmSpec, start_variance: float = 0.1) -> GlmmFit:
    """Fit ``spec`` by maximising the Laplace-approximate marginal likelihood.

    Wald standard errors come from a finite-difference Hessian of the exact
    gradient; variance components estimated at the boundary are held fixed
    when forming it. Without grouping factors this is ordinary logistic
    regression.
    """
    x = spec.design
    y = spec.outcome
    _check_design(x)
    start = fit_logistic(y, x)
    obj = LaplaceObjective(y, x, spec.grouping_factors)
    if obj.k == 0:
        var_eta = _predictor_variance(spec, start.beta)
        return GlmmFit(spec.names, start.beta, start.se, {}, start.loglik, 2 * obj.p - 2 * start.loglik, True,
                       start.iterations, y.size, var_eta, start.cov, history=[start.loglik])

    cache: dict[bytes, tuple[float, np.ndarray]] = {}

    def neg(theta):
        key = theta.tobytes()
        if key not in cache:
            ll, g = obj.evaluate(theta, gradient=True)
            cache.clear()
            cache[key] = (ll, g)
        ll, g = cache[key]
        return -ll, -g

    history: list[float] = []

    def record(theta):
        history.append(-neg(theta)[0])

    theta0 = np.concatenate([start.beta, np.full(obj.k, math.log(start_variance))])
    bounds = [(None, None)] * obj.p + [_LOG_VAR_BOUNDS] * obj.k
    history.append(obj.evaluate(theta0))
    res = optimize.minimize(neg, theta0, jac=True, method="L-BFGS-B", bounds=bounds, callback=record,
                            options={"maxiter": spec.max_iter, "ftol": 1e-15, "gtol": spec.tolerance,
                                     "maxcor": 20})
    theta = res.x
    if res.nit >= spec.max_iter:
        raise NonConvergence(f"optimizer hit the iteration cap ({spec.max_iter})")
    beta, log_var, var = obj.unpack(theta)
    if np.max(np.abs(beta)) > 20:
        raise SeparationDetected("fixed effects diverge", {"beta": beta.tolist()})
    proj = np.where((log_var <= _LOG_VAR_BOUNDS[0] + 1e-6) & (res.jac[obj.p:] > 0), 0.0, res.jac[obj.p:])
    converged = bool(res.success) or float(np.max(np.abs(np.concatenate([res.jac[: obj.p], proj])))) < 1e-4

    free = np.ones(theta.size, dtype=bool)
    free[obj.p :] = var > 1e-6
    cov = np.full((theta.size, theta.size), np.nan)
    hess = _hessian(lambda t: obj.evaluate(t, gradient=True)[1], theta)
    try:
        sub = linalg.inv(-hess[np.ix_(free, free)])
        cov[np.ix_(free, free)] = sub
    except linalg.LinAlgError:
        warnings.warn("observed information is singular; standard errors unavailable", RuntimeWarning)
    se = np.sqrt(np.abs(np.diag(cov)[: obj.p]))
    var_se = {}
    for f, name in enumerate(obj.factor_names):
        v = cov[obj.p + f, obj.p + f]
        var_se[name] = float(math.sqrt(v) * (var[f] - VARIANCE_FLOOR)) if np.isfinite(v) and v >= 0 else float("nan")
    comps = {name: float(var[f]) for f, name in enumerate(obj.factor_names)}
    ll = float(obj.evaluate(theta))
    k = obj.p + obj.k
    return GlmmFit(spec.names, beta, se, comps, ll, 2 * k - 2 * ll, converged, int(res.nit), y.size,
                   _predictor_variance(spec, beta), cov[: obj.p, : obj.p], var_se, history, obj.random_effects(theta))


def variance_decomposition(fit_empty) -> dict[str, float]:
    """Percentage of latent variance at each level of an intercept-only model.

    Individual-level variance is fixed at pi**2 / 3. Accepts a
    :class:`GlmmFit` or a mapping of factor name to variance component.
    """
    if isinstance(fit_empty, GlmmFit):
        if len(fit_empty.beta) != 1:
            raise ValueError("variance decomposition needs an intercept-only fit")
        comps = fit_empty.variance_components
    else:
        comps = dict(fit_empty)
    total = LATENT_VARIANCE + sum(comps.values())
    out = {"individual": 100.0 * LATENT_VARIANCE / total}
    for name, v in comps.items():
        out[name] = 100.0 * v / total
    return out


def composite_r2(fit: GlmmFit) -> float:
    """Latent-scale marginal R^2: fixed-predictor variance over total latent variance."""
    v = fit.linear_predictor_variance
    return v / (v + sum(fit.variance_components.values()) + LATENT_VARIANCE)


def predict_probability(fit: GlmmFit, row, eps: float = 1e-12) -> float:
    """Probability at covariates ``row`` (standardised scale) with random effects at zero."""
    row = np.atleast_1d(np.asarray(row, dtype=float))
    has_intercept = bool(fit.names) and fit.names[0] == "intercept"
    coefs = fit.beta[1:] if has_intercept else fit.beta
    if row.size != coefs.size:
        raise ValueError(f"expected {coefs.size} covariates, got {row.size}")
    with np.errstate(invalid="ignore"):
        eta = (fit.beta[0] if has_intercept else 0.0) + float(np.dot(coefs, row)) if coefs.size else (fit.beta[0] if has_intercept else 0.0)
    p = float(expit(eta)) if not math.isnan(eta) else 0.5
    if p > 1 - eps or p < eps:
        warnings.warn("linear predictor saturates the inverse logit; probability clamped", RuntimeWarning)
        p = min(max(p, eps), 1 - eps)
    return p


@dataclass
class BootstrapFit:
    names: list[str]
    beta: np.ndarray
    se: np.ndarray
    model_se: np.ndarray
    loglik: float
    aic: float
    pseudo_r2: float
    n_obs: int
    replicates: np.ndarray
    redrawn: int

    @property
    def odds_ratios(self) -> np.ndarray:
        return np.exp(self.beta)

    @property
    def odds_ratio_se(self) -> np.ndarray:
        return np.exp(self.beta) * self.se

    def to_json(self) -> dict:
        from scipy.stats import norm

        coefs = []
        for j, name in enumerate(self.names):
            z = self.beta[j] / self.se[j] if self.se[j] > 0 else float("nan")
            coefs.append({
                "name": name, "estimate": float(self.beta[j]), "se": float(self.se[j]),
                "model_se": float(self.model_se[j]), "odds_ratio": float(self.odds_ratios[j]),
                "odds_ratio_se": float(self.odds_ratio_se[j]), "z": float(z),
                "p_value": float(2 * norm.sf(abs(z))) if np.isfinite(z) else float("nan"),
            })
        return {"coefficients": coefs, "log_likelihood": float(self.loglik), "aic": float(self.aic),
                "pseudo_r2": float(self.pseudo_r2), "n_obs": self.n_obs,
                "bootstrap_replicates": int(self.replicates.shape[0]), "redrawn_resamples": int(self.redrawn)}


def fit_logistic_bootstrap(y, x, b: int = 1000, seed: int = 0, names: list[str] | None = None,
                           intercept: bool = True, indices: np.ndarray | None = None, workers: int = 1,
                           max_redraws: int = 100) -> BootstrapFit:
    """Single-level logistic regression with nonparametric case-resampling standard errors.

    Resample ``i`` draws from its own ``SeedSequence`` child, so the result
    is independent of ``workers``. A resample that separates is redrawn
    from the same stream and counted in ``redrawn``. ``indices`` (shape
    ``(b, n)``) overrides the random resamples.
    """
    if b < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    y = np.asarray(y, dtype=float)
    n = y.size
    x = np.asarray(x, dtype=float).reshape(n, -1)
    design = np.column_stack([np.ones(n), x]) if intercept else x
    names = (["intercept"] if intercept else []) + (names or [f"x{j}" for j in range(x.shape[1])])
    full = fit_logistic(y, design)
    ybar = y.mean()
    ll0 = n * (ybar * math.log(ybar) + (1 - ybar) * math.log(1 - ybar)) if 0 < ybar < 1 else 0.0
    children = np.random.SeedSequence(seed).spawn(b)

    def one(i):
        if indices is not None:
            idx = np.asarray(indices[i])
            return fit_logistic(y[idx], design[idx]).beta, 0
        rng = np.random.default_rng(children[i])
        redrawn = 0
        while True:
            idx = rng.integers(0, n, n)
            try:
                return fit_logistic(y[idx], design[idx]).beta, redrawn
            except (SeparationDetected, SingularDesign, NonConvergence):
                redrawn += 1
                if redrawn > max_redraws:
                    raise

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, range(b)))
    else:
        results = [one(i) for i in range(b)]
    reps = np.array([r[0] for r in results])
    k = design.shape[1]
    return BootstrapFit(names, full.beta, reps.std(axis=0, ddof=1), full.se, full.loglik, 2 * k - 2 * full.loglik,
                        1 - full.loglik / ll0 if ll0 else 0.0, n, reps, sum(r[1] for r in results))
