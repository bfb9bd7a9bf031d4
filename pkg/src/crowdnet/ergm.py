"""Exponential random graph models on the binarised co-mention graph.

Supported terms are the edge count, geometrically weighted degree with a
fixed decay, and node-covariate main effects (the sum of endpoint values
over edges). Estimation is by maximum pseudo-likelihood or by stochastic
approximation of the likelihood equations against a single-toggle
Metropolis chain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .errors import Degeneracy, SeparationDetected
from .glmm import fit_logistic
from .graph import ComentionGraph

EDGES, GWDEGREE, NODECOV = "edges", "gwdegree", "nodecov"
_CODES = {EDGES: 0, GWDEGREE: 1, NODECOV: 2}
_CHUNK = 1 << 20


@dataclass(frozen=True)
class ErgmTerm:
    kind: str
    attribute: str | None = None
    decay: float = 0.5

    def __post_init__(self):
        if self.kind not in _CODES:
            raise ValueError(f"unknown ERGM term {self.kind!r}")
        if self.kind == NODECOV and not self.attribute:
            raise ValueError("nodecov needs an attribute name")
        if self.kind == GWDEGREE and not self.decay > 0:
            raise ValueError("gwdegree decay must be positive")

    @property
    def label(self) -> str:
        if self.kind == GWDEGREE:
            return f"gwdegree.{self.decay:g}"
        if self.kind == NODECOV:
            return f"nodecov.{self.attribute}"
        return EDGES


@dataclass
class ErgmModel:
    terms: list[ErgmTerm]

    def __post_init__(self):
        self.terms = [t if isinstance(t, ErgmTerm) else ErgmTerm(*t) if isinstance(t, tuple) else ErgmTerm(t)
                      for t in self.terms]
        if not any(t.kind == EDGES for t in self.terms):
            raise ValueError("an ERGM must include the edges term")

    @classmethod
    def default(cls, attribute: str = "deceased", decay: float = 0.5) -> "ErgmModel":
        return cls([ErgmTerm(EDGES), ErgmTerm(GWDEGREE, decay=decay), ErgmTerm(NODECOV, attribute)])

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.terms]

    @property
    def dyad_independent(self) -> bool:
        return all(t.kind != GWDEGREE for t in self.terms)

    def arrays(self, n: int, attributes: Mapping[str, Sequence[float]] | None):
        codes = np.array([_CODES[t.kind] for t in self.terms], dtype=np.int64)
        decays = np.array([t.decay for t in self.terms], dtype=float)
        cov = np.zeros((n, len(self.terms)))
        for m, t in enumerate(self.terms):
            if t.kind == NODECOV:
                if attributes is None or t.attribute not in attributes:
                    raise KeyError(f"missing node attribute {t.attribute!r}")
                vals = np.asarray(attributes[t.attribute], dtype=float)
                if vals.shape != (n,):
                    raise ValueError(f"attribute {t.attribute!r} has shape {vals.shape}, expected ({n},)")
                cov[:, m] = vals
        return codes, decays, cov


def network_arrays(g: ComentionGraph, attribute_names: Sequence[str] = ("deceased",)):
    """Binary adjacency (sorted node order), node list and float node attributes."""
    nodes = g.node_list()
    adj = g.adjacency_matrix(nodes, weighted=False).astype(np.uint8)
    attrs = {a: np.array([float(bool(g.nodes[k].get(a, 0))) if isinstance(g.nodes[k].get(a, 0), bool)
                          else float(g.nodes[k].get(a, 0) or 0) for k in nodes]) for a in attribute_names}
    return adj, nodes, attrs


def statistics(model: ErgmModel, adj: np.ndarray, attributes=None) -> np.ndarray:
    """Sufficient statistics s(G) computed from scratch."""
    adj = np.asarray(adj)
    n = adj.shape[0]
    deg = adj.sum(axis=1).astype(float)
    _, decays, cov = model.arrays(n, attributes)
    out = np.zeros(len(model.terms))
    for m, t in enumerate(model.terms):
        if t.kind == EDGES:
            out[m] = deg.sum() / 2
        elif t.kind == GWDEGREE:
            r = 1.0 - math.exp(-t.decay)
            out[m] = math.exp(t.decay) * np.sum(1.0 - r ** deg)
        else:
            out[m] = float(deg @ cov[:, m])
    return out


def change_statistics(model: ErgmModel, adj: np.ndarray, attributes=None):
    """Change statistics for switching each dyad from absent to present.

    Returns ``(rows, cols, y, delta)`` over all dyads ``i < j`` where ``y``
    is the observed dyad state and ``delta[d]`` the change in s(G) when that
    dyad is added with the rest of the graph held fixed.
    """
    adj = np.asarray(adj)
    n = adj.shape[0]
    rows, cols = np.triu_indices(n, 1)
    y = adj[rows, cols].astype(float)
    deg = adj.sum(axis=1).astype(float)
    _, _, cov = model.arrays(n, attributes)
    delta = np.zeros((rows.size, len(model.terms)))
    for m, t in enumerate(model.terms):
        if t.kind == EDGES:
            delta[:, m] = 1.0
        elif t.kind == GWDEGREE:
            r = 1.0 - math.exp(-t.decay)
            delta[:, m] = r ** (deg[rows] - y) + r ** (deg[cols] - y)
        else:
            delta[:, m] = cov[rows, m] + cov[cols, m]
    return rows, cols, y, delta


@njit(cache=True)
def _toggle_chain(adj, deg, codes, decays, cov, theta, stats, ii, jj, logu, interval, offset, out):
    k = codes.size
    delta = np.empty(k)
    accepted = 0
    rec = 0
    for t in range(ii.size):
        i = ii[t]
        j = jj[t]
        present = adj[i, j]
        di = deg[i] - present
        dj = deg[j] - present
        lr = 0.0
        for m in range(k):
            c = codes[m]
            if c == 0:
                d = 1.0
            elif c == 1:
                r = 1.0 - math.exp(-decays[m])
                d = r ** di + r ** dj
            else:
                d = cov[i, m] + cov[j, m]
            delta[m] = d
            if theta[m] != 0.0:
                lr += theta[m] * d
        if present == 1:
            lr = -lr
        if logu[t] < lr:
            accepted += 1
            if present == 1:
                adj[i, j] = 0
                adj[j, i] = 0
                deg[i] -= 1
                deg[j] -= 1
                for m in range(k):
                    stats[m] -= delta[m]
            else:
                adj[i, j] = 1
                adj[j, i] = 1
                deg[i] += 1
                deg[j] += 1
                for m in range(k):
                    stats[m] += delta[m]
        if interval > 0 and (offset + t + 1) % interval == 0:
            for m in range(k):
                out[rec, m] = stats[m]
            rec += 1
    return accepted


class ToggleChain:
    """Persistent single-dyad-toggle Metropolis chain.

    Random proposals are drawn in numpy from ``default_rng(seed)`` so the
    trajectory is fixed by the seed.
    """

    def __init__(self, model: ErgmModel, n_nodes: int, attributes=None, seed: int = 0, initial=None):
        if n_nodes < 2:
            raise ValueError("need at least two nodes")
        self.model = model
        self.n = n_nodes
        self.codes, self.decays, self.cov = model.arrays(n_nodes, attributes)
        self.adj = (np.zeros((n_nodes, n_nodes), dtype=np.int64) if initial is None
                    else np.array(initial, dtype=np.int64))
        self.deg = self.adj.sum(axis=1).astype(np.int64)
        self.stats = statistics(model, self.adj, attributes)
        self.rng = np.random.default_rng(seed)
        self.steps = 0
        self.accepted = 0

    def run(self, theta, steps: int, interval: int = 0) -> np.ndarray:
        """Advance ``steps`` toggles, recording the statistics every ``interval`` steps."""
        theta = np.asarray(theta, dtype=float)
        n_rec = steps // interval if interval > 0 else 0
        out = np.empty((n_rec, len(self.codes)))
        done = 0
        rec = 0
        while done < steps:
            m = min(_CHUNK, steps - done)
            ii = self.rng.integers(0, self.n, m)
            jj = self.rng.integers(0, self.n - 1, m)
            jj = jj + (jj >= ii)
            logu = np.log(self.rng.random(m))
            before = done // interval if interval > 0 else 0
            after = (done + m) // interval if interval > 0 else 0
            buf = np.empty((after - before, len(self.codes)))
            self.accepted += _toggle_chain(self.adj, self.deg, self.codes, self.decays, self.cov, theta,
                                           self.stats, ii, jj, logu, interval, done, buf)
            out[rec : rec + buf.shape[0]] = buf
            rec += buf.shape[0]
            done += m
        self.steps += steps
        return out

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.steps if self.steps else 0.0

    def edge_list(self) -> list[tuple[int, int]]:
        r, c = np.nonzero(np.triu(self.adj, 1))
        return list(zip(r.tolist(), c.tolist()))


@dataclass
class SimulationResult:
    statistics: np.ndarray
    graphs: list[list[tuple[int, int]]]
    acceptance_rate: float
    labels: list[str]

    def mean_density(self, n_nodes: int) -> float:
        m = self.labels.index(EDGES)
        return float(self.statistics[:, m].mean() / (n_nodes * (n_nodes - 1) / 2))


def simulate(model: ErgmModel, theta, n_nodes: int, attributes=None, seed: int = 0, n_samples: int = 100,
             burn_in: int | None = None, interval: int | None = None, initial=None,
             keep_graphs: bool = False) -> SimulationResult:
    """Thinned draws from the ERGM at ``theta`` by single-toggle Metropolis."""
    dyads = n_nodes * (n_nodes - 1) // 2
    burn_in = 10 * dyads if burn_in is None else burn_in
    interval = max(1, dyads // 2) if interval is None else interval
    chain = ToggleChain(model, n_nodes, attributes, seed, initial)
    chain.run(theta, burn_in)
    stats = np.empty((n_samples, len(model.terms)))
    graphs = []
    for s in range(n_samples):
        stats[s] = chain.run(theta, interval, interval)[-1]
        if keep_graphs:
            graphs.append(chain.edge_list())
    return SimulationResult(stats, graphs, chain.acceptance_rate, model.labels)


@dataclass
class ErgmFit:
    model: ErgmModel
    theta: np.ndarray
    se: np.ndarray
    method: str
    observed: np.ndarray
    pseudo_loglik: float
    n_nodes: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def aic(self) -> float:
        return 2 * len(self.theta) - 2 * self.pseudo_loglik

    @property
    def z_values(self) -> np.ndarray:
        return self.theta / self.se

    def coefficient(self, label: str) -> float:
        return float(self.theta[self.model.labels.index(label)])

    def z(self, label: str) -> float:
        return float(self.z_values[self.model.labels.index(label)])

    def to_json(self) -> dict:
        from scipy.stats import norm

        terms = []
        for m, label in enumerate(self.model.labels):
            z = float(self.theta[m] / self.se[m]) if self.se[m] > 0 else float("nan")
            terms.append({"term": label, "estimate": float(self.theta[m]), "se": float(self.se[m]), "z": z,
                          "p_value": float(2 * norm.sf(abs(z))) if math.isfinite(z) else float("nan"),
                          "observed": float(self.observed[m])})
        diag = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.diagnostics.items()}
        return {"method": self.method, "n_nodes": self.n_nodes, "terms": terms, "aic": float(self.aic),
                "aic_basis": "pseudo_likelihood", "diagnostics": diag}


def _pseudo_loglik(theta, y, delta) -> float:
    eta = delta @ theta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _as_arrays(graph, model, attributes):
    if isinstance(graph, ComentionGraph):
        names = [t.attribute for t in model.terms if t.kind == NODECOV]
        adj, _, attrs = network_arrays(graph, names)
        if attributes is not None:
            attrs.update({k: np.asarray(v, dtype=float) for k, v in attributes.items()})
        return adj, attrs
    adj = (np.asarray(graph) != 0).astype(np.uint8)
    if (adj != adj.T).any() or adj.diagonal().any():
        raise ValueError("adjacency must be symmetric with an empty diagonal")
    return adj, attributes


def fit_mple(graph, model: ErgmModel, attributes=None) -> ErgmFit:
    """Maximum pseudo-likelihood: logistic regression of dyad states on change statistics.

    ``graph`` is a :class:`ComentionGraph` (weights ignored) or a symmetric
    0/1 adjacency matrix with ``attributes`` supplied separately.
    """
    adj, attrs = _as_arrays(graph, model, attributes)
    _, _, y, delta = change_statistics(model, adj, attrs)
    if y.sum() == 0 or y.sum() == y.size:
        raise SeparationDetected("graph is empty or complete; the edges coefficient is infinite",
                                 {"edges": int(y.sum()), "dyads": int(y.size)})
    res = fit_logistic(y, delta)
    return ErgmFit(model, res.beta, res.se, "mple", statistics(model, adj, attrs),
                   _pseudo_loglik(res.beta, y, delta), adj.shape[0])


def effective_sample_size(x: np.ndarray) -> float:
    """Effective sample size from the initial positive autocorrelation sequence."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    var = xc @ xc / n
    if n < 4 or var <= 0:
        return float(n)
    f = np.fft.rfft(xc, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    s = 0.0
    for k in range(1, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        s += pair
    return float(n / max(1.0, 1.0 + 2.0 * s))


def _check_degenerate(samples, labels, dyads, theta):
    m = labels.index(EDGES)
    e = samples[:, m]
    frac = float(np.mean((e <= 0) | (e >= dyads)))
    if frac >= 0.9:
        raise Degeneracy(f"{frac:.0%} of sampled graphs are empty or complete", theta.tolist())


def fit_mcmc_mle(graph, model: ErgmModel, attributes=None, seed: int = 0, burn_in: int | None = None,
                 samples: int = 1000, interval: int | None = None, gain: float = 0.25,
                 subphases: int = 4, max_refine: int = 4, t_tol: float = 0.1) -> ErgmFit:
    """Likelihood estimation by Robbins-Monro stochastic approximation.

    Starting from the MPLE, the chain (initialised at the observed graph)
    runs at the current estimate and ``theta`` is moved against the
    deviation of the sampled statistics from the observed ones, scaled by
    the inverse statistic covariance with a gain halved each subphase.
    Newton refinements on ``samples`` draws follow until every convergence
    t-ratio falls below ``t_tol``. Standard errors come from the inverse of
    the sampled statistic covariance.
    """
    adj, attrs = _as_arrays(graph, model, attributes)
    n = adj.shape[0]
    dyads = n * (n - 1) // 2
    burn_in = 4 * dyads if burn_in is None else burn_in
    interval = max(100, dyads // 4) if interval is None else interval
    start = fit_mple(adj, model, attrs)
    obs = start.observed
    theta = start.theta.copy()
    labels = model.labels
    chain = ToggleChain(model, n, attrs, seed, initial=adj)
    chain.run(theta, burn_in)

    def draw(th, count):
        return np.array([chain.run(th, interval, interval)[-1] for _ in range(count)])

    def cov_of(x):
        c = np.atleast_2d(np.cov(x, rowvar=False))
        return c + np.eye(c.shape[0]) * 1e-9 * max(1.0, float(np.trace(c)))

    phase1 = draw(theta, max(50, 7 + 3 * len(theta)))
    _check_degenerate(phase1, labels, dyads, theta)
    d_inv = np.linalg.inv(cov_of(phase1))
    a = gain
    for sub in range(subphases):
        length = int(round((7 + len(theta)) * 2 ** (4 * sub / 3)))
        acc = np.zeros_like(theta)
        for _ in range(length):
            s = chain.run(theta, interval, interval)[-1]
            theta = theta - a * d_inv @ (s - obs)
            if not np.all(np.isfinite(theta)):
                raise Degeneracy("stochastic approximation diverged", theta.tolist())
            acc += theta
        theta = acc / length
        a /= 2
    rounds = 0
    while True:
        sample = draw(theta, samples)
        _check_degenerate(sample, labels, dyads, theta)
        mean = sample.mean(axis=0)
        cov = cov_of(sample)
        sd = np.sqrt(np.diag(cov))
        t_ratio = (mean - obs) / sd
        if np.max(np.abs(t_ratio)) < t_tol or rounds >= max_refine:
            break
        theta = theta + np.linalg.solve(cov, obs - mean)
        rounds += 1
    se = np.sqrt(np.diag(np.linalg.inv(cov)))
    _, _, y, delta = change_statistics(model, adj, attrs)
    diagnostics = {
        "acceptance_rate": chain.acceptance_rate,
        "effective_sample_size": {lab: effective_sample_size(sample[:, m]) for m, lab in enumerate(labels)},
        "t_ratios": {lab: float(t_ratio[m]) for m, lab in enumerate(labels)},
        "sample_mean": {lab: float(mean[m]) for m, lab in enumerate(labels)},
        "refinement_rounds": rounds,
        "converged": bool(np.max(np.abs(t_ratio)) < t_tol),
        "samples": samples,
        "interval": interval,
        "burn_in": burn_in,
        "seed": seed,
        "mple": start.theta.tolist(),
    }
    return ErgmFit(model, theta, se, "mcmc_mle", obs, _pseudo_loglik(theta, y, delta), n, diagnostics)
