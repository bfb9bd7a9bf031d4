"""Louvain community detection and community-by-set composition tables."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import IncompleteAssignment
from .graph import ComentionGraph


@dataclass
class CommunityPartition:
    assignment: dict[str, int]
    modularity_q: float
    resolution: float = 1.0
    seed: int = 0
    level_modularity: list[float] = field(default_factory=list)

    @property
    def n_communities(self) -> int:
        return len(set(self.assignment.values()))

    def sizes(self) -> np.ndarray:
        return np.bincount(np.fromiter(self.assignment.values(), dtype=int), minlength=self.n_communities)


def modularity(g: ComentionGraph, assignment: Mapping[str, int], resolution: float = 1.0) -> float:
    """Weighted Newman modularity ``sum_c w_c/W - resolution * (s_c / 2W)**2``."""
    missing = [k for k in g.nodes if k not in assignment]
    if missing:
        raise IncompleteAssignment(f"{len(missing)} node(s) lack a community, e.g. {missing[0]!r}")
    total = g.total_weight()
    if total == 0:
        return 0.0
    internal: dict[int, float] = {}
    strength: dict[int, float] = {}
    for u, v, w in g.edges():
        cu, cv = assignment[u], assignment[v]
        strength[cu] = strength.get(cu, 0.0) + w
        strength[cv] = strength.get(cv, 0.0) + w
        if cu == cv:
            internal[cu] = internal.get(cu, 0.0) + w
    q = 0.0
    for c, s in strength.items():
        q += internal.get(c, 0.0) / total - resolution * (s / (2.0 * total)) ** 2
    return q


def _level_modularity(nbrs, loops, comm, total, resolution):
    internal = np.zeros(len(nbrs))
    strength = np.zeros(len(nbrs))
    for i, nb in enumerate(nbrs):
        c = comm[i]
        internal[c] += loops[i]
        strength[c] += 2 * loops[i] + sum(nb.values())
        for j, w in nb.items():
            if j > i and comm[j] == c:
                internal[c] += w
    return float(np.sum(internal / total - resolution * (strength / (2 * total)) ** 2))


def _one_level(nbrs, loops, total, resolution, order, callback, level):
    n = len(nbrs)
    comm = list(range(n))
    k = [2 * loops[i] + sum(nbrs[i].values()) for i in range(n)]
    tot = list(k)
    moved_any = False
    while True:
        moved = False
        for i in order:
            ci = comm[i]
            links: dict[int, float] = {}
            for j in sorted(nbrs[i]):
                cj = comm[j]
                links[cj] = links.get(cj, 0.0) + nbrs[i][j]
            tot[ci] -= k[i]
            # candidates: current community first so ties keep the node in place
            best_c = ci
            best_gain = links.get(ci, 0.0) - resolution * tot[ci] * k[i] / (2.0 * total)
            own_gain = best_gain
            for c, w in links.items():
                if c == ci:
                    continue
                gain = w - resolution * tot[c] * k[i] / (2.0 * total)
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            tot[best_c] += k[i]
            if best_c != ci:
                comm[i] = best_c
                moved = moved_any = True
                if callback is not None:
                    callback(level, i, ci, best_c, (best_gain - own_gain) / total)
        if not moved:
            break
    return comm, moved_any


def _aggregate(nbrs, loops, comm):
    labels = {c: r for r, c in enumerate(sorted(set(comm)))}
    m = len(labels)
    new_nbrs = [dict() for _ in range(m)]
    new_loops = [0.0] * m
    for i, nb in enumerate(nbrs):
        ci = labels[comm[i]]
        new_loops[ci] += loops[i]
        for j, w in nb.items():
            if j < i:
                continue
            cj = labels[comm[j]]
            if ci == cj:
                new_loops[ci] += w
            else:
                new_nbrs[ci][cj] = new_nbrs[ci].get(cj, 0.0) + w
                new_nbrs[cj][ci] = new_nbrs[cj].get(ci, 0.0) + w
    return new_nbrs, new_loops, [labels[c] for c in comm]


def louvain(g: ComentionGraph, resolution: float = 1.0, seed: int = 0,
            callback: Callable[[int, int, int, int, float], None] | None = None) -> CommunityPartition:
    """Two-phase Louvain optimisation of weighted modularity.

    Node visit order at each level is a permutation drawn from
    ``numpy.random.default_rng(seed)``, so results are reproducible for a
    fixed seed. ``callback(level, node, old, new, gain)`` is invoked for every
    accepted move; ``gain`` is the modularity increase of that move.
    """
    nodes = g.node_list()
    if not nodes:
        raise ValueError("louvain needs at least one node")
    idx = {k: i for i, k in enumerate(nodes)}
    nbrs = [{idx[v]: float(w) for v, w in g.neighbors(k).items()} for k in nodes]
    loops = [0.0] * len(nodes)
    total = float(g.total_weight())
    mapping = list(range(len(nodes)))
    history: list[float] = []
    rng = np.random.default_rng(seed)
    if total > 0:
        level = 0
        while True:
            order = [int(i) for i in rng.permutation(len(nbrs))]
            comm, moved = _one_level(nbrs, loops, total, resolution, order, callback, level)
            if not moved:
                break
            nbrs, loops, labels = _aggregate(nbrs, loops, comm)
            mapping = [labels[c] for c in mapping]
            history.append(_level_modularity(nbrs, loops, list(range(len(nbrs))), total, resolution))
            level += 1
    # dense ids in order of first appearance over the sorted node list
    relabel: dict[int, int] = {}
    for c in mapping:
        relabel.setdefault(c, len(relabel))
    assignment = {k: relabel[mapping[i]] for i, k in enumerate(nodes)}
    q = modularity(g, assignment, resolution)
    return CommunityPartition(assignment, q, resolution, seed, history)


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(a, b) -> float:
    """Normalised mutual information with arithmetic-mean normalisation."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("label vectors differ in length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1)
    ha, hb = _entropy(joint.sum(1)), _entropy(joint.sum(0))
    if ha == 0 and hb == 0:
        return 1.0
    pj = joint / joint.sum()
    pa = pj.sum(1, keepdims=True)
    pb = pj.sum(0, keepdims=True)
    nz = pj > 0
    mi = float((pj[nz] * np.log(pj[nz] / (pa @ pb)[nz])).sum())
    return max(0.0, mi / ((ha + hb) / 2))


@dataclass
class CompositionTable:
    set_ids: list[str]
    n_communities: int
    matrix: np.ndarray

    def row(self, set_id: str) -> np.ndarray:
        return self.matrix[self.set_ids.index(set_id)]

    def to_rows(self):
        for i, s in enumerate(self.set_ids):
            for c in range(self.n_communities):
                yield s, c, float(self.matrix[i, c])


def _set_index(nodes, roster):
    set_ids = sorted({roster[k] for k in nodes})
    pos = {s: i for i, s in enumerate(set_ids)}
    return set_ids, np.array([pos[roster[k]] for k in nodes])


def _roster_sets(roster, nodes) -> dict[str, str]:
    if isinstance(roster, ComentionGraph):
        return {k: roster.nodes[k]["set_id"] for k in nodes}
    out = {}
    for k in nodes:
        v = roster[k]
        out[k] = v if isinstance(v, str) else v["set_id"]
    return out


def composition_from_labels(labels: np.ndarray, set_idx: np.ndarray, n_sets: int, n_communities: int) -> np.ndarray:
    """Composition tables for a batch of label vectors.

    ``labels`` has shape ``(iterations, n_nodes)``; the result has shape
    ``(iterations, n_sets, n_communities)`` with rows summing to one.
    """
    labels = np.atleast_2d(labels)
    iters = labels.shape[0]
    flat = (np.arange(iters)[:, None] * n_sets + set_idx[None, :]) * n_communities + labels
    counts = np.bincount(flat.ravel(), minlength=iters * n_sets * n_communities)
    counts = counts.reshape(iters, n_sets, n_communities).astype(float)
    return counts / counts.sum(axis=2, keepdims=True)


def composition(partition: CommunityPartition, roster) -> CompositionTable:
    """Share of each set's members falling in each community.

    ``roster`` maps alias to ``set_id`` (or is the graph carrying ``set_id``).
    """
    nodes = sorted(partition.assignment)
    sets = _roster_sets(roster, nodes)
    set_ids, set_idx = _set_index(nodes, sets)
    labels = np.array([partition.assignment[k] for k in nodes])
    mat = composition_from_labels(labels, set_idx, len(set_ids), partition.n_communities)[0]
    return CompositionTable(set_ids, partition.n_communities, mat)


@dataclass
class PermutationBaseline:
    mean: CompositionTable
    standard_error: np.ndarray
    iterations: int
    seed: int
    max_deviation: float = 0.0
    deviation: np.ndarray | None = None


def permuted_labels(labels: np.ndarray, iterations: int, seed: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Label permutations for iterations ``start..stop``, one seeded substream per iteration."""
    stop = iterations if stop is None else stop
    children = np.random.SeedSequence(seed).spawn(iterations)[start:stop]
    out = np.empty((len(children), len(labels)), dtype=labels.dtype)
    for r, child in enumerate(children):
        out[r] = np.random.default_rng(child).permutation(labels)
    return out


def permutation_baseline(partition: CommunityPartition, roster, iterations: int = 10000, seed: int = 0,
                         workers: int = 1, chunk: int = 1000) -> PermutationBaseline:
    """Average composition under uniform random relabelling of nodes.

    Each iteration permutes the observed label multiset over the nodes using
    its own ``SeedSequence`` child, so results do not depend on ``workers``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    nodes = sorted(partition.assignment)
    sets = _roster_sets(roster, nodes)
    set_ids, set_idx = _set_index(nodes, sets)
    labels = np.array([partition.assignment[k] for k in nodes])
    n_sets, n_comm = len(set_ids), partition.n_communities
    children = np.random.SeedSequence(seed).spawn(iterations)

    def run(bounds):
        lo, hi = bounds
        perm = np.empty((hi - lo, len(labels)), dtype=labels.dtype)
        for r, child in enumerate(children[lo:hi]):
            perm[r] = np.random.default_rng(child).permutation(labels)
        flat = (np.arange(hi - lo)[:, None] * n_sets + set_idx[None, :]) * n_comm + perm
        counts = np.bincount(flat.ravel(), minlength=(hi - lo) * n_sets * n_comm)
        counts = counts.reshape(hi - lo, n_sets, n_comm).astype(np.int64)
        return counts.sum(0), (counts ** 2).sum(0)

    bounds = [(lo, min(lo + chunk, iterations)) for lo in range(0, iterations, chunk)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    # integer count sums are exact, so chunking and thread count cannot change the result
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    size = np.bincount(set_idx, minlength=n_sets).astype(float)[:, None]
    mean = s1 / iterations / size
    var = np.maximum(s2 / iterations / size ** 2 - mean ** 2, 0.0)
    se = np.sqrt(var / iterations)
    observed = composition(partition, sets).matrix
    dev = observed - mean
    return PermutationBaseline(CompositionTable(set_ids, n_comm, mean), se, iterations, seed,
                               float(np.max(np.abs(dev))), dev)
