"""Weighted co-mention network over resolved individuals."""
from __future__ import annotations

import csv
from collections import Counter
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping

import networkx as nx
import numpy as np

from .affiliation import AffiliationAssignment
from .corpus import PostRecord
from .errors import CrowdnetError, EmptyAfterCanonicalization, EmptyRoster
from .mentions import LexiconConfig, canonicalize_alias, tokenize


class ComentionGraph:
    """Undirected simple graph with integer edge weights and per-node attributes."""

    def __init__(self):
        self.nodes: dict[str, dict] = {}
        self.adj: dict[str, dict[str, int]] = {}

    def add_node(self, key: str, **attrs) -> None:
        if key not in self.nodes:
            self.nodes[key] = {}
            self.adj[key] = {}
        self.nodes[key].update({a: v for a, v in attrs.items() if v is not None})

    def add_edge(self, u: str, v: str, weight: int = 1) -> None:
        if u == v:
            raise ValueError("self-loops are not allowed")
        if weight < 1:
            raise ValueError("edge weights must be >= 1")
        for x in (u, v):
            if x not in self.nodes:
                self.add_node(x)
        w = self.adj[u].get(v, 0) + weight
        self.adj[u][v] = w
        self.adj[v][u] = w

    def weight(self, u: str, v: str) -> int:
        return self.adj.get(u, {}).get(v, 0)

    def neighbors(self, u: str) -> dict[str, int]:
        return self.adj[u]

    def degree(self, u: str) -> int:
        return len(self.adj[u])

    def strength(self, u: str) -> int:
        return sum(self.adj[u].values())

    def edges(self):
        """Yield ``(u, v, weight)`` with ``u < v``, sorted."""
        for u in sorted(self.adj):
            for v in sorted(self.adj[u]):
                if u < v:
                    yield u, v, self.adj[u][v]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return sum(len(n) for n in self.adj.values()) // 2

    def total_weight(self) -> int:
        return sum(w for _, _, w in self.edges())

    def node_list(self) -> list[str]:
        return sorted(self.nodes)

    def subgraph(self, keys: Iterable[str]) -> "ComentionGraph":
        keep = set(keys)
        g = ComentionGraph()
        for k in sorted(keep & set(self.nodes)):
            g.add_node(k, **self.nodes[k])
        for u, v, w in self.edges():
            if u in keep and v in keep:
                g.add_edge(u, v, w)
        return g

    def set_attribute(self, name: str, values: Mapping[str, object]) -> None:
        for k, val in values.items():
            if k in self.nodes:
                self.nodes[k][name] = val

    def adjacency_matrix(self, order: list[str] | None = None, weighted: bool = True) -> np.ndarray:
        order = order or self.node_list()
        idx = {k: i for i, k in enumerate(order)}
        a = np.zeros((len(order), len(order)))
        for u, v, w in self.edges():
            if u in idx and v in idx:
                a[idx[u], idx[v]] = a[idx[v], idx[u]] = w if weighted else 1
        return a

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        for k in self.node_list():
            g.add_node(k, **{a: v for a, v in self.nodes[k].items() if v is not None})
        for u, v, w in self.edges():
            g.add_edge(u, v, weight=w)
        return g

    @classmethod
    def from_networkx(cls, g: nx.Graph) -> "ComentionGraph":
        out = cls()
        for k, attrs in g.nodes(data=True):
            out.add_node(str(k), **attrs)
        for u, v, attrs in g.edges(data=True):
            out.add_edge(str(u), str(v), int(attrs.get("weight", 1)))
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, ComentionGraph):
            return NotImplemented
        return self.nodes == other.nodes and list(self.edges()) == list(other.edges())

    def __repr__(self) -> str:
        return f"ComentionGraph(nodes={self.n_nodes}, edges={self.n_edges})"


class AliasMatcher:
    """Find roster aliases in free text by canonical key.

    Every run of up to ``max_tokens`` consecutive tokens (outside brackets
    and not crossing punctuation) is canonicalised exactly as in mention
    extraction; runs are matched greedily, longest first, left to right.
    """

    def __init__(self, roster_keys: Iterable[str], lexicon: LexiconConfig | None = None, max_tokens: int = 4):
        self.keys = frozenset(roster_keys)
        self.lexicon = lexicon
        self.max_tokens = max_tokens

    def _key(self, text: str) -> str | None:
        try:
            return canonicalize_alias(text, self.lexicon)
        except EmptyAfterCanonicalization:
            return None

    def match(self, title: str) -> list[str]:
        found = []
        for toks in tokenize(title):
            i = 0
            while i < len(toks):
                hit = None
                limit = min(self.max_tokens, len(toks) - i)
                # a window may not extend past a token followed by punctuation
                span = 1
                while span < limit and not toks[i + span - 1].breaks_after:
                    span += 1
                for n in range(span, 0, -1):
                    key = self._key(title[toks[i].start : toks[i + n - 1].end])
                    if key is not None and key in self.keys:
                        hit = (key, n)
                        break
                if hit:
                    found.append(hit[0])
                    i += hit[1]
                else:
                    i += 1
        return found


def _roster_attrs(roster) -> dict[str, dict]:
    if isinstance(roster, Mapping):
        return {k: dict(v) for k, v in roster.items()}
    out = {}
    for a in roster:
        if isinstance(a, AffiliationAssignment):
            out[a.alias_key] = {"set_id": a.set_id, "nation_id": a.nation_id}
        else:
            raise TypeError("roster entries must be AffiliationAssignment")
    return out


def count_pairs(posts: Iterable[PostRecord], matcher: AliasMatcher) -> Counter:
    """Number of posts co-mentioning each unordered pair (each post counts once per pair)."""
    counts: Counter = Counter()
    for post in posts:
        keys = sorted(set(matcher.match(post.title)))
        for pair in combinations(keys, 2):
            counts[pair] += 1
    return counts


def build_graph(posts: Iterable[PostRecord], roster, lexicon: LexiconConfig | None = None,
                max_tokens: int = 4) -> ComentionGraph:
    """Co-mention graph over roster members scanned from every post title.

    ``roster`` is a list of kept :class:`AffiliationAssignment` or a mapping
    ``alias_key -> {"set_id": ..., "nation_id": ...}``. All roster members
    become nodes, including those never co-mentioned.
    """
    attrs = _roster_attrs(roster)
    if not attrs:
        raise EmptyRoster("build_graph needs a non-empty roster")
    g = ComentionGraph()
    for key in sorted(attrs):
        g.add_node(key, **attrs[key])
    for (u, v), w in sorted(count_pairs(posts, AliasMatcher(attrs, lexicon, max_tokens)).items()):
        g.add_edge(u, v, w)
    return g


def graph_stats(g: ComentionGraph) -> dict:
    degrees = [g.degree(k) for k in g.node_list()]
    weights = [w for _, _, w in g.edges()]
    dist = Counter(degrees)
    return {
        "n_nodes": g.n_nodes,
        "n_edges": g.n_edges,
        "median_degree": float(np.median(degrees)) if degrees else 0.0,
        "mean_degree": float(np.mean(degrees)) if degrees else 0.0,
        "mean_edge_weight": float(np.mean(weights)) if weights else 0.0,
        "total_weight": int(sum(weights)),
        "degree_distribution": {int(k): int(dist[k]) for k in sorted(dist)},
    }


NODE_COLUMNS = ("alias_key", "set_id", "nation_id", "deceased")


def _fmt_attr(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    return str(value)


def export_graph(g: ComentionGraph, path, fmt: str = "edge_csv") -> list[Path]:
    """Write ``g`` under directory ``path`` as ``edges.csv``/``nodes.csv`` or ``graph.graphml``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if fmt == "edge_csv":
            edges, nodes = out / "edges.csv", out / "nodes.csv"
            with open(edges, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["source_alias", "target_alias", "weight"])
                for u, v, wt in g.edges():
                    w.writerow([u, v, wt])
            with open(nodes, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(NODE_COLUMNS)
                for k in g.node_list():
                    a = g.nodes[k]
                    w.writerow([k, _fmt_attr(a.get("set_id")), _fmt_attr(a.get("nation_id")),
                                _fmt_attr(a.get("deceased"))])
            return [edges, nodes]
        if fmt == "graphml":
            target = out / "graph.graphml"
            nx.write_graphml(g.to_networkx(), target, encoding="utf-8")
            return [target]
    except OSError as exc:
        raise CrowdnetError(f"cannot write graph to {out}: {exc}") from exc
    raise ValueError(f"unknown graph format {fmt!r}")


def import_graph(path, fmt: str = "edge_csv") -> ComentionGraph:
    src = Path(path)
    if fmt == "graphml":
        target = src if src.suffix == ".graphml" else src / "graph.graphml"
        nxg = nx.read_graphml(target)
        g = ComentionGraph()
        for k, attrs in nxg.nodes(data=True):
            clean = {}
            for name in ("set_id", "nation_id"):
                if name in attrs:
                    clean[name] = str(attrs[name])
            if "deceased" in attrs:
                clean["deceased"] = bool(attrs["deceased"])
            g.add_node(str(k), **clean)
        for u, v, attrs in nxg.edges(data=True):
            g.add_edge(str(u), str(v), int(attrs.get("weight", 1)))
        return g
    g = ComentionGraph()
    with open(src / "nodes.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            attrs = {}
            if row["set_id"]:
                attrs["set_id"] = row["set_id"]
            if row["nation_id"]:
                attrs["nation_id"] = row["nation_id"]
            if row["deceased"]:
                attrs["deceased"] = row["deceased"] == "1"
            g.add_node(row["alias_key"], **attrs)
    with open(src / "edges.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            g.add_edge(row["source_alias"], row["target_alias"], int(row["weight"]))
    return g
