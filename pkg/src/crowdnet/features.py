"""Per-person network covariates for the mortality models."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .graph import ComentionGraph

FEATURE_COLUMNS = (
    "degree_centrality",
    "pct_deceased_neighbors",
    "mean_weight_to_deceased",
    "pct_within_gang",
    "within_set_centrality",
    "within_nation_centrality",
)
MAIN_COLUMNS = FEATURE_COLUMNS[:4]


@dataclass
class PersonFeatures:
    alias_key: str
    set_id: str
    nation_id: str
    degree: int
    degree_centrality: float
    pct_deceased_neighbors: float
    mean_weight_to_deceased: float
    pct_within_gang: float
    within_set_centrality: float
    within_nation_centrality: float
    deceased: bool


def compute_features(g: ComentionGraph, deceased: Mapping[str, bool], roster: Mapping | None = None) -> list[PersonFeatures]:
    """Covariates for every node of ``g``, sorted by alias.

    Set and nation labels come from ``roster`` (alias -> dict with
    ``set_id``/``nation_id``) or from the node attributes. Centralities
    divide by the number of other nodes in the whole graph, the node's set
    or its nation; neighbour shares divide by degree and are zero for
    isolated nodes.
    """
    nodes = g.node_list()
    missing = [k for k in nodes if k not in deceased]
    if missing:
        raise KeyError(f"no mortality flag for {len(missing)} node(s), e.g. {missing[0]!r}")
    attrs = {k: (roster[k] if roster is not None else g.nodes[k]) for k in nodes}
    set_of = {k: attrs[k]["set_id"] for k in nodes}
    nation_of = {k: attrs[k]["nation_id"] for k in nodes}
    set_size: dict[str, int] = {}
    nation_size: dict[str, int] = {}
    for k in nodes:
        set_size[set_of[k]] = set_size.get(set_of[k], 0) + 1
        nation_size[nation_of[k]] = nation_size.get(nation_of[k], 0) + 1
    n = len(nodes)
    out = []
    for k in nodes:
        nb = g.neighbors(k)
        deg = len(nb)
        dead = [w for v, w in nb.items() if deceased[v]]
        same_set = sum(1 for v in nb if set_of[v] == set_of[k])
        same_nation = sum(1 for v in nb if nation_of[v] == nation_of[k])
        s_den = set_size[set_of[k]] - 1
        n_den = nation_size[nation_of[k]] - 1
        out.append(PersonFeatures(
            alias_key=k,
            set_id=set_of[k],
            nation_id=nation_of[k],
            degree=deg,
            degree_centrality=deg / (n - 1) if n > 1 else 0.0,
            pct_deceased_neighbors=len(dead) / deg if deg else 0.0,
            mean_weight_to_deceased=float(np.mean(dead)) if dead else 0.0,
            pct_within_gang=same_set / deg if deg else 0.0,
            within_set_centrality=same_set / s_den if s_den > 0 else 0.0,
            within_nation_centrality=same_nation / n_den if n_den > 0 else 0.0,
            deceased=bool(deceased[k]),
        ))
    return out


def feature_matrix(features: list[PersonFeatures], columns=MAIN_COLUMNS) -> np.ndarray:
    return np.array([[getattr(f, c) for c in columns] for f in features], dtype=float).reshape(len(features), len(columns))


@dataclass
class Scaling:
    columns: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray

    def to_json(self) -> dict:
        return {c: {"mean": float(m), "sd": float(s)} for c, m, s in zip(self.columns, self.mean, self.sd)}


def standardize(x: np.ndarray, columns=None) -> tuple[np.ndarray, Scaling]:
    """Column-wise z-scores using the population standard deviation.

    Constant columns become zeros and trigger a ``RuntimeWarning``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("standardize needs a 2-d array with at least 2 rows")
    columns = tuple(columns) if columns is not None else tuple(f"x{i}" for i in range(x.shape[1]))
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    z = np.zeros_like(x)
    for j in range(x.shape[1]):
        if sd[j] > 1e-12 * max(1.0, abs(mean[j])):
            z[:, j] = (x[:, j] - mean[j]) / sd[j]
        else:
            warnings.warn(f"column {columns[j]!r} has zero variance; set to 0", RuntimeWarning, stacklevel=2)
            sd[j] = 0.0
    return z, Scaling(columns, mean, sd)


def write_features(features: list[PersonFeatures], path, scaling_path=None, columns=FEATURE_COLUMNS) -> Scaling:
    raw = feature_matrix(features, columns)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        z, scaling = standardize(raw, columns) if len(features) >= 2 else (raw * 0, Scaling(tuple(columns), raw.mean(0), raw.std(0)))
    names = list(asdict(features[0]).keys()) if features else []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + [f"z_{c}" for c in columns])
        for f, zr in zip(features, z):
            row = []
            for name, val in asdict(f).items():
                if isinstance(val, bool):
                    row.append(int(val))
                elif isinstance(val, float):
                    row.append(f"{val:.10g}")
                else:
                    row.append(val)
            w.writerow(row + [f"{v:.10g}" for v in zr])
    if scaling_path is not None:
        with open(scaling_path, "w", encoding="utf-8") as fh:
            json.dump(scaling.to_json(), fh, indent=2, sort_keys=True)
    return scaling
