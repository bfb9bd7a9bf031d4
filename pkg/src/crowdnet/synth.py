"""Synthetic corpora with planted affiliations, networks, geography and mortality.

The generator writes every input file the pipeline consumes, plus a
``truth.json`` describing what was planted, so each stage can be scored
against known answers.

Layout: sets occupy cells of a square grid with side ``pitch_m`` metres
(projected coordinates). Persons tag their own set with probability
``1 - tag_noise`` and a uniformly random other set otherwise. Co-mention
ties follow a block model whose between-set probability decays with the
distance between set centroids. Mortality is Bernoulli with logit linear in
standardised network features of the planted network.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ConfigInvalid
from .features import FEATURE_COLUMNS, compute_features, feature_matrix, standardize
from .graph import ComentionGraph
from .mentions import DEFAULT_STOPWORDS, alias_key

_ONSETS = ["B", "D", "G", "J", "K", "L", "M", "N", "P", "R", "S", "T", "V", "Z", "Dr", "Tr", "Sh", "Ch"]
_VOWELS = ["a", "e", "i", "o", "u", "ay", "ee"]
_CODAS = ["", "", "n", "k", "r", "sh", "x", "z", "ll", "d"]
_PREFIXES = ["Lil", "Big", "Young", "Baby", "King"]
_PHRASES = [
    "spotted on the block", "dropped a track", "seen in a video", "speaks out", "on the news",
    "live on stream", "got locked up", "arrested downtown", "responds to the diss", "posted a clip",
    "at the funeral", "out on bail", "talks about the beef", "caught on camera",
]
_PAIR_LINKS = ["and", "with", "x", "alongside"]
_NOISE = [
    "shots fired on the east side last night", "what happened on the block today", "who got the best drill verse",
    "thoughts on the new mixtape", "another weekend another headline", "anybody know what this is about",
]
_GIVEN = ["Marcus", "Darnell", "Jamal", "Tyrone", "Andre", "Kevin", "Terrence", "Dwayne", "Corey", "Malik"]
_FAMILY = ["Johnson", "Williams", "Brown", "Jones", "Davis", "Wilson", "Moore", "Taylor", "Jackson", "White"]
_PLACE_WORDS = ["Chiraq", "Southside", "Eastside"]
_EPOCH_START = 1514764800  # 2018-01-01T00:00:00Z
_EPOCH_END = 1680307199  # 2023-03-31T23:59:59Z


@dataclass
class SynthConfig:
    n_sets: int = 12
    n_nations: int = 3
    persons_per_set: int = 20
    grid_cols: int = 4
    pitch_m: float = 500.0
    tag_noise: float = 0.2
    threshold: float = 0.70
    mentions_min: int = 20
    mentions_extra_mean: float = 35.0
    p_in: float = 0.3
    base_between: float = 0.08
    decay_length_m: float = 500.0
    comention_weight_mean: float = 1.0
    mortality_intercept: float = -1.3
    mortality_beta: dict = field(default_factory=lambda: {"degree_centrality": 1.0})
    sigma2_set: float = 0.0
    sigma2_nation: float = 0.0
    small_sets: int = 1
    small_set_size: int = 4
    unverified_sets: int = 1
    noise_posts: int = 200
    decoy_deaths: int = 5
    arrest_home_prob: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if self.n_sets < 2 or self.n_nations < 2 or self.n_nations > self.n_sets:
            raise ConfigInvalid("need at least 2 sets and 2 nations, with no more nations than sets")
        if self.persons_per_set < 2 or self.grid_cols < 1 or self.pitch_m <= 0:
            raise ConfigInvalid("persons_per_set >= 2, grid_cols >= 1 and pitch_m > 0 required")
        if not 0 <= self.tag_noise < 1:
            raise ConfigInvalid("tag_noise must lie in [0, 1)")
        if not 0.5 < self.threshold <= 1:
            raise ConfigInvalid("threshold must lie in (0.5, 1]")
        if self.tag_noise >= 1 - self.threshold - 1e-12 and self.tag_noise > 0:
            raise ConfigInvalid(f"tag_noise {self.tag_noise} is not identifiable at threshold {self.threshold}")
        if self.mentions_min < 1 or self.mentions_extra_mean < 0:
            raise ConfigInvalid("mentions_min >= 1 and mentions_extra_mean >= 0 required")
        for name in ("p_in", "base_between", "arrest_home_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigInvalid(f"{name} must be a probability")
        if self.decay_length_m <= 0 or self.comention_weight_mean < 0:
            raise ConfigInvalid("decay_length_m > 0 and comention_weight_mean >= 0 required")
        unknown = set(self.mortality_beta) - set(FEATURE_COLUMNS)
        if unknown:
            raise ConfigInvalid(f"mortality_beta names unknown features {sorted(unknown)}")
        if self.sigma2_set < 0 or self.sigma2_nation < 0:
            raise ConfigInvalid("variance components must be non-negative")

    @classmethod
    def from_mapping(cls, obj) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigInvalid(f"unknown synth keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class GroundTruth:
    affiliations: dict[str, str]
    nations: dict[str, str]
    kept_sets: list[str]
    blocks: dict[str, int]
    edges: dict[tuple[str, str], int]
    deceased: dict[str, bool]
    beta: dict[str, float]
    intercept: float
    mentions: dict[str, list[tuple[str, str]]]
    tagged_counts: dict[str, int]
    centroids: dict[str, tuple[float, float]]

    def network(self) -> ComentionGraph:
        g = ComentionGraph()
        for k in sorted(self.blocks):
            s = self.affiliations[k]
            g.add_node(k, set_id=s, nation_id=self.nations[s], deceased=self.deceased.get(k))
        for (u, v), w in sorted(self.edges.items()):
            if u in self.blocks and v in self.blocks:
                g.add_edge(u, v, w)
        return g

    def to_json(self) -> dict:
        return {
            "affiliations": dict(sorted(self.affiliations.items())),
            "nations": dict(sorted(self.nations.items())),
            "kept_sets": self.kept_sets,
            "blocks": dict(sorted(self.blocks.items())),
            "edges": [[u, v, w] for (u, v), w in sorted(self.edges.items())],
            "deceased": dict(sorted(self.deceased.items())),
            "beta": self.beta,
            "intercept": self.intercept,
            "mentions": {p: [list(m) for m in ms] for p, ms in sorted(self.mentions.items())},
            "tagged_counts": dict(sorted(self.tagged_counts.items())),
            "centroids": {s: list(c) for s, c in sorted(self.centroids.items())},
        }

    @classmethod
    def from_json(cls, obj) -> "GroundTruth":
        return cls(
            affiliations=dict(obj["affiliations"]), nations=dict(obj["nations"]), kept_sets=list(obj["kept_sets"]),
            blocks={k: int(v) for k, v in obj["blocks"].items()},
            edges={(u, v): int(w) for u, v, w in obj["edges"]},
            deceased={k: bool(v) for k, v in obj["deceased"].items()},
            beta=dict(obj["beta"]), intercept=float(obj["intercept"]),
            mentions={p: [tuple(m) for m in ms] for p, ms in obj["mentions"].items()},
            tagged_counts={k: int(v) for k, v in obj["tagged_counts"].items()},
            centroids={s: tuple(c) for s, c in obj["centroids"].items()},
        )


def load_truth(path) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        return GroundTruth.from_json(json.load(fh))


def _name(rng) -> list[str]:
    """Alias as a list of parts; two-part names may be joined by hyphen, space or nothing."""
    core = str(rng.choice(_ONSETS)) + str(rng.choice(_VOWELS)) + str(rng.choice(_CODAS))
    if len(core) < 3:
        core += "o"
    shape = rng.random()
    if shape < 0.35:
        return [core]
    if shape < 0.7:
        return [str(rng.choice(_PREFIXES)), core]
    return [str(rng.choice(list("BCDGJKLMNPTV"))), core]


def _variants(parts: list[str]) -> list[str]:
    if len(parts) == 1:
        return [parts[0]]
    a, b = parts
    return [f"{a}-{b}", f"{a} {b}", f"{a}{b}"]


def _make_aliases(rng, count: int) -> list[list[str]]:
    reserved = set(DEFAULT_STOPWORDS) | {alias_key(w) for p in _PHRASES + _NOISE for w in p.split()}
    reserved |= {alias_key(w) for w in _PAIR_LINKS + _PLACE_WORDS + _PREFIXES}
    reserved |= {alias_key(c) for c in "BCDGJKLMNPTVX"}
    keys: set[str] = set()
    cores: set[str] = set()
    out = []
    while len(out) < count:
        parts = _name(rng)
        key = alias_key("".join(parts))
        core = {alias_key(p) for p in parts if p not in _PREFIXES and len(p) > 1}
        # no alias may equal the distinctive part of another alias
        if key in keys or key in reserved or key in cores or core & keys:
            continue
        keys.add(key)
        cores |= core
        out.append(parts)
    return out


def _square(x0, y0, side, inset=0.0):
    a, b = x0 + inset, y0 + inset
    c, d = x0 + side - inset, y0 + side - inset
    return {"type": "Polygon", "coordinates": [[[a, b], [c, b], [c, d], [a, d], [a, b]]]}


def _feature_collection(features):
    return {"type": "FeatureCollection", "crs_kind": "projected_meters", "features": features}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def generate(config: SynthConfig, out_dir) -> tuple[dict[str, Path], GroundTruth]:
    """Write a synthetic corpus and its ground truth into ``out_dir``.

    Returns the paths of the emitted files (``posts``, ``annotations``,
    ``lexicon``, ``sets``, ``beats``, ``arrests``, ``mortality``,
    ``allowlist``, ``truth``) and the :class:`GroundTruth`. Output is
    byte-identical for a fixed configuration.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    # sets, nations and grid cells
    n_total_sets = config.n_sets + config.small_sets + config.unverified_sets
    set_ids = [f"S{i + 1:02d}" for i in range(n_total_sets)]
    kept_sets = set_ids[: config.n_sets]
    nation_ids = [f"N{j + 1}" for j in range(config.n_nations)]
    nations = {s: nation_ids[i * config.n_nations // config.n_sets] for i, s in enumerate(kept_sets)}
    for s in set_ids[config.n_sets :]:
        nations[s] = nation_ids[int(rng.integers(config.n_nations))]
    cols = config.grid_cols
    rows = math.ceil(n_total_sets / cols)
    cell = {s: divmod(i, cols) for i, s in enumerate(set_ids)}
    pitch = config.pitch_m
    centroids = {s: ((c + 0.5) * pitch, (r + 0.5) * pitch) for s, (r, c) in cell.items()}

    # persons
    sizes = {s: config.persons_per_set for s in kept_sets}
    for s in set_ids[config.n_sets : config.n_sets + config.small_sets]:
        sizes[s] = config.small_set_size
    for s in set_ids[config.n_sets + config.small_sets :]:
        sizes[s] = config.persons_per_set
    names = _make_aliases(rng, sum(sizes.values()))
    persons: list[tuple[str, list[str], str]] = []
    it = iter(names)
    for s in set_ids:
        for _ in range(sizes[s]):
            parts = next(it)
            persons.append((alias_key("".join(parts)), parts, s))
    affiliation = {k: s for k, _, s in persons}
    parts_of = {k: p for k, p, _ in persons}

    # tagged posts
    posts: list[tuple[str, list[tuple[int, int]]]] = []  # title, annotated alias spans
    planted: list[list[tuple[str, str]]] = []
    tagged_counts: dict[str, int] = {}
    tag_forms = {s: [s, s.lower(), f"Set {s[1:]}"] for s in set_ids}
    for k, parts, s in persons:
        n_m = config.mentions_min + int(rng.poisson(config.mentions_extra_mean))
        tagged_counts[k] = n_m
        others = [t for t in set_ids if t != s]
        for _ in range(n_m):
            tag_set = s if rng.random() >= config.tag_noise else others[int(rng.integers(len(others)))]
            forms = tag_forms[tag_set]
            tag = forms[int(rng.integers(len(forms)))]
            surface = _variants(parts)[int(rng.integers(len(_variants(parts))))]
            opener, closer = ("(", ")") if rng.random() < 0.7 else ("[", "]")
            phrase = _PHRASES[int(rng.integers(len(_PHRASES)))]
            form = int(rng.integers(4))
            if form == 0:
                prefix = ""
            elif form == 1:
                prefix = "rip "
            elif form == 2:
                prefix = "Update: "
            else:
                prefix = "Free "
            suffix = f" in {_PLACE_WORDS[int(rng.integers(len(_PLACE_WORDS)))]}" if rng.random() < 0.1 else ""
            title = f"{prefix}{surface} {opener}{tag}{closer} {phrase}{suffix}"
            start = len(prefix)
            posts.append((title, [(start, start + len(surface))]))
            planted.append([(k, surface)])

    # co-mention network over all persons
    keys = [k for k, _, _ in persons]
    idx_set = np.array([set_ids.index(affiliation[k]) for k in keys])
    cxy = np.array([centroids[s] for s in set_ids])
    dist = np.sqrt(((cxy[:, None, :] - cxy[None, :, :]) ** 2).sum(-1))
    p_between = config.base_between * np.exp(-dist / config.decay_length_m)
    edges: dict[tuple[str, str], int] = {}
    for i, j in combinations(range(len(keys)), 2):
        si, sj = idx_set[i], idx_set[j]
        p = config.p_in if si == sj else p_between[si, sj]
        if rng.random() < p:
            w = 1 + int(rng.poisson(config.comention_weight_mean))
            u, v = sorted((keys[i], keys[j]))
            edges[(u, v)] = w
    for (u, v), w in sorted(edges.items()):
        for _ in range(w):
            a, b = (u, v) if rng.random() < 0.5 else (v, u)
            va = _variants(parts_of[a])
            vb = _variants(parts_of[b])
            sa = va[int(rng.integers(len(va)))]
            sb = vb[int(rng.integers(len(vb)))]
            link = _PAIR_LINKS[int(rng.integers(len(_PAIR_LINKS)))]
            phrase = _PHRASES[int(rng.integers(len(_PHRASES)))]
            posts.append((f"{sa} {link} {sb} {phrase}", []))
            planted.append([])
    for _ in range(config.noise_posts):
        text = _NOISE[int(rng.integers(len(_NOISE)))]
        if rng.random() < 0.3:
            text += " (video)"
        posts.append((text, []))
        planted.append([])

    order = rng.permutation(len(posts))
    times = np.sort(rng.integers(_EPOCH_START, _EPOCH_END + 1, len(posts)))
    post_rows = []
    annotations = []
    mentions_truth: dict[str, list[tuple[str, str]]] = {}
    for rank, src in enumerate(order):
        pid = f"p{rank + 1:06d}"
        title, spans = posts[src]
        post_rows.append({"post_id": pid, "created_at": int(times[rank]), "title": title})
        if "(" in title or "[" in title:
            annotations.append({"post_id": pid, "spans": [{"start": a, "end": b} for a, b in spans]})
            if planted[src]:
                mentions_truth[pid] = planted[src]

    # mortality planted on features of the kept network
    kept_keys = sorted(k for k in keys if affiliation[k] in kept_sets)
    g_true = ComentionGraph()
    for k in kept_keys:
        g_true.add_node(k, set_id=affiliation[k], nation_id=nations[affiliation[k]])
    for (u, v), w in sorted(edges.items()):
        if u in g_true.nodes and v in g_true.nodes:
            g_true.add_edge(u, v, w)
    beta = {c: float(config.mortality_beta[c]) for c in FEATURE_COLUMNS if c in config.mortality_beta}
    eta = np.full(len(kept_keys), config.mortality_intercept)
    if beta:
        feats = compute_features(g_true, {k: False for k in kept_keys})
        cols_b = list(beta)
        z, _ = standardize(feature_matrix(feats, cols_b), cols_b)
        eta = eta + z @ np.array([beta[c] for c in cols_b])
    b_set = {s: rng.normal(0, math.sqrt(config.sigma2_set)) for s in set_ids}
    b_nat = {v: rng.normal(0, math.sqrt(config.sigma2_nation)) for v in nation_ids}
    eta = eta + np.array([b_set[affiliation[k]] + b_nat[nations[affiliation[k]]] for k in kept_keys])
    dead_draw = rng.random(len(kept_keys)) < expit(eta)
    deceased = {k: bool(d) for k, d in zip(kept_keys, dead_draw)}
    mortality_rows = []
    for k in kept_keys:
        if deceased[k]:
            v = _variants(parts_of[k])
            mortality_rows.append({
                "alias": v[int(rng.integers(len(v)))], "set_id": affiliation[k],
                "government_name": f"{rng.choice(_GIVEN)} {rng.choice(_FAMILY)}",
                "source_url": f"https://example.org/obituary/{k}",
            })
    for d in range(config.decoy_deaths):
        mortality_rows.append({"alias": f"Zq{d}x Decoy", "set_id": "", "government_name": "",
                               "source_url": f"https://example.org/decoy/{d}"})

    # geography and arrests
    set_feats = [{"type": "Feature", "properties": {"set_id": s, "nation_id": nations[s]},
                  "geometry": _square(c * pitch, r * pitch, pitch, inset=0.05 * pitch)}
                 for s, (r, c) in cell.items()]
    beat_feats = []
    for r in range(rows):
        for c in range(cols):
            beat_feats.append({"type": "Feature", "properties": {"beat_id": f"B{r}{c}"},
                               "geometry": _square(c * pitch, r * pitch, pitch)})
    arrests = []
    for k in kept_keys:
        r, c = cell[affiliation[k]]
        for _ in range(1 + int(rng.poisson(1.0))):
            if rng.random() < config.arrest_home_prob:
                rr, cc = r, c
            else:
                nbr = [(r + dr, c + dc) for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1))
                       if 0 <= r + dr < rows and 0 <= c + dc < cols]
                rr, cc = nbr[int(rng.integers(len(nbr)))]
            arrests.append({"person_id": k, "set_id": affiliation[k], "beat_id": f"B{rr}{cc}"})

    paths = {name: out / fname for name, fname in (
        ("posts", "posts.jsonl"), ("annotations", "annotations.jsonl"), ("lexicon", "lexicon.json"),
        ("sets", "sets.geojson"), ("beats", "beats.geojson"), ("arrests", "arrests.csv"),
        ("mortality", "mortality.csv"), ("allowlist", "allowlist.csv"), ("truth", "truth.json"))}
    with open(paths["posts"], "w", encoding="utf-8") as fh:
        for row in post_rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    with open(paths["annotations"], "w", encoding="utf-8") as fh:
        for row in annotations:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    tag_map = {}
    for s in set_ids:
        for form in tag_forms[s][1:]:
            tag_map[form] = s
    _write_json(paths["lexicon"], {"merge_map": {}, "exclude_list": sorted(alias_key(w) for w in _PLACE_WORDS),
                                   "tag_alias_map": tag_map, "tag_exclude_list": ["video"]})
    _write_json(paths["sets"], _feature_collection(set_feats))
    _write_json(paths["beats"], _feature_collection(beat_feats))
    with open(paths["arrests"], "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, ["person_id", "set_id", "beat_id"], lineterminator="\n")
        w.writeheader()
        w.writerows(arrests)
    with open(paths["mortality"], "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, ["alias", "set_id", "government_name", "source_url"], lineterminator="\n")
        w.writeheader()
        w.writerows(mortality_rows)
    with open(paths["allowlist"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set_id", "nation_id"])
        for s in set_ids[: config.n_sets + config.small_sets]:
            w.writerow([s, nations[s]])

    truth = GroundTruth(
        affiliations=affiliation, nations=nations, kept_sets=kept_sets,
        blocks={k: kept_sets.index(affiliation[k]) for k in kept_keys}, edges=edges, deceased=deceased,
        beta=beta, intercept=config.mortality_intercept, mentions=mentions_truth, tagged_counts=tagged_counts,
        centroids=centroids,
    )
    _write_json(paths["truth"], {"config": asdict(config), **truth.to_json()})
    return paths, truth


@dataclass
class RecoveryReport:
    precision: float
    recall: float
    accuracy: float
    n_assigned: int
    n_planted: int
    nmi: float | None = None
    coefficients: dict = field(default_factory=dict)
    distance_correlation: float | None = None
    distance_sign_ok: bool | None = None

    def to_json(self) -> dict:
        return asdict(self)


def score_recovery(truth: GroundTruth, assignments, partition=None, fit=None, correlation=None,
                   z_crit: float = 1.959963984540054) -> RecoveryReport:
    """Compare pipeline outputs with the planted truth.

    ``assignments`` are the resolver's outputs before set filtering.
    Precision is the share of resolved aliases assigned their true set;
    recall (reported as ``accuracy`` as well) is the share of planted
    persons resolved to their true set. ``fit`` is any object with
    ``names``, ``beta`` and ``se``; each planted coefficient is reported
    with its Wald interval and whether it covers the truth.
    """
    planted = truth.affiliations
    resolved = {a.alias_key: a.set_id for a in assignments if a.status == "resolved"}
    hits = sum(1 for k, s in resolved.items() if planted.get(k) == s)
    precision = hits / len(resolved) if resolved else 0.0
    recall = hits / len(planted) if planted else 0.0
    report = RecoveryReport(precision, recall, recall, len(resolved), len(planted))
    if partition is not None:
        from .community import nmi

        common = sorted(set(partition.assignment) & set(truth.blocks))
        if common:
            report.nmi = nmi([partition.assignment[k] for k in common], [truth.blocks[k] for k in common])
    if fit is not None:
        for name, b in truth.beta.items():
            if name not in fit.names:
                continue
            j = fit.names.index(name)
            est, se = float(fit.beta[j]), float(fit.se[j])
            lo, hi = est - z_crit * se, est + z_crit * se
            report.coefficients[name] = {"truth": b, "estimate": est, "se": se, "ci": [lo, hi],
                                         "covers": bool(lo <= b <= hi), "sign_ok": bool(np.sign(est) == np.sign(b))}
    if correlation is not None:
        r = float(getattr(correlation, "r", correlation))
        report.distance_correlation = r
        report.distance_sign_ok = r < 0
    return report
