"""Config-driven stage runner writing every artifact under a run directory.

A run directory is named from a digest of the parameters and the input
file contents, so rerunning the same configuration rewrites the same
directory with byte-identical outputs. Each stage records a manifest with
its input digests, parameters and seed.
"""
from __future__ import annotations

import csv
import hashlib
import json
import sys
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import affiliation, community, corpus, features, geo, graph, mentions, mortality
from .errors import ConfigInvalid, CrowdnetError, Degeneracy, NonConvergence, SeparationDetected, SingularDesign
from .ergm import ErgmModel, fit_mcmc_mle, fit_mple
from .glmm import GlmmSpec, fit_glmm, fit_logistic_bootstrap, variance_decomposition
from .reports import model_markdown, write_json

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_PATH_KEYS = ("posts", "lexicon", "allowlist", "annotations", "sets", "beats", "arrests", "mortality")
_REQUIRED = ("posts", "lexicon", "allowlist")


@dataclass
class PipelineConfig:
    posts: str
    lexicon: str
    allowlist: str
    annotations: str | None = None
    sets: str | None = None
    beats: str | None = None
    arrests: str | None = None
    mortality: str | None = None
    out: str = "runs"
    threshold: float = 0.70
    min_mentions: int = 5
    min_affiliates: int = 10
    max_tokens: int = 4
    resolution: float = 1.0
    seed: int = 0
    permutation_iterations: int = 10000
    bootstrap: int = 1000
    sensitivity_thresholds: tuple = (0.51, 0.90)
    ergm_decay: float = 0.5
    ergm_mcmc: bool = True
    ergm_samples: int = 1000
    workers: int = 1

    def validate(self) -> None:
        for key in _PATH_KEYS:
            value = getattr(self, key)
            if value is None:
                if key in _REQUIRED:
                    raise ConfigInvalid(f"config is missing required path {key!r}")
                continue
            if not Path(value).is_file():
                raise ConfigInvalid(f"{key} file not found: {value}")
        if not 0.5 < self.threshold <= 1:
            raise ConfigInvalid(f"threshold must lie in (0.5, 1], got {self.threshold}")
        for t in self.sensitivity_thresholds:
            if not 0.5 < t <= 1:
                raise ConfigInvalid(f"sensitivity threshold must lie in (0.5, 1], got {t}")
        for key in ("min_mentions", "min_affiliates", "max_tokens", "permutation_iterations", "workers",
                    "ergm_samples"):
            if int(getattr(self, key)) < 1:
                raise ConfigInvalid(f"{key} must be >= 1")
        if self.bootstrap < 2:
            raise ConfigInvalid("bootstrap must be >= 2")

    def params(self) -> dict:
        """Parameters that shape outputs (paths and the output root excluded)."""
        d = asdict(self)
        for key in _PATH_KEYS + ("out", "workers"):
            d.pop(key)
        d["sensitivity_thresholds"] = list(self.sensitivity_thresholds)
        return d


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Read a flat TOML file; relative paths in it resolve against the file's directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from exc
    return config_from_mapping(raw, base=path.parent, overrides=overrides)


def config_from_mapping(raw: dict, base=".", overrides: dict | None = None) -> PipelineConfig:
    """Build a config from a flat mapping.

    Relative paths in ``raw`` resolve against ``base``; relative paths in
    ``overrides`` (command-line values) resolve against the working directory.
    """
    raw = dict(raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in _PATH_KEYS + ("out",):
            value = str(Path(str(value)).absolute())
        raw[key] = value
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    nested = [k for k, v in raw.items() if isinstance(v, dict)]
    if nested:
        raise ConfigInvalid(f"config must be flat; tables found: {sorted(nested)}")
    base = Path(base)
    for key in _PATH_KEYS + ("out",):
        if raw.get(key) is not None:
            p = Path(str(raw[key]))
            raw[key] = str(p if p.is_absolute() else base / p)
    if "sensitivity_thresholds" in raw:
        raw["sensitivity_thresholds"] = tuple(float(t) for t in raw["sensitivity_thresholds"])
    missing = [k for k in _REQUIRED if k not in raw]
    if missing:
        raise ConfigInvalid(f"config is missing required path(s): {missing}")
    cfg = PipelineConfig(**raw)
    cfg.validate()
    return cfg


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Run directory plus memoised inputs shared by the stages."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.inputs = {k: file_digest(getattr(config, k)) for k in _PATH_KEYS if getattr(config, k)}
        blob = json.dumps({"params": config.params(), "inputs": self.inputs}, sort_keys=True).encode()
        self.digest = hashlib.sha256(blob).hexdigest()[:12]
        self.dir = Path(config.out) / f"run_{self.digest}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self._cache: dict = {}
        self.completed: list[str] = []

    def path(self, *parts) -> Path:
        p = self.dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def need(self, key: str) -> str:
        value = getattr(self.config, key)
        if value is None:
            raise ConfigInvalid(f"this stage needs the {key!r} input, which the config does not set")
        return value

    def manifest(self, stage: str, inputs: list[str], params: dict, outputs: list[Path],
                 upstream: tuple[str, ...] = ()) -> None:
        """Record input digests, upstream artifact digests, parameters and outputs of ``stage``."""
        write_json(self.path(f"manifest_{stage}.json"), {
            "stage": stage,
            "inputs": {k: self.inputs[k] for k in inputs if k in self.inputs},
            "upstream": {u: file_digest(self.dir / u) for u in upstream},
            "params": params,
            "seed": self.config.seed,
            "outputs": {str(p.relative_to(self.dir)): file_digest(p) for p in outputs},
        })
        self.completed.append(stage)

    # shared intermediate objects
    def lexicon(self):
        if "lexicon" not in self._cache:
            self._cache["lexicon"] = mentions.load_lexicon(self.config.lexicon)
        return self._cache["lexicon"]

    def posts(self):
        if "posts" not in self._cache:
            self._cache["posts"] = corpus.load_posts(self.config.posts)
        return self._cache["posts"]


# ---------------------------------------------------------------- stages

def stage_ingest(run: Run) -> None:
    posts = run.posts()
    stats = corpus.corpus_stats(posts)
    tagged = list(corpus.filter_tagged_titles(posts))
    out_posts = run.path("tagged_posts.jsonl")
    corpus.write_posts(tagged, out_posts)
    out_stats = write_json(run.path("corpus_stats.json"), stats.to_json())
    run._cache["tagged"] = tagged
    run.manifest("ingest", ["posts"], {}, [out_posts, out_stats])


def _tagged(run: Run):
    if "tagged" not in run._cache:
        run._cache["tagged"] = corpus.load_posts(run.path("tagged_posts.jsonl"))
    return run._cache["tagged"]


def stage_extract(run: Run) -> None:
    ann = mentions.load_annotations(run.config.annotations) if run.config.annotations else None
    events = list(mentions.emit_mentions(_tagged(run), run.lexicon(), ann))
    out = run.path("mentions.jsonl")
    mentions.write_mentions(events, out)
    run._cache["mentions"] = events
    run.manifest("extract", ["lexicon", "annotations"], {"annotations": bool(ann)}, [out], ("tagged_posts.jsonl",))


def _mentions(run: Run):
    if "mentions" not in run._cache:
        run._cache["mentions"] = mentions.read_mentions(run.path("mentions.jsonl"))
    return run._cache["mentions"]


def resolve_sample(run: Run, threshold: float):
    """Resolved and filtered roster at ``threshold``: (all assignments, kept, set roster)."""
    profiles = affiliation.build_profiles(_mentions(run), run.lexicon())
    assignments = affiliation.resolve_all(profiles, threshold, run.config.min_mentions)
    allow = affiliation.load_allowlist(run.config.allowlist)
    kept, sets = affiliation.filter_sets(assignments, allow, run.config.min_affiliates)
    return assignments, kept, sets


def stage_affiliate(run: Run) -> None:
    assignments, kept, sets = resolve_sample(run, run.config.threshold)
    out_all = run.path("assignments.csv")
    affiliation.write_assignments(assignments, out_all)
    out_kept = run.path("roster.csv")
    affiliation.write_assignments(kept, out_kept)
    out_sets = run.path("sets.csv")
    with open(out_sets, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set_id", "nation_id", "affiliate_count", "verified"])
        for s in sets:
            w.writerow([s.set_id, s.nation_id, s.affiliate_count, int(s.verified)])
    counts = {}
    for a in assignments:
        counts[a.status] = counts.get(a.status, 0) + 1
    out_sum = write_json(run.path("affiliation_summary.json"), {
        "profiles": len(assignments), "status_counts": counts, "kept": len(kept), "sets": [s.set_id for s in sets]})
    run._cache["kept"] = kept
    run.manifest("affiliate", ["allowlist", "lexicon"],
                 {"threshold": run.config.threshold, "min_mentions": run.config.min_mentions,
                  "min_affiliates": run.config.min_affiliates}, [out_all, out_kept, out_sets, out_sum],
                 ("mentions.jsonl",))


def _kept(run: Run):
    if "kept" not in run._cache:
        run._cache["kept"] = affiliation.read_assignments(run.path("roster.csv"))
    return run._cache["kept"]


def stage_graph(run: Run) -> None:
    g = graph.build_graph(run.posts(), _kept(run), run.lexicon(), run.config.max_tokens)
    outs = graph.export_graph(g, run.dir / "graph", "edge_csv")
    outs += graph.export_graph(g, run.dir / "graph", "graphml")
    stats = graph.graph_stats(g)
    outs.append(write_json(run.path("graph_stats.json"), stats))
    run._cache["graph"] = g
    run.manifest("graph", ["posts", "lexicon"], {"max_tokens": run.config.max_tokens}, outs, ("roster.csv",))


def _graph(run: Run):
    if "graph" not in run._cache:
        run._cache["graph"] = graph.import_graph(run.dir / "graph")
    return run._cache["graph"]


def stage_communities(run: Run) -> None:
    g = _graph(run)
    part = community.louvain(g, run.config.resolution, run.config.seed)
    sets_of = {k: g.nodes[k]["set_id"] for k in g.node_list()}
    table = community.composition(part, sets_of)
    base = community.permutation_baseline(part, sets_of, run.config.permutation_iterations, run.config.seed,
                                          run.config.workers)
    outs = []
    p = run.path("partition.csv")
    with open(p, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alias_key", "community"])
        for k in sorted(part.assignment):
            w.writerow([k, part.assignment[k]])
    outs.append(p)
    outs.append(write_json(run.path("communities.json"), {
        "modularity": part.modularity_q, "n_communities": part.n_communities, "sizes": part.sizes(),
        "level_modularity": part.level_modularity, "resolution": part.resolution, "seed": part.seed,
        "permutation_iterations": base.iterations, "max_abs_deviation_from_baseline": base.max_deviation}))
    p = run.path("composition.csv")
    with open(p, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set_id", "community", "observed", "baseline_mean", "baseline_se", "deviation"])
        for i, s in enumerate(table.set_ids):
            for c in range(table.n_communities):
                w.writerow([s, c, f"{table.matrix[i, c]:.6f}", f"{base.mean.matrix[i, c]:.6f}",
                            f"{base.standard_error[i, c]:.6f}", f"{base.deviation[i, c]:.6f}"])
    outs.append(p)
    if run.config.sets:
        layer = geo.load_layer(run.config.sets)
        p = run.path("community_map.geojson")
        geo.write_choropleth(layer, table, base.mean, p)
        outs.append(p)
    run._cache["partition"] = part
    run.manifest("communities", ["sets"], {"resolution": run.config.resolution,
                                           "iterations": run.config.permutation_iterations}, outs,
                 ("graph/edges.csv", "graph/nodes.csv"))


def _partition(run: Run) -> dict[str, int]:
    if "partition" in run._cache:
        return run._cache["partition"].assignment
    with open(run.path("partition.csv"), encoding="utf-8", newline="") as fh:
        return {r["alias_key"]: int(r["community"]) for r in csv.DictReader(fh)}


def stage_geo(run: Run) -> None:
    g = _graph(run)
    layer = geo.load_layer(run.need("sets"))
    set_ids = sorted({g.nodes[k]["set_id"] for k in g.node_list()})
    dist = geo.distance_matrix(layer, set_ids)
    com = geo.set_comention_matrix(g, set_ids=set_ids)
    report = {"set_ids": set_ids, "crs_kind": layer.crs_kind, "distance_m": dist.matrix,
              "comention_density": com.matrix, "centroids": {s: geo.feature_centroid(layer, s) for s in set_ids}}
    try:
        r = geo.distance_comention_correlation(dist, com)
        report["correlation"] = {"r": r.r, "p_value": r.p_value, "n_pairs": r.n}
    except CrowdnetError as exc:
        report["correlation"] = {"error": type(exc).__name__, "message": str(exc)}
    if run.config.beats and run.config.arrests:
        beats = geo.load_layer(run.config.beats, id_field="beat_id")
        checks = geo.beat_validation(layer, beats, geo.load_arrests(run.config.arrests), set_ids)
        report["beat_validation"] = [asdict(c) for c in checks]
    out = write_json(run.path("geo_report.json"), report)
    run.manifest("geo", ["sets", "beats", "arrests"], {}, [out], ("graph/edges.csv", "graph/nodes.csv"))


def analytic_graph(g, join) -> "graph.ComentionGraph":
    keep = [k for k in g.node_list() if k in join.deceased]
    sub = g.subgraph(keep)
    sub.set_attribute("deceased", join.deceased)
    return sub


def stage_mortality(run: Run) -> None:
    g = _graph(run)
    records = mortality.load_mortality(run.need("mortality"))
    roster = {k: g.nodes[k]["set_id"] for k in g.node_list()}
    join = mortality.join_mortality(roster, records, run.lexicon())
    ag = analytic_graph(g, join)
    audit = run.path("mortality_audit.jsonl")
    mortality.write_audit(join, audit)
    outs = [audit] + graph.export_graph(ag, run.dir / "analytic_graph", "edge_csv")
    counts = {}
    for rec in join.audit:
        counts[rec.outcome] = counts.get(rec.outcome, 0) + 1
    outs.append(write_json(run.path("mortality_summary.json"), {
        "sample_size": join.sample_size, "deceased": join.deceased_count, "rate": join.rate,
        "dropped": join.dropped, "outcomes": counts,
        "set_conflicts": sum(1 for r in join.audit if r.set_conflict)}))
    run._cache["analytic"] = ag
    run.manifest("mortality", ["mortality", "lexicon"], {}, outs, ("graph/edges.csv", "graph/nodes.csv"))


def _analytic(run: Run):
    if "analytic" not in run._cache:
        run._cache["analytic"] = graph.import_graph(run.dir / "analytic_graph")
    return run._cache["analytic"]


def stage_features(run: Run) -> None:
    ag = _analytic(run)
    deceased = {k: bool(ag.nodes[k].get("deceased")) for k in ag.node_list()}
    feats = features.compute_features(ag, deceased)
    out = run.path("features.csv")
    scaling = run.path("scaling.json")
    features.write_features(feats, out, scaling)
    run._cache["features"] = feats
    run.manifest("features", [], {"columns": list(features.FEATURE_COLUMNS)}, [out, scaling],
                 ("analytic_graph/edges.csv", "analytic_graph/nodes.csv"))


def _features(run: Run):
    if "features" not in run._cache:
        ag = _analytic(run)
        run._cache["features"] = features.compute_features(ag, {k: bool(ag.nodes[k].get("deceased"))
                                                                for k in ag.node_list()})
    return run._cache["features"]


# ---------------------------------------------------------------- model battery

MAIN = list(features.MAIN_COLUMNS)
WITHIN_SET = ["within_set_centrality", "pct_deceased_neighbors", "mean_weight_to_deceased", "pct_within_gang"]
WITHIN_NATION = ["within_nation_centrality", "pct_deceased_neighbors", "mean_weight_to_deceased", "pct_within_gang"]


def _design(feats, columns):
    y = np.array([f.deceased for f in feats], dtype=float)
    if not columns:
        return y, np.zeros((len(feats), 0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        z, _ = features.standardize(features.feature_matrix(feats, columns), columns)
    return y, z


def _glmm_report(feats, columns, factors: dict) -> dict:
    y, z = _design(feats, columns)
    spec = GlmmSpec(y, z, factors, covariate_names=list(columns))
    fit = fit_glmm(spec)
    rep = fit.to_json()
    if not columns:
        rep["decomposition"] = variance_decomposition(fit)
    return rep


def _guard(fn, *args, **kwargs) -> dict:
    try:
        return fn(*args, **kwargs)
    except (SeparationDetected, SingularDesign, NonConvergence, ValueError) as exc:
        err = {"type": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, SeparationDetected):
            err["diagnostics"] = exc.diagnostics
        return {"error": err}


def _factors(feats, communities=None) -> dict:
    out = {"set": [f.set_id for f in feats], "nation": [f.nation_id for f in feats]}
    if communities is not None:
        out["community"] = [str(communities[f.alias_key]) for f in feats]
    return out


def _sample_at(run: Run, threshold: float):
    _, kept, _ = resolve_sample(run, threshold)
    g = graph.build_graph(run.posts(), kept, run.lexicon(), run.config.max_tokens)
    roster = {k: g.nodes[k]["set_id"] for k in g.node_list()}
    join = mortality.join_mortality(roster, mortality.load_mortality(run.need("mortality")), run.lexicon())
    ag = analytic_graph(g, join)
    return features.compute_features(ag, join.deceased)


def model_battery(run: Run) -> dict:
    feats = _features(run)
    comm = _partition(run)
    reports = {
        "empty": _guard(_glmm_report, feats, [], _factors(feats)),
        "main": _guard(_glmm_report, feats, MAIN, _factors(feats)),
        "four_level": _guard(_glmm_report, feats, [], _factors(feats, comm)),
    }
    y, z = _design(feats, MAIN)

    def boot():
        return fit_logistic_bootstrap(y, z, run.config.bootstrap, run.config.seed, names=MAIN,
                                      workers=run.config.workers).to_json()

    reports["single_level_bootstrap"] = _guard(boot)
    for t in run.config.sensitivity_thresholds:
        key = f"threshold_{t:.2f}"
        try:
            sub = _sample_at(run, t)
            reports[key] = _guard(_glmm_report, sub, MAIN, _factors(sub))
        except CrowdnetError as exc:
            reports[key] = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        reports[key]["threshold"] = t
    reports["within_set"] = _guard(_glmm_report, feats, WITHIN_SET, _factors(feats))
    reports["within_nation"] = _guard(_glmm_report, feats, WITHIN_NATION, _factors(feats))
    return reports


def stage_model(run: Run) -> None:
    reports = model_battery(run)
    outs = [write_json(run.path("models", f"model_{k}.json"), v) for k, v in reports.items()]
    outs.append(write_json(run.path("model_report.json"), reports))
    md = run.path("model_report.md")
    md.write_text(model_markdown(reports), encoding="utf-8")
    outs.append(md)
    run.manifest("model", ["mortality"], {"bootstrap": run.config.bootstrap,
                                          "sensitivity_thresholds": list(run.config.sensitivity_thresholds)}, outs,
                 ("features.csv", "partition.csv", "mentions.jsonl"))


def stage_ergm(run: Run) -> None:
    ag = _analytic(run)
    model = ErgmModel.default("deceased", run.config.ergm_decay)
    report: dict = {"terms": model.labels, "n_nodes": ag.n_nodes, "n_edges": ag.n_edges}
    try:
        mple = fit_mple(ag, model)
        report["mple"] = mple.to_json()
    except SeparationDetected as exc:
        report["mple"] = {"error": {"type": "SeparationDetected", "message": str(exc)}}
        mple = None
    if run.config.ergm_mcmc and mple is not None:
        try:
            report["mcmc_mle"] = fit_mcmc_mle(ag, model, seed=run.config.seed, samples=run.config.ergm_samples).to_json()
        except Degeneracy as exc:
            report["mcmc_mle"] = {"error": {"type": "Degeneracy", "message": str(exc), "theta": exc.theta}}
    best = report.get("mcmc_mle") if "terms" in report.get("mcmc_mle", {}) else report.get("mple")
    if best and "terms" in best:
        row = next(t for t in best["terms"] if t["term"] == "nodecov.deceased")
        report["mortality_tie_effect"] = {"method": best["method"], "estimate": row["estimate"], "z": row["z"],
                                          "abs_z_below_1_96": abs(row["z"]) < 1.96}
    out = write_json(run.path("ergm_report.json"), report)
    run.manifest("ergm", [], {"decay": run.config.ergm_decay, "mcmc": run.config.ergm_mcmc,
                              "samples": run.config.ergm_samples}, [out],
                 ("analytic_graph/edges.csv", "analytic_graph/nodes.csv"))


STAGES = {
    "ingest": (stage_ingest, [], "corpus_stats.json"),
    "extract": (stage_extract, ["ingest"], "mentions.jsonl"),
    "affiliate": (stage_affiliate, ["extract"], "roster.csv"),
    "graph": (stage_graph, ["affiliate"], "graph_stats.json"),
    "communities": (stage_communities, ["graph"], "partition.csv"),
    "geo": (stage_geo, ["graph"], "geo_report.json"),
    "mortality": (stage_mortality, ["graph"], "mortality_summary.json"),
    "features": (stage_features, ["mortality"], "features.csv"),
    "model": (stage_model, ["features", "communities"], "model_report.json"),
    "ergm": (stage_ergm, ["mortality"], "ergm_report.json"),
}
PIPELINE = ["ingest", "extract", "affiliate", "graph", "communities", "geo", "mortality", "features", "model", "ergm"]


def run_stage(name: str, config: PipelineConfig, run: Run | None = None) -> Run:
    """Run one stage, first running any upstream stage whose outputs are missing."""
    run = run or Run(config)
    if name == "pipeline":
        for stage in PIPELINE:
            if stage == "geo" and not config.sets:
                continue
            STAGES[stage][0](run)
        return run
    if name not in STAGES:
        raise ConfigInvalid(f"unknown stage {name!r}")
    fn, deps, marker = STAGES[name]
    for dep in deps:
        if not (run.dir / STAGES[dep][2]).exists() or not (run.dir / f"manifest_{dep}.json").exists():
            run_stage(dep, config, run)
    fn(run)
    return run
