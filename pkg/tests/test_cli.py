import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from crowdnet.cli import main

ARTIFACTS = [
    "tagged_posts.jsonl", "corpus_stats.json", "mentions.jsonl", "assignments.csv", "roster.csv", "sets.csv",
    "affiliation_summary.json", "graph/edges.csv", "graph/nodes.csv", "graph/graph.graphml", "graph_stats.json",
    "partition.csv", "communities.json", "composition.csv", "community_map.geojson", "geo_report.json",
    "mortality_audit.jsonl", "mortality_summary.json", "features.csv", "scaling.json", "model_report.json",
    "model_report.md", "ergm_report.json",
]
SPECS = ["empty", "main", "four_level", "single_level_bootstrap", "threshold_0.51", "threshold_0.90",
         "within_set", "within_nation"]


def digests(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "fx"
    assert main(["synth", "--out", str(out), "--seed", "1"]) == 0
    return out


@pytest.fixture(scope="module")
def first_run(fixture_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs_a")
    assert main(["pipeline", str(fixture_dir / "config.toml"), "--out", str(out)]) == 0
    (run_dir,) = list(out.glob("run_*"))
    return run_dir


def test_synth_writes_inputs_and_config(fixture_dir):
    for name in ("posts.jsonl", "annotations.jsonl", "lexicon.json", "sets.geojson", "beats.geojson",
                 "arrests.csv", "mortality.csv", "allowlist.csv", "truth.json", "config.toml"):
        assert (fixture_dir / name).is_file(), name


def test_pipeline_writes_every_artifact(first_run):
    for name in ARTIFACTS:
        assert (first_run / name).is_file(), name
    for stage in ("ingest", "extract", "affiliate", "graph", "communities", "geo", "mortality", "features",
                  "model", "ergm"):
        man = json.loads((first_run / f"manifest_{stage}.json").read_text())
        assert man["stage"] == stage and man["outputs"]
    for spec in SPECS:
        assert (first_run / "models" / f"model_{spec}.json").is_file(), spec
    report = json.loads((first_run / "model_report.json").read_text())
    assert set(SPECS) <= set(report)


def test_rerun_is_byte_identical(first_run, fixture_dir, tmp_path):
    assert main(["pipeline", str(fixture_dir / "config.toml"), "--out", str(tmp_path)]) == 0
    (second,) = list(tmp_path.glob("run_*"))
    assert second.name == first_run.name
    assert digests(second) == digests(first_run)


def test_seed_override_changes_run_directory(fixture_dir, tmp_path, capsys):
    assert main(["ingest", str(fixture_dir / "config.toml"), "--out", str(tmp_path), "--seed", "9"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["stage"] == "ingest" and summary["stages_run"] == ["ingest"]
    assert main(["ingest", str(fixture_dir / "config.toml"), "--out", str(tmp_path), "--seed", "10"]) == 0
    assert len(list(tmp_path.glob("run_*"))) == 2


def test_single_stage_runs_upstream(fixture_dir, tmp_path, capsys):
    assert main(["graph", str(fixture_dir / "config.toml"), "--out", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["stages_run"] == ["ingest", "extract", "affiliate", "graph"]


def test_missing_allowlist_names_the_path(fixture_dir, tmp_path, capsys):
    conf = (fixture_dir / "config.toml").read_text().replace('allowlist = "allowlist.csv"',
                                                             'allowlist = "nowhere/allow.csv"')
    path = fixture_dir / "broken.toml"
    path.write_text(conf)
    code = main(["affiliate", str(path), "--out", str(tmp_path)])
    err = json.loads(capsys.readouterr().err)
    assert code == 2
    assert err["error"] == "ConfigInvalid" and err["stage"] == "affiliate"
    assert "nowhere/allow.csv" in err["message"]


def test_unknown_config_key_is_rejected(fixture_dir, tmp_path, capsys):
    path = tmp_path / "c.toml"
    path.write_text((fixture_dir / "config.toml").read_text() + "colour = 1\n")
    assert main(["ingest", str(path)]) == 2
    assert "colour" in json.loads(capsys.readouterr().err)["message"]


def test_malformed_posts_exit_nonzero(fixture_dir, tmp_path, capsys):
    bad = tmp_path / "posts.jsonl"
    bad.write_text('{"post_id": "1", "created_at": 0, "title": "ok (S01)"}\n{not json\n')
    conf = (fixture_dir / "config.toml").read_text().replace('posts = "posts.jsonl"', f'posts = "{bad}"')
    path = tmp_path / "c.toml"
    path.write_text(conf.replace('"lexicon.json"', f'"{fixture_dir / "lexicon.json"}"')
                    .replace('"allowlist.csv"', f'"{fixture_dir / "allowlist.csv"}"')
                    .replace('"annotations.jsonl"', f'"{fixture_dir / "annotations.jsonl"}"')
                    .replace('"sets.geojson"', f'"{fixture_dir / "sets.geojson"}"')
                    .replace('"beats.geojson"', f'"{fixture_dir / "beats.geojson"}"')
                    .replace('"arrests.csv"', f'"{fixture_dir / "arrests.csv"}"')
                    .replace('"mortality.csv"', f'"{fixture_dir / "mortality.csv"}"'))
    assert main(["ingest", str(path), "--out", str(tmp_path / "runs")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "MalformedRecord" and err["stage"] == "ingest"


def test_console_script(fixture_dir, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "crowdnet.cli", "ingest", str(fixture_dir / "config.toml"),
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["stage"] == "ingest"


def test_relative_out_resolves_against_working_directory(fixture_dir, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["ingest", str(fixture_dir / "config.toml"), "--out", "here"]) == 0
    assert list((tmp_path / "here").glob("run_*"))
