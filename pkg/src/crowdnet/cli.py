"""Command-line entry point: ``crowdnet <stage> config.toml [--seed N] [--threshold T] [--out DIR]``.

Every stage prints a JSON summary on success. Failures print a JSON error
object on stderr and exit nonzero (2 for configuration errors, 1 otherwise).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigInvalid, CrowdnetError
from .pipeline import PIPELINE, load_config, run_stage, tomllib
from .synth import SynthConfig, generate

CONFIG_TEMPLATE = """posts = "posts.jsonl"
lexicon = "lexicon.json"
allowlist = "allowlist.csv"
annotations = "annotations.jsonl"
sets = "sets.geojson"
beats = "beats.geojson"
arrests = "arrests.csv"
mortality = "mortality.csv"
out = "runs"
threshold = 0.70
seed = {seed}
"""


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in PIPELINE + ["pipeline"]:
        sp = sub.add_parser(name, help=f"run the {name} stage" if name != "pipeline" else "run every stage")
        sp.add_argument("config", help="flat TOML configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threshold", type=float)
        sp.add_argument("--out", help="output root (run directories are created inside)")
    sp = sub.add_parser("synth", help="write a synthetic fixture and a matching config.toml")
    sp.add_argument("--out", required=True, help="directory for the fixture")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--config", help="flat TOML file overriding synthetic-corpus parameters")
    return p


def _emit_error(exc: BaseException, stage: str) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "stage": stage}
    diag = getattr(exc, "diagnostics", None)
    if diag:
        err["diagnostics"] = diag
    print(json.dumps(err, sort_keys=True, default=str), file=sys.stderr)
    return 2 if isinstance(exc, ConfigInvalid) else 1


def _synth(args) -> dict:
    params = {}
    if args.config:
        with open(args.config, "rb") as fh:
            params = tomllib.load(fh)
    params["seed"] = args.seed
    cfg = SynthConfig.from_mapping(params)
    paths, truth = generate(cfg, args.out)
    conf = Path(args.out) / "config.toml"
    conf.write_text(CONFIG_TEMPLATE.format(seed=args.seed), encoding="utf-8")
    return {"fixture": str(Path(args.out)), "config": str(conf), "files": {k: str(v) for k, v in paths.items()},
            "persons": len(truth.affiliations), "kept_sets": truth.kept_sets}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "synth":
            summary = _synth(args)
        else:
            cfg = load_config(args.config, {"seed": args.seed, "threshold": args.threshold, "out": args.out})
            run = run_stage(args.command, cfg)
            summary = {"stage": args.command, "run_dir": str(run.dir), "stages_run": run.completed}
    except (CrowdnetError, OSError, KeyError, ValueError) as exc:
        return _emit_error(exc, args.command)
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
