"""
The full pipeline from the command line
=======================================

``crowdnet synth`` writes a fixture and a matching ``config.toml``;
``crowdnet pipeline`` runs every stage into a run directory named by a
digest of the parameters and inputs. Each stage writes a manifest with
the digests of what it read and wrote, so reruns can be checked for
byte identity.
"""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

with tempfile.TemporaryDirectory() as d:
    fx = Path(d) / "fixture"
    cli = [sys.executable, "-m", "crowdnet.cli"]
    subprocess.run(cli + ["synth", "--out", str(fx), "--seed", "1"], check=True, capture_output=True)
    out = subprocess.run(cli + ["pipeline", str(fx / "config.toml")], check=True, capture_output=True, text=True)
    summary = json.loads(out.stdout)
    run = Path(summary["run_dir"])
    print("stages:", summary["stages_run"])
    print("run directory:", run.name)

    report = json.loads((run / "model_report.json").read_text())
    main = report["main"]
    for c in main["coefficients"]:
        print(f"{c['name']:24} OR {c['odds_ratio']:.2f} (p {c['p_value']:.3f})")
    print("decomposition of the empty model:", {k: round(v, 2) for k, v in report["empty"]["decomposition"].items()})
    manifest = json.loads((run / "manifest_model.json").read_text())
    print("model stage read:", sorted(manifest["upstream"]))

    broken = fx / "broken.toml"
    broken.write_text((fx / "config.toml").read_text().replace("allowlist.csv", "missing.csv"))
    err = subprocess.run(cli + ["affiliate", str(broken)], capture_output=True, text=True)
    print("exit code", err.returncode, "->", err.stderr.strip())
