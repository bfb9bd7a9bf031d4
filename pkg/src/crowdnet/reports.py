"""Deterministic JSON writers and markdown tables for the model battery."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, non-finite numbers as null, trailing newline."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def _fmt(v, digits=2):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "n/a"
    return f"{v:.{digits}f}"


def _stars(p):
    if p is None or not math.isfinite(p):
        return ""
    return "***" if p < 0.001 else "**" if p < 0.01 else "*" if p < 0.05 else ""


def decomposition_table(title: str, decomposition: dict, components: dict) -> str:
    lines = [f"### {title}", "", "| Level | Variance | % of total |", "|---|---:|---:|"]
    lines.append(f"| individual | {_fmt(math.pi ** 2 / 3)} | {_fmt(decomposition['individual'])} |")
    for name, v in components.items():
        lines.append(f"| {name} | {_fmt(v)} | {_fmt(decomposition[name])} |")
    return "\n".join(lines) + "\n"


def coefficient_table(title: str, report: dict) -> str:
    if "error" in report:
        return f"### {title}\n\nnot estimated: {report['error']['type']}: {report['error']['message']}\n"
    lines = [f"### {title}", "", "| Variable | Odds ratio | SE (log-odds) | SE (odds ratio) | p |",
             "|---|---:|---:|---:|---:|"]
    for c in report["coefficients"]:
        lines.append(f"| {c['name']} | {_fmt(c['odds_ratio'])}{_stars(c['p_value'])} | {_fmt(c['se'])} | "
                     f"{_fmt(c['odds_ratio_se'])} | {_fmt(c['p_value'], 3)} |")
    lines.append("")
    for name, v in report.get("variance_components", {}).items():
        lines.append(f"- {name} variance component: {_fmt(v)}")
    if "composite_r2" in report:
        lines.append(f"- composite R²: {_fmt(report['composite_r2'])}")
    if "pseudo_r2" in report:
        lines.append(f"- McFadden pseudo-R²: {_fmt(report['pseudo_r2'])}")
    lines.append(f"- AIC: {_fmt(report['aic'])}")
    lines.append(f"- n: {report['n_obs']}")
    return "\n".join(lines) + "\n"


def model_markdown(reports: dict) -> str:
    parts = ["# Mortality models", ""]
    for key, rep in reports.items():
        if "error" not in rep and "decomposition" in rep:
            parts.append(decomposition_table(f"Variance decomposition ({key})", rep["decomposition"],
                                             rep["variance_components"]))
        else:
            parts.append(coefficient_table(key, rep))
    parts.append("Significance: * p < 0.05, ** p < 0.01, *** p < 0.001 (Wald).\n")
    return "\n".join(parts)
