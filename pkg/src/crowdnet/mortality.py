"""Joining the crowd-sourced mortality table onto the network roster."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import EmptyAfterCanonicalization
from .mentions import LexiconConfig, canonicalize_alias

DECEASED = "deceased"
DECEASED_SET_MATCH = "deceased_set_match"
DROPPED = "dropped"
ALIVE = "alive"


@dataclass(frozen=True)
class MortalityRecord:
    alias: str
    set_id: str | None = None
    government_name: str | None = None
    source_url: str | None = None

    def __post_init__(self):
        if not self.alias or not self.alias.strip():
            raise ValueError("mortality record needs an alias")


@dataclass
class JoinOutcome:
    alias_key: str
    set_id: str | None
    outcome: str
    matched_rows: int
    set_conflict: bool = False

    def to_json(self) -> dict:
        return {"alias_key": self.alias_key, "set_id": self.set_id, "outcome": self.outcome,
                "matched_rows": self.matched_rows, "set_conflict": self.set_conflict}


@dataclass
class MortalityJoin:
    deceased: dict[str, bool]
    dropped: list[str]
    audit: list[JoinOutcome] = field(default_factory=list)

    @property
    def sample_size(self) -> int:
        return len(self.deceased)

    @property
    def deceased_count(self) -> int:
        return sum(self.deceased.values())

    @property
    def rate(self) -> float:
        return self.deceased_count / self.sample_size if self.sample_size else 0.0


def _roster_sets(roster) -> dict[str, str | None]:
    if isinstance(roster, Mapping):
        return {k: (v if isinstance(v, str) or v is None else v.get("set_id")) for k, v in roster.items()}
    return {a.alias_key: a.set_id for a in roster}


def join_mortality(roster, records: Iterable[MortalityRecord], lexicon: LexiconConfig | None = None) -> MortalityJoin:
    """Flag roster members found in the mortality table.

    A single row with the member's alias is a death, even when its set
    disagrees (flagged as ``set_conflict``). With several rows for the alias
    the member is deceased only if exactly one row carries the member's set;
    otherwise the member is dropped from the sample. Aliases are compared by
    canonical key.
    """
    by_key: dict[str, list[MortalityRecord]] = {}
    for rec in records:
        try:
            key = canonicalize_alias(rec.alias, lexicon)
        except EmptyAfterCanonicalization:
            continue
        if key is not None:
            by_key.setdefault(key, []).append(rec)
    deceased: dict[str, bool] = {}
    dropped: list[str] = []
    audit: list[JoinOutcome] = []
    for key, set_id in sorted(_roster_sets(roster).items()):
        rows = by_key.get(key, [])
        if not rows:
            deceased[key] = False
            audit.append(JoinOutcome(key, set_id, ALIVE, 0))
        elif len(rows) == 1:
            deceased[key] = True
            conflict = rows[0].set_id is not None and rows[0].set_id != set_id
            audit.append(JoinOutcome(key, set_id, DECEASED, 1, conflict))
        else:
            matches = sum(1 for r in rows if r.set_id == set_id)
            if matches == 1:
                deceased[key] = True
                audit.append(JoinOutcome(key, set_id, DECEASED_SET_MATCH, len(rows)))
            else:
                dropped.append(key)
                audit.append(JoinOutcome(key, set_id, DROPPED, len(rows)))
    return MortalityJoin(deceased, dropped, audit)


def load_mortality(path) -> list[MortalityRecord]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            if not (row.get("alias") or "").strip():
                continue
            out.append(MortalityRecord(row["alias"], row.get("set_id") or None, row.get("government_name") or None,
                                       row.get("source_url") or None))
    return out


def write_audit(join: MortalityJoin, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in join.audit:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
