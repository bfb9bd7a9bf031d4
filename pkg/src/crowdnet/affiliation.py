"""Consensus-threshold affiliation of aliases to gang sets."""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import EmptyRoster
from .mentions import LexiconConfig, MentionEvent

RESOLVED = "resolved"
UNRESOLVED = "unresolved"
TOO_FEW = "too_few_mentions"


@dataclass
class AliasProfile:
    alias_key: str
    surface_forms: set[str] = field(default_factory=set)
    mention_count: int = 0
    tag_histogram: dict[str, int] = field(default_factory=dict)
    tagged_posts: int | None = None

    def __post_init__(self):
        if self.tagged_posts is None:
            self.tagged_posts = sum(self.tag_histogram.values())


@dataclass
class AffiliationAssignment:
    alias_key: str
    set_id: str | None
    confidence: float
    status: str
    mention_count: int = 0
    nation_id: str | None = None


@dataclass
class GangSet:
    set_id: str
    nation_id: str
    affiliate_count: int
    verified: bool = True


def build_profiles(mentions: Iterable[MentionEvent], lexicon: LexiconConfig | None = None) -> dict[str, AliasProfile]:
    """Aggregate mention events into one profile per alias.

    Tags are mapped to set names through ``lexicon`` (excluded tags are
    ignored). Each post adds at most one to a set's count for a given alias,
    and counts as tagged when at least one of its tags survives.
    """
    lexicon = lexicon or LexiconConfig()
    profiles: dict[str, AliasProfile] = {}
    seen_posts: dict[str, set[str]] = {}
    for m in mentions:
        prof = profiles.get(m.alias_key)
        if prof is None:
            prof = profiles[m.alias_key] = AliasProfile(m.alias_key)
            seen_posts[m.alias_key] = set()
        prof.surface_forms.add(m.surface_form)
        if m.post_id in seen_posts[m.alias_key]:
            continue
        seen_posts[m.alias_key].add(m.post_id)
        prof.mention_count += 1
        sets = {s for s in (lexicon.canonical_tag(t) for t in m.tags) if s is not None}
        if sets:
            prof.tagged_posts += 1
            for s in sets:
                prof.tag_histogram[s] = prof.tag_histogram.get(s, 0) + 1
    return dict(sorted(profiles.items()))


def resolve(profile: AliasProfile, threshold: float = 0.70, min_mentions: int = 5) -> AffiliationAssignment:
    """Assign ``profile`` to its modal set when that set's share of tagged posts reaches ``threshold``.

    Aliases with fewer than ``min_mentions`` posts are ``too_few_mentions``.
    A tie for the modal set is never resolved.
    """
    if not 0.5 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0.5, 1]")
    hist = profile.tag_histogram
    total = profile.tagged_posts or 0
    top_set, top, confidence = None, 0, 0.0
    if hist and total > 0:
        ranked = sorted(hist.items(), key=lambda kv: (-kv[1], kv[0]))
        top_set, top = ranked[0]
        tied = len(ranked) > 1 and ranked[1][1] == top
        confidence = top / total
        if tied:
            top_set = None
    if profile.mention_count < min_mentions:
        return AffiliationAssignment(profile.alias_key, None, confidence, TOO_FEW, profile.mention_count)
    # compare counts, not rounded shares, so 7/10 meets 0.70 exactly
    if top_set is not None and top >= threshold * total - 1e-9:
        return AffiliationAssignment(profile.alias_key, top_set, confidence, RESOLVED, profile.mention_count)
    return AffiliationAssignment(profile.alias_key, None, confidence, UNRESOLVED, profile.mention_count)


def resolve_all(profiles: Mapping[str, AliasProfile] | Iterable[AliasProfile], threshold: float = 0.70,
                min_mentions: int = 5) -> list[AffiliationAssignment]:
    items = profiles.values() if isinstance(profiles, Mapping) else profiles
    return [resolve(p, threshold, min_mentions) for p in items]


def filter_sets(assignments: Iterable[AffiliationAssignment], allowlist: Mapping[str, str],
                min_affiliates: int = 10) -> tuple[list[AffiliationAssignment], list[GangSet]]:
    """Keep resolved aliases whose set has ``min_affiliates`` members and is on ``allowlist``.

    ``allowlist`` maps verified ``set_id`` to ``nation_id``. Returns the kept
    assignments (with ``nation_id`` filled) and the roster of kept sets.
    """
    resolved = [a for a in assignments if a.status == RESOLVED]
    counts = Counter(a.set_id for a in resolved)
    big = {s for s, n in counts.items() if n >= min_affiliates}
    verified = {s for s in big if s in allowlist}
    if not verified:
        raise EmptyRoster(
            f"no set survives filtering ({len(counts)} sets, {len(big)} with >= {min_affiliates} affiliates, "
            f"{len(allowlist)} on allowlist)"
        )
    kept = []
    for a in resolved:
        if a.set_id in verified:
            kept.append(AffiliationAssignment(a.alias_key, a.set_id, a.confidence, a.status, a.mention_count,
                                              allowlist[a.set_id]))
    kept.sort(key=lambda a: a.alias_key)
    roster = [GangSet(s, allowlist[s], counts[s], True) for s in sorted(verified)]
    return kept, roster


def load_allowlist(path) -> dict[str, str]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"set_id", "nation_id"} <= set(reader.fieldnames or []):
            raise ValueError(f"{path}: allowlist needs set_id and nation_id columns")
        return {row["set_id"].strip(): row["nation_id"].strip() for row in reader if row["set_id"].strip()}


def write_assignments(assignments: Iterable[AffiliationAssignment], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alias_key", "set_id", "nation_id", "confidence", "status", "mention_count"])
        for a in assignments:
            w.writerow([a.alias_key, a.set_id or "", a.nation_id or "", f"{a.confidence:.6f}", a.status,
                        a.mention_count])


def read_assignments(path) -> list[AffiliationAssignment]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(AffiliationAssignment(row["alias_key"], row["set_id"] or None, float(row["confidence"]),
                                             row["status"], int(row["mention_count"]), row["nation_id"] or None))
    return out
