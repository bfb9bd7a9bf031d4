"""Alias and group-tag extraction from post titles.

Tags are the contents of bracket pairs. Aliases come either from a
capitalisation heuristic or, when supplied, from pre-annotated character
spans (for instance the output of an external tagger).
"""
from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .corpus import PostRecord, bracket_pairs
from .errors import EmptyAfterCanonicalization, LexiconError

DEFAULT_STOPWORDS = frozenset(
    {"a", "an", "the", "i", "im", "rip", "free", "lol", "lmao", "omg", "breaking", "new", "update", "this", "my"}
)

_TRAILING = ",.!?;:\"'”’)»…"
_LEADING = "\"'“‘(«"
_POSSESSIVE = re.compile(r"['’]s$")


def _norm_tag(tag: str) -> str:
    return " ".join(tag.split()).casefold()


def alias_key(surface: str) -> str:
    """Lowercase ``surface`` and keep only its alphanumeric characters."""
    return "".join(ch for ch in surface.lower() if ch.isalnum())


@dataclass
class LexiconConfig:
    merge_map: dict[str, str] = field(default_factory=dict)
    exclude_list: set[str] = field(default_factory=set)
    tag_alias_map: dict[str, str] = field(default_factory=dict)
    tag_exclude_list: set[str] = field(default_factory=set)
    stopwords: set[str] = field(default_factory=lambda: set(DEFAULT_STOPWORDS))

    def __post_init__(self):
        raw = {alias_key(k): alias_key(v) for k, v in self.merge_map.items()}
        if any(not k or not v for k, v in raw.items()):
            raise LexiconError("merge_map entries must contain alphanumeric characters")
        resolved = {}
        for key in raw:
            seen = [key]
            target = raw[key]
            while target in raw and raw[target] != target:
                if target in seen:
                    raise LexiconError(f"merge_map cycle through {' -> '.join(seen)}")
                seen.append(target)
                target = raw[target]
            resolved[key] = target
        self.merge_map = resolved
        self.exclude_list = {alias_key(x) for x in self.exclude_list}
        clash = sorted(set(resolved.values()) & self.exclude_list)
        if clash:
            raise LexiconError(f"merge_map targets appear in exclude_list: {clash}")
        self.tag_alias_map = {_norm_tag(k): " ".join(v.split()) for k, v in self.tag_alias_map.items()}
        self.tag_exclude_list = {_norm_tag(t) for t in self.tag_exclude_list}
        self.stopwords = {w.casefold() for w in self.stopwords}

    def canonical_tag(self, raw: str) -> str | None:
        """Map a raw tag to its set name, or ``None`` if the tag is excluded."""
        norm = _norm_tag(raw)
        if not norm or norm in self.tag_exclude_list:
            return None
        if norm in self.tag_alias_map:
            return self.tag_alias_map[norm]
        return " ".join(raw.split())

    def to_json(self) -> dict:
        return {
            "merge_map": dict(sorted(self.merge_map.items())),
            "exclude_list": sorted(self.exclude_list),
            "tag_alias_map": dict(sorted(self.tag_alias_map.items())),
            "tag_exclude_list": sorted(self.tag_exclude_list),
            "stopwords": sorted(self.stopwords),
        }


def load_lexicon(path) -> LexiconConfig:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    unknown = set(obj) - {"merge_map", "exclude_list", "tag_alias_map", "tag_exclude_list", "stopwords"}
    if unknown:
        raise LexiconError(f"unknown lexicon keys: {sorted(unknown)}")
    stopwords = obj.get("stopwords")
    return LexiconConfig(
        merge_map=dict(obj.get("merge_map", {})),
        exclude_list=set(obj.get("exclude_list", [])),
        tag_alias_map=dict(obj.get("tag_alias_map", {})),
        tag_exclude_list=set(obj.get("tag_exclude_list", [])),
        stopwords=set(DEFAULT_STOPWORDS if stopwords is None else stopwords),
    )


def load_annotations(path) -> dict[str, list[tuple[int, int]]]:
    """Read ``annotations.jsonl`` into ``{post_id: [(start, end), ...]}``."""
    out: dict[str, list[tuple[int, int]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            spans = [(int(s["start"]), int(s["end"])) for s in obj.get("spans", [])]
            out.setdefault(str(obj["post_id"]), []).extend(spans)
    return out


@dataclass(frozen=True)
class MentionEvent:
    post_id: str
    alias_key: str
    surface_form: str
    tags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "post_id": self.post_id,
            "alias_key": self.alias_key,
            "surface_form": self.surface_form,
            "tags": list(self.tags),
        }


def extract_tags(title: str) -> list[str]:
    """Contents of every outermost balanced ``(...)`` / ``[...]`` pair, in order."""
    tags = []
    for start, stop in bracket_pairs(title):
        inner = title[start + 1 : stop].strip()
        if inner:
            tags.append(inner)
    return tags


@dataclass
class _Token:
    start: int
    end: int
    text: str
    breaks_after: bool
    sentence_end: bool


def _segments(title: str) -> list[tuple[int, int]]:
    segs = []
    pos = 0
    for start, stop in bracket_pairs(title):
        segs.append((pos, start))
        pos = stop + 1
    segs.append((pos, len(title)))
    return segs


def tokenize(title: str) -> list[list[_Token]]:
    """Split ``title`` into whitespace tokens, grouped by bracket-free segment.

    Each token records its trimmed character span; surrounding quotes and
    trailing punctuation are removed and a trailing possessive is dropped.
    """
    groups = []
    for seg_start, seg_end in _segments(title):
        toks = []
        for m in re.finditer(r"\S+", title[seg_start:seg_end]):
            s = seg_start + m.start()
            e = seg_start + m.end()
            raw = title[s:e]
            lead = len(raw) - len(raw.lstrip(_LEADING + "([]"))
            core = raw[lead:].rstrip(_TRAILING + "([]")
            trail = raw[lead + len(core) :]
            pm = _POSSESSIVE.search(core)
            if pm:
                core = core[: pm.start()]
                trail = "'s" + trail
            if not core:
                if toks:
                    toks[-1].breaks_after = True
                continue
            s0 = s + lead
            toks.append(
                _Token(
                    start=s0,
                    end=s0 + len(core),
                    text=core,
                    breaks_after=bool(trail),
                    sentence_end=any(c in ".!?" for c in trail),
                )
            )
        groups.append(toks)
    return groups


_CAP = re.compile(r"^[^\W\d_][\w]*(?:[-'’][\w]+)*$")


def _is_capitalized(text: str) -> bool:
    return bool(_CAP.match(text)) and text[0].isupper()


def _is_lower_word(text: str) -> bool:
    return text[0].isalpha() and text[0].islower()


def extract_aliases(title: str, annotations: Iterable[tuple[int, int]] | None = None,
                    stopwords: Iterable[str] | None = None) -> list[str]:
    """Candidate person aliases in ``title``, left to right.

    With ``annotations`` the annotated ``(start, end)`` spans are returned
    verbatim and the heuristic is skipped. Otherwise an alias is a maximal
    run of capitalised tokens outside brackets that are not stopwords. A
    one-token run at the start of a sentence that is directly followed by a
    lowercase word is discarded as ordinary sentence capitalisation.
    """
    if annotations is not None:
        return [title[s:e] for s, e in sorted(annotations) if 0 <= s < e <= len(title)]
    stop = DEFAULT_STOPWORDS if stopwords is None else {w.casefold() for w in stopwords}
    found = []
    sentence_start = True
    for toks in tokenize(title):
        i = 0
        while i < len(toks):
            tok = toks[i]
            if not _is_capitalized(tok.text) or tok.text.casefold() in stop:
                sentence_start = tok.sentence_end
                i += 1
                continue
            run_start = i
            initial = sentence_start
            while True:
                if toks[i].breaks_after or i + 1 >= len(toks):
                    break
                nxt = toks[i + 1]
                if not _is_capitalized(nxt.text) or nxt.text.casefold() in stop:
                    break
                i += 1
            run = toks[run_start : i + 1]
            followed_by_lower = (
                not run[-1].breaks_after and i + 1 < len(toks) and _is_lower_word(toks[i + 1].text)
            )
            if not (initial and len(run) == 1 and followed_by_lower):
                found.append(title[run[0].start : run[-1].end])
            sentence_start = run[-1].sentence_end
            i += 1
    return found


def canonicalize_alias(surface: str, lexicon: LexiconConfig | None = None) -> str | None:
    """Canonical alias key for ``surface``, or ``None`` if it is excluded.

    >>> canonicalize_alias("T-Bone"), canonicalize_alias("T Bone")
    ('tbone', 'tbone')
    """
    key = alias_key(unicodedata.normalize("NFC", surface))
    if not key:
        raise EmptyAfterCanonicalization(f"{surface!r} has no alphanumeric characters")
    if lexicon is None:
        return key
    key = lexicon.merge_map.get(key, key)
    if key in lexicon.exclude_list:
        return None
    return key


def emit_mentions(posts: Iterable[PostRecord], lexicon: LexiconConfig | None = None,
                  annotations: Mapping[str, list[tuple[int, int]]] | None = None) -> Iterator[MentionEvent]:
    """One event per distinct (post, alias) pair; every tag in the title attaches to every alias."""
    lexicon = lexicon or LexiconConfig()
    for post in posts:
        spans = annotations.get(post.post_id) if annotations is not None else None
        surfaces = extract_aliases(post.title, spans, lexicon.stopwords)
        if not surfaces:
            continue
        tags = tuple(extract_tags(post.title))
        seen = set()
        for surface in surfaces:
            key = canonicalize_alias(surface, lexicon)
            if key is None or key in seen:
                continue
            seen.add(key)
            yield MentionEvent(post.post_id, key, surface, tags)


def write_mentions(mentions: Iterable[MentionEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in mentions:
            fh.write(json.dumps(m.to_json(), ensure_ascii=False) + "\n")


def read_mentions(path) -> list[MentionEvent]:
    out = []
    with open(Path(path), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(MentionEvent(obj["post_id"], obj["alias_key"], obj["surface_form"], tuple(obj["tags"])))
    return out
