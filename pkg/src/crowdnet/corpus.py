"""Loading and filtering of the post-title corpus.

Posts are read from line-delimited JSON or CSV files with the columns
``post_id``, ``created_at`` (epoch seconds, UTC) and ``title``.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DuplicateId, MalformedRecord

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("post_id", "created_at", "title")
OPENERS = {"(": ")", "[": "]"}
CLOSERS = {")": "(", "]": "["}


@dataclass(frozen=True)
class PostRecord:
    post_id: str
    created_at: int
    title: str

    @property
    def timestamp(self) -> datetime:
        return datetime.fromtimestamp(self.created_at, tz=timezone.utc)

    def to_json(self) -> dict:
        return {"post_id": self.post_id, "created_at": self.created_at, "title": self.title}


@dataclass
class CorpusStats:
    total_posts: int = 0
    tagged_posts: int = 0
    dropped_empty: int = 0
    date_range: tuple[int, int] | None = None

    def observe(self, post: PostRecord) -> None:
        self.total_posts += 1
        if self.date_range is None:
            self.date_range = (post.created_at, post.created_at)
        else:
            lo, hi = self.date_range
            self.date_range = (min(lo, post.created_at), max(hi, post.created_at))

    def to_json(self) -> dict:
        return {
            "total_posts": self.total_posts,
            "tagged_posts": self.tagged_posts,
            "dropped_empty": self.dropped_empty,
            "date_range": list(self.date_range) if self.date_range else None,
        }


def bracket_pairs(text: str) -> list[tuple[int, int]]:
    """Return ``(open, close)`` indices of the outermost balanced bracket pairs.

    Round and square brackets are matched with a stack. A closer that does
    not match the innermost open bracket is treated as a literal character,
    and openers that are never closed are discarded, so ``"a ( b (c)"``
    yields the single pair around ``c``.
    """
    stack: list[tuple[str, int]] = []
    pairs = []
    for i, ch in enumerate(text):
        if ch in OPENERS:
            stack.append((ch, i))
        elif ch in CLOSERS:
            if stack and stack[-1][0] == CLOSERS[ch]:
                _, start = stack.pop()
                pairs.append((start, i))
    pairs.sort()
    outer = []
    end = -1
    for start, stop in pairs:
        if start > end:
            outer.append((start, stop))
            end = stop
    return outer


def has_balanced_pair(title: str) -> bool:
    return bool(bracket_pairs(title))


def has_bracket(title: str) -> bool:
    return any(ch in OPENERS or ch in CLOSERS for ch in title)


def _parse_timestamp(value, row: int) -> int:
    if isinstance(value, bool):
        raise MalformedRecord(row, "created_at must be epoch seconds")
    if isinstance(value, (int, float)):
        return int(value)
    text = str(value).strip()
    if not text:
        raise MalformedRecord(row, "created_at is empty")
    try:
        return int(float(text))
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise MalformedRecord(row, f"unparseable created_at {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _iter_raw(path: Path, fmt: str) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for row, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedRecord(row, f"invalid JSON: {exc.msg}") from exc
                if not isinstance(obj, dict):
                    raise MalformedRecord(row, "record is not a JSON object")
                yield row, obj
        elif fmt == "csv":
            reader = csv.DictReader(fh)
            missing = [f for f in REQUIRED_FIELDS if f not in (reader.fieldnames or [])]
            if missing:
                raise MalformedRecord(1, f"header missing column(s) {', '.join(missing)}")
            for row, obj in enumerate(reader, start=2):
                yield row, obj
        else:
            raise ValueError(f"unknown corpus format {fmt!r}")


def iter_posts(path, fmt: str | None = None, stats: CorpusStats | None = None) -> Iterator[PostRecord]:
    """Stream validated posts from ``path`` in file order.

    ``fmt`` is inferred from the file suffix when omitted. Records whose
    title is empty after trimming are dropped and counted in
    ``stats.dropped_empty``.
    """
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    seen: set[str] = set()
    for row, obj in _iter_raw(path, fmt):
        for name in REQUIRED_FIELDS:
            if obj.get(name) is None:
                raise MalformedRecord(row, f"missing field {name!r}")
        post_id = str(obj["post_id"]).strip()
        if not post_id:
            raise MalformedRecord(row, "empty post_id")
        if post_id in seen:
            raise DuplicateId(post_id, row)
        seen.add(post_id)
        title = str(obj["title"])
        if not title.strip():
            if stats is not None:
                stats.dropped_empty += 1
            logger.debug("dropping row %d: empty title", row)
            continue
        post = PostRecord(post_id, _parse_timestamp(obj["created_at"], row), title)
        if stats is not None:
            stats.observe(post)
        yield post


def load_posts(path, fmt: str | None = None, stats: CorpusStats | None = None) -> list[PostRecord]:
    return list(iter_posts(path, fmt, stats))


def filter_tagged_titles(posts: Iterable[PostRecord], stats: CorpusStats | None = None) -> Iterator[PostRecord]:
    """Keep posts whose title contains a round or square bracket.

    Unbalanced brackets pass the filter; tag extraction later finds nothing
    in them.
    """
    for post in posts:
        if has_bracket(post.title):
            if stats is not None:
                stats.tagged_posts += 1
            yield post


def corpus_stats(posts: Iterable[PostRecord]) -> CorpusStats:
    stats = CorpusStats()
    for post in posts:
        stats.observe(post)
        if has_bracket(post.title):
            stats.tagged_posts += 1
    return stats


def write_posts(posts: Iterable[PostRecord], path, fmt: str = "jsonl") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for post in posts:
                fh.write(json.dumps(post.to_json(), ensure_ascii=False) + "\n")
        else:
            writer = csv.writer(fh)
            writer.writerow(REQUIRED_FIELDS)
            for post in posts:
                writer.writerow([post.post_id, post.created_at, post.title])
