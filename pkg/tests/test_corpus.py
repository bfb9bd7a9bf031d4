import json

import pytest
from hypothesis import given, strategies as st

from crowdnet.corpus import (CorpusStats, PostRecord, bracket_pairs, corpus_stats, filter_tagged_titles,
                             has_bracket, load_posts, write_posts)
from crowdnet.errors import DuplicateId, MalformedRecord
from crowdnet.mentions import extract_tags


def _jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def test_three_rows_load_in_order(tmp_path):
    rows = [{"post_id": f"p{i}", "created_at": 1600000000 + i, "title": f"title {i}"} for i in range(3)]
    posts = load_posts(_jsonl(tmp_path / "p.jsonl", rows))
    assert [p.post_id for p in posts] == ["p0", "p1", "p2"]
    assert posts[1].created_at == 1600000001


def test_missing_title_names_the_row(tmp_path):
    rows = [{"post_id": "p1", "created_at": 1, "title": "ok"}, {"post_id": "p2", "created_at": 2}]
    with pytest.raises(MalformedRecord) as exc:
        load_posts(_jsonl(tmp_path / "p.jsonl", rows))
    assert exc.value.row == 2
    assert "title" in str(exc.value)


def test_duplicate_post_id(tmp_path):
    rows = [{"post_id": "p1", "created_at": 1, "title": "a"}, {"post_id": "p1", "created_at": 2, "title": "b"}]
    with pytest.raises(DuplicateId):
        load_posts(_jsonl(tmp_path / "p.jsonl", rows))


def test_empty_titles_dropped_and_counted(tmp_path):
    rows = [{"post_id": "p1", "created_at": 1, "title": "   "}, {"post_id": "p2", "created_at": 2, "title": "x"}]
    stats = CorpusStats()
    posts = load_posts(_jsonl(tmp_path / "p.jsonl", rows), stats=stats)
    assert [p.post_id for p in posts] == ["p2"]
    assert stats.dropped_empty == 1


def test_csv_and_iso_timestamps(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("post_id,created_at,title\na,2020-01-01T00:00:00Z,T-Bone (BK) spotted\nb,5,plain\n",
                    encoding="utf-8")
    posts = load_posts(path)
    assert posts[0].created_at == 1577836800
    assert posts[0].timestamp.year == 2020
    assert posts[1].created_at == 5


def test_write_then_load_round_trip(tmp_path):
    posts = [PostRecord("a", 10, "Lil Tim (TG) é"), PostRecord("b", 11, "x, \"quoted\"")]
    for fmt in ("jsonl", "csv"):
        path = tmp_path / f"posts.{fmt}"
        write_posts(posts, path, fmt)
        assert load_posts(path) == posts


def test_filter_examples():
    posts = [PostRecord("1", 0, "T-Bone (BK) spotted"), PostRecord("2", 0, "no tags here"),
             PostRecord("3", 0, "broken ( bracket")]
    kept = [p.post_id for p in filter_tagged_titles(posts)]
    assert kept == ["1", "3"]
    # the unbalanced title passes the filter but carries no tag
    assert extract_tags("broken ( bracket") == []


def test_bracket_pairs_outermost_only():
    assert bracket_pairs("nested (a (b) c)") == [(7, 15)]
    assert bracket_pairs("a ( b (c)") == [(6, 8)]
    assert bracket_pairs("x ] y [z]") == [(6, 8)]
    assert bracket_pairs("(a] b)") == [(0, 5)]


titles = st.lists(st.text(alphabet="ab ()[]", max_size=12), max_size=15)


@given(titles)
def test_filter_is_idempotent(ts):
    posts = [PostRecord(str(i), 0, t) for i, t in enumerate(ts) if t.strip()]
    once = list(filter_tagged_titles(posts))
    assert list(filter_tagged_titles(once)) == once


@given(titles, st.randoms())
def test_tagged_count_is_order_independent(ts, rnd):
    posts = [PostRecord(str(i), 0, t) for i, t in enumerate(ts) if t.strip()]
    shuffled = list(posts)
    rnd.shuffle(shuffled)
    a, b = corpus_stats(posts), corpus_stats(shuffled)
    assert a.tagged_posts == b.tagged_posts == sum(has_bracket(p.title) for p in posts)
    assert a.tagged_posts <= a.total_posts


@given(st.text(alphabet="ab()[] ", max_size=30))
def test_pairs_are_balanced_and_disjoint(text):
    pairs = bracket_pairs(text)
    for (s1, e1), (s2, e2) in zip(pairs, pairs[1:]):
        assert e1 < s2
    for s, e in pairs:
        assert {"(": ")", "[": "]"}[text[s]] == text[e]
