from crowdnet.mentions import LexiconConfig
from crowdnet.mortality import (ALIVE, DECEASED, DECEASED_SET_MATCH, DROPPED, MortalityRecord, join_mortality,
                                load_mortality, write_audit)

ROSTER = {"tbone": "S1", "liltim": "S2", "moe": "S3", "jojo": "S1"}


def test_disambiguation_rules():
    recs = [MortalityRecord("T-Bone", "S9"),
            MortalityRecord("Lil Tim", "S2"), MortalityRecord("lil tim", "S7"),
            MortalityRecord("Moe", "S1"), MortalityRecord("Moe", "S2")]
    j = join_mortality(ROSTER, recs)
    out = {a.alias_key: a for a in j.audit}
    assert out["tbone"].outcome == DECEASED and out["tbone"].set_conflict
    assert out["liltim"].outcome == DECEASED_SET_MATCH
    assert out["moe"].outcome == DROPPED and j.dropped == ["moe"]
    assert out["jojo"].outcome == ALIVE
    assert j.deceased == {"tbone": True, "liltim": True, "jojo": False}
    assert j.sample_size == 3 and j.deceased_count == 2


def test_two_rows_both_matching_set_are_dropped():
    j = join_mortality({"moe": "S1"}, [MortalityRecord("Moe", "S1"), MortalityRecord("Moe", "S1")])
    assert j.dropped == ["moe"]


def test_lexicon_merges_apply():
    lex = LexiconConfig(merge_map={"timmy": "liltim"})
    j = join_mortality({"liltim": "S2"}, [MortalityRecord("Timmy", "S2")], lex)
    assert j.deceased == {"liltim": True}


def test_csv_and_audit(tmp_path):
    (tmp_path / "m.csv").write_text("alias,set_id,government_name,source_url\nT-Bone,S1,,\n,S1,,\n")
    recs = load_mortality(tmp_path / "m.csv")
    assert recs == [MortalityRecord("T-Bone", "S1")]
    j = join_mortality(ROSTER, recs)
    write_audit(j, tmp_path / "a.jsonl")
    assert len((tmp_path / "a.jsonl").read_text().splitlines()) == len(ROSTER)
