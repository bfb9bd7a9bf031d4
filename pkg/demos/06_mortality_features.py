"""
Joining deaths and computing network covariates
===============================================

Deaths are matched to the roster by canonical alias. When several death
records share an alias, the set breaks the tie; if it cannot, the person
is dropped rather than guessed.
"""
from crowdnet.features import compute_features
from crowdnet.graph import ComentionGraph
from crowdnet.mortality import MortalityRecord, join_mortality

roster = {"tbone": "S1", "liltim": "S2", "moe": "S3", "jojo": "S1", "cnote": "S2"}
records = [MortalityRecord("T-Bone", "S9"), MortalityRecord("Lil Tim", "S2"), MortalityRecord("Lil-Tim", "S7"),
           MortalityRecord("Moe", "S1"), MortalityRecord("Moe", "S2")]
join = join_mortality(roster, records)
for row in join.audit:
    print(f"{row.alias_key:7} {row.outcome:19} rows={row.matched_rows} set_conflict={row.set_conflict}")
print(f"sample {join.sample_size}, deceased {join.deceased_count}, dropped {join.dropped}")

g = ComentionGraph()
for k, s in roster.items():
    if k in join.deceased:
        g.add_node(k, set_id=s, nation_id="N1" if s == "S1" else "N2")
for u, v, w in (("tbone", "jojo", 3), ("tbone", "liltim", 1), ("tbone", "cnote", 2)):
    g.add_edge(u, v, w)
for f in compute_features(g, join.deceased):
    print(f"{f.alias_key:7} degree={f.degree} centrality={f.degree_centrality:.2f} "
          f"dead_nbrs={f.pct_deceased_neighbors:.2f} within_set={f.pct_within_gang:.2f}")
