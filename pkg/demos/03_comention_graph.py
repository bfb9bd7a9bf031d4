"""
Building the co-mention network
===============================

Two resolved people are tied when they are named in the same title; the
weight counts such titles. Bracketed text never contributes names.
"""
import tempfile
from pathlib import Path

from crowdnet.corpus import PostRecord
from crowdnet.graph import build_graph, export_graph, graph_stats, import_graph

roster = {k: {"set_id": s, "nation_id": "N1"} for k, s in
          (("tbone", "S1"), ("liltim", "S1"), ("cnote", "S2"), ("kingvon", "S2"))}
titles = [
    "T-Bone and Lil Tim (S1) outside",
    "Tbone x Lil-Tim again",
    "C Note with King Von and T Bone",
    "King Von (T-Bone) live",  # the bracketed name is a tag, not a mention
]
g = build_graph([PostRecord(str(i), 0, t) for i, t in enumerate(titles)], roster)
for u, v, w in g.edges():
    print(f"{u:8} -- {v:8} weight {w}")
print(graph_stats(g))

with tempfile.TemporaryDirectory() as d:
    for fmt in ("edge_csv", "graphml"):
        export_graph(g, Path(d), fmt)
        print(fmt, "round trip equal:", import_graph(Path(d), fmt) == g)
