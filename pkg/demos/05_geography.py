"""
Set polygons, distances and the distance-decay check
====================================================

Set territories are polygons. Centroid distances are compared with the
mean co-mention weight between sets, and each polygon is checked against
the police beats where its members were arrested.
"""
import tempfile

from crowdnet.geo import (GEOGRAPHIC, beat_validation, centroid, distance_comention_correlation, distance_matrix,
                          load_arrests, load_layer, point_distance, set_comention_matrix)
from crowdnet.synth import SynthConfig, generate

sq = {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]]}
print("unit-square centroid:", centroid(sq))
print("0.01 degree of latitude in meters:", round(point_distance((0, 0), (0, 0.01), GEOGRAPHIC), 2))

with tempfile.TemporaryDirectory() as d:
    paths, truth = generate(SynthConfig(seed=2), d)
    sets = load_layer(paths["sets"])
    keep = sorted(truth.kept_sets)
    g = truth.network()
    g = g.subgraph([k for k in g.node_list() if g.nodes[k]["set_id"] in keep])
    dist = distance_matrix(sets, keep)
    com = set_comention_matrix(g, set_ids=keep)
    r = distance_comention_correlation(dist, com)
    print(f"distance vs co-mention: r = {r.r:.2f} (p = {r.p_value:.1e}, {r.n} set pairs)")

    beats = load_layer(paths["beats"], id_field="beat_id")
    checks = beat_validation(sets, beats, load_arrests(paths["arrests"]), keep)
    print("sets touching their modal arrest beat:", sum(c.intersects for c in checks), "of", len(checks))
