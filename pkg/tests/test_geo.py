import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats
from shapely.geometry import Polygon, mapping

from crowdnet.errors import DegenerateGeometry, MissingSet, UnknownBeatId, ZeroVariance
from crowdnet.geo import (GEOGRAPHIC, PROJECTED, SpatialLayer, beat_validation, centroid, distance_comention_correlation,
                          distance_matrix, load_layer, pearson_r, point_distance, set_comention_matrix, write_layer)
from crowdnet.graph import ComentionGraph


def square(x0, y0, side=1.0):
    return {"type": "Polygon", "coordinates": [[[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side], [x0, y0]]]}


def layer(polys, id_field="set_id", crs=PROJECTED):
    return SpatialLayer([{"geometry": g, "properties": {id_field: k}} for k, g in polys.items()], crs, id_field)


def test_unit_square_centroid():
    assert centroid(square(0, 0)) == pytest.approx((0.5, 0.5), abs=1e-12)


def test_hole_shifts_centroid():
    g = {"type": "Polygon", "coordinates": [square(0, 0, 4)["coordinates"][0], square(0, 0, 2)["coordinates"][0][::-1]]}
    assert centroid(g) == pytest.approx(mapping(Polygon(*g["coordinates"][:1], holes=g["coordinates"][1:]).centroid)["coordinates"])


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=3, max_size=12))
def test_centroid_matches_shapely_for_convex_hulls(pts):
    from shapely.geometry import MultiPoint
    hull = MultiPoint(pts).convex_hull
    if hull.geom_type != "Polygon" or hull.area < 1e-3:
        return
    assert centroid(mapping(hull)) == pytest.approx(tuple(hull.centroid.coords[0]), rel=1e-9, abs=1e-6)


def test_degenerate_rings():
    bad = {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [0, 0], [0, 0]]]}
    with pytest.raises(DegenerateGeometry):
        centroid(bad)


def test_distances():
    assert point_distance((0, 0), (3, 4)) == 5.0
    assert point_distance((0, 0), (0, 0.01), GEOGRAPHIC) == pytest.approx(1111.95, abs=0.01)
    # haversine oracle at Chicago latitudes
    a, b = (-87.70, 41.80), (-87.60, 41.85)
    p1, p2 = math.radians(a[1]), math.radians(b[1])
    h = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(math.radians(b[0] - a[0]) / 2) ** 2
    truth = 2 * 6_371_008.8 * math.asin(math.sqrt(h))
    assert point_distance(a, b, GEOGRAPHIC) == pytest.approx(truth, rel=1e-4)


def test_distance_matrix_and_missing_set():
    lay = layer({"A": square(0, 0), "B": square(3, 4)})
    d = distance_matrix(lay)
    assert d["A", "B"] == pytest.approx(5.0) and d["B", "A"] == d["A", "B"] and d["A", "A"] == 0
    with pytest.raises(MissingSet):
        distance_matrix(lay, ["A", "Z"])


def test_pearson():
    x = np.arange(10.0)
    assert pearson_r(x, -x).r == -1.0
    with pytest.raises(ZeroVariance):
        pearson_r(x, np.ones(10))
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=30), rng.normal(size=30)
    ref = stats.pearsonr(a, b)
    got = pearson_r(a, b)
    assert got.r == pytest.approx(ref.statistic, abs=1e-12) and got.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_comention_matrix_normalizes_by_pair_count():
    g = ComentionGraph()
    for k, s in (("a", "A"), ("b", "A"), ("c", "B")):
        g.add_node(k, set_id=s)
    g.add_edge("a", "c", 3)
    g.add_edge("a", "b", 7)
    m = set_comention_matrix(g)
    assert m["A", "B"] == pytest.approx(1.5) and m["A", "A"] == 0


def test_correlation_requires_same_sets():
    lay = layer({"A": square(0, 0), "B": square(3, 0), "C": square(0, 9)})
    g = ComentionGraph()
    for k, s in (("a", "A"), ("b", "B")):
        g.add_node(k, set_id=s)
    with pytest.raises(MissingSet):
        distance_comention_correlation(distance_matrix(lay), set_comention_matrix(g))


def test_beat_validation():
    sets = layer({"A": square(0, 0), "B": square(10, 0)})
    beats = layer({"B11": square(0.5, 0.5), "B12": square(20, 0), "B13": square(30, 0)}, "beat_id")
    arrests = [{"set_id": "A", "beat_id": "B11"}] * 3 + [{"set_id": "B", "beat_id": "B12"}] * 2 + \
              [{"set_id": "B", "beat_id": "B13"}] * 2
    out = {v.set_id: v for v in beat_validation(sets, beats, arrests)}
    assert out["A"].intersects and not out["A"].ambiguous and out["A"].distance_m == 0
    assert out["B"].ambiguous and out["B"].modal_beats == ["B12", "B13"]
    assert not out["B"].intersects and out["B"].distance_m == pytest.approx(9.0)
    with pytest.raises(UnknownBeatId):
        beat_validation(sets, beats, [{"set_id": "A", "beat_id": "B99"}])


def test_layer_round_trip_and_crs_inference(tmp_path):
    lay = layer({"A": square(-87.7, 41.8, 0.01)}, crs=GEOGRAPHIC)
    write_layer(lay, tmp_path / "s.geojson")
    back = load_layer(tmp_path / "s.geojson")
    assert back.crs_kind == GEOGRAPHIC and back.ids() == ["A"]
    raw = {"type": "FeatureCollection", "features": [{"type": "Feature", "properties": {"set_id": "A"},
                                                      "geometry": square(1000, 2000, 500)}]}
    (tmp_path / "p.geojson").write_text(json.dumps(raw))
    assert load_layer(tmp_path / "p.geojson").crs_kind == PROJECTED
