"""Set and beat polygons: centroids, distances, co-mention matrices and beat validation."""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

import numpy as np
from scipy import stats
from shapely.geometry import mapping, shape
from shapely.ops import transform, unary_union

from .errors import DegenerateGeometry, MissingSet, UnknownBeatId, ZeroVariance
from .graph import ComentionGraph

EARTH_RADIUS_M = 6_371_008.8
METERS_PER_DEGREE = EARTH_RADIUS_M * math.pi / 180.0
GEOGRAPHIC = "geographic_degrees"
PROJECTED = "projected_meters"


@dataclass
class SpatialLayer:
    features: list[dict]
    crs_kind: str = PROJECTED
    id_field: str = "set_id"

    def ids(self) -> list[str]:
        return sorted({str(f["properties"][self.id_field]) for f in self.features})

    def geometries(self, feature_id: str) -> list[dict]:
        return [f["geometry"] for f in self.features if str(f["properties"][self.id_field]) == feature_id]

    def shapely(self, feature_id: str):
        geoms = self.geometries(feature_id)
        if not geoms:
            raise MissingSet(feature_id)
        return unary_union([shape(g) for g in geoms])


def _rings(geometry: Mapping) -> list[list[list[list[float]]]]:
    """Polygons of a GeoJSON geometry as lists of rings."""
    kind = geometry["type"]
    if kind == "Polygon":
        return [geometry["coordinates"]]
    if kind == "MultiPolygon":
        return list(geometry["coordinates"])
    raise DegenerateGeometry(f"unsupported geometry type {kind!r}")


def validate_geometry(geometry: Mapping) -> None:
    for poly in _rings(geometry):
        for ring in poly:
            if len(ring) < 4 or tuple(ring[0]) != tuple(ring[-1]):
                raise DegenerateGeometry("polygon ring is not closed")
            if len({tuple(p) for p in ring}) < 3:
                raise DegenerateGeometry("polygon ring has fewer than 3 distinct vertices")


def _as_geojson(geometry) -> dict:
    if isinstance(geometry, Mapping):
        return dict(geometry)
    return mapping(geometry)


def _ring_moments(ring, ox, oy):
    pts = np.asarray(ring, dtype=float)[:, :2] - (ox, oy)
    x0, y0 = pts[:-1, 0], pts[:-1, 1]
    x1, y1 = pts[1:, 0], pts[1:, 1]
    cross = x0 * y1 - x1 * y0
    a = cross.sum() / 2.0
    cx = ((x0 + x1) * cross).sum() / 6.0
    cy = ((y0 + y1) * cross).sum() / 6.0
    return a, cx, cy


def centroid(geometry) -> tuple[float, float]:
    """Area-weighted centroid of a polygon or multipolygon (holes subtracted)."""
    geometry = _as_geojson(geometry)
    polys = _rings(geometry)
    ox, oy = (float(v) for v in polys[0][0][0][:2])
    area = mx = my = 0.0
    for poly in polys:
        for k, ring in enumerate(poly):
            a, cx, cy = _ring_moments(ring, ox, oy)
            # exterior counts positive and holes negative, whatever the winding
            sign = 1.0 if k == 0 else -1.0
            if a < 0:
                a, cx, cy = -a, -cx, -cy
            area += sign * a
            mx += sign * cx
            my += sign * cy
    if abs(area) < 1e-15:
        raise DegenerateGeometry("geometry has zero area")
    return float(ox + mx / area), float(oy + my / area)


def polygon_area(geometry) -> float:
    geometry = _as_geojson(geometry)
    total = 0.0
    for poly in _rings(geometry):
        for k, ring in enumerate(poly):
            a = abs(_ring_moments(ring, 0.0, 0.0)[0])
            total += a if k == 0 else -a
    return total


def feature_centroid(layer: SpatialLayer, feature_id: str) -> tuple[float, float]:
    geoms = layer.geometries(feature_id)
    if not geoms:
        raise MissingSet(feature_id)
    if len(geoms) == 1:
        return centroid(geoms[0])
    coords = []
    for g in geoms:
        coords.extend(_rings(g))
    return centroid({"type": "MultiPolygon", "coordinates": coords})


@dataclass
class SetDistanceMatrix:
    set_ids: list[str]
    matrix: np.ndarray

    def __getitem__(self, pair):
        i, j = (self.set_ids.index(s) for s in pair)
        return self.matrix[i, j]


@dataclass
class SetComentionMatrix:
    set_ids: list[str]
    matrix: np.ndarray

    def __getitem__(self, pair):
        i, j = (self.set_ids.index(s) for s in pair)
        return self.matrix[i, j]


def point_distance(a, b, crs_kind: str = PROJECTED, ref_lat: float | None = None) -> float:
    """Distance in meters; equirectangular about ``ref_lat`` for lon/lat points."""
    if crs_kind == PROJECTED:
        return math.hypot(a[0] - b[0], a[1] - b[1])
    lat0 = (a[1] + b[1]) / 2.0 if ref_lat is None else ref_lat
    dx = (a[0] - b[0]) * math.cos(math.radians(lat0)) * METERS_PER_DEGREE
    dy = (a[1] - b[1]) * METERS_PER_DEGREE
    return math.hypot(dx, dy)


def distance_matrix(layer: SpatialLayer, set_ids: Iterable[str] | None = None) -> SetDistanceMatrix:
    """Pairwise centroid distances in meters between the requested sets."""
    ids = sorted(set_ids) if set_ids is not None else layer.ids()
    pts = [feature_centroid(layer, s) for s in ids]
    ref_lat = float(np.mean([p[1] for p in pts])) if pts else 0.0
    n = len(ids)
    mat = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            mat[i, j] = mat[j, i] = point_distance(pts[i], pts[j], layer.crs_kind, ref_lat)
    return SetDistanceMatrix(ids, mat)


def set_comention_matrix(g: ComentionGraph, roster: Mapping[str, str] | None = None,
                         set_ids: Iterable[str] | None = None) -> SetComentionMatrix:
    """Mean co-mention weight over all cross-set person pairs.

    Entry ``(s, t)`` is the summed weight of edges between members of ``s``
    and ``t`` divided by ``|s| * |t|``; the diagonal is left at zero.
    ``roster`` maps alias to set and defaults to the nodes' ``set_id``.
    """
    sets = roster if roster is not None else {k: a["set_id"] for k, a in g.nodes.items()}
    ids = sorted(set_ids) if set_ids is not None else sorted({sets[k] for k in g.nodes if k in sets})
    pos = {s: i for i, s in enumerate(ids)}
    size = np.zeros(len(ids))
    for k in g.nodes:
        if k in sets and sets[k] in pos:
            size[pos[sets[k]]] += 1
    total = np.zeros((len(ids), len(ids)))
    for u, v, w in g.edges():
        su, sv = sets.get(u), sets.get(v)
        if su in pos and sv in pos and su != sv:
            total[pos[su], pos[sv]] += w
            total[pos[sv], pos[su]] += w
    with np.errstate(invalid="ignore", divide="ignore"):
        mat = np.where(np.outer(size, size) > 0, total / np.outer(size, size), 0.0)
    np.fill_diagonal(mat, 0.0)
    return SetComentionMatrix(ids, mat)


class PearsonResult(NamedTuple):
    r: float
    p_value: float
    n: int


def pearson_r(x, y) -> PearsonResult:
    """Sample correlation with a two-sided p-value from the t distribution on n-2 df."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d and the same length")
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("one of the vectors is constant")
    r = float(np.clip(float(dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        return PearsonResult(r, 0.0, n)
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = float(2.0 * stats.t.sf(abs(t), n - 2))
    return PearsonResult(r, p, n)


def upper_triangle(matrix: np.ndarray) -> np.ndarray:
    i, j = np.triu_indices(matrix.shape[0], k=1)
    return matrix[i, j]


def distance_comention_correlation(dist: SetDistanceMatrix, comention: SetComentionMatrix) -> PearsonResult:
    if dist.set_ids != comention.set_ids:
        raise MissingSet(f"set lists differ: {sorted(set(dist.set_ids) ^ set(comention.set_ids))}")
    return pearson_r(upper_triangle(dist.matrix), upper_triangle(comention.matrix))


def _to_meters(geom, crs_kind: str, ref_lat: float):
    if crs_kind == PROJECTED:
        return geom
    k = math.cos(math.radians(ref_lat)) * METERS_PER_DEGREE

    def fn(x, y, z=None):
        return np.asarray(x) * k, np.asarray(y) * METERS_PER_DEGREE

    return transform(fn, geom)


@dataclass
class BeatValidation:
    set_id: str
    modal_beats: list[str]
    modal_arrests: int
    total_arrests: int
    intersects: bool
    ambiguous: bool
    distance_m: float | None


def beat_validation(set_layer: SpatialLayer, beat_layer: SpatialLayer, arrests: Iterable[Mapping],
                    set_ids: Iterable[str] | None = None) -> list[BeatValidation]:
    """Check each set polygon against the beat(s) holding most of its arrests.

    ``ambiguous`` flags sets whose maximum arrest count is shared by more
    than one beat; ``intersects`` is true when the polygon touches any
    modal beat. ``distance_m`` is the gap to the nearest modal beat.
    """
    beat_ids = set(beat_layer.ids())
    counts: dict[str, Counter] = {}
    for row in arrests:
        beat = str(row["beat_id"])
        if beat not in beat_ids:
            raise UnknownBeatId(beat)
        counts.setdefault(str(row["set_id"]), Counter())[beat] += 1
    ids = sorted(set_ids) if set_ids is not None else set_layer.ids()
    lats = [feature_centroid(set_layer, s)[1] for s in ids] or [0.0]
    ref_lat = float(np.mean(lats))
    out = []
    for s in ids:
        poly = set_layer.shapely(s)
        c = counts.get(s, Counter())
        if not c:
            out.append(BeatValidation(s, [], 0, 0, False, False, None))
            continue
        top = max(c.values())
        modal = sorted(b for b, n in c.items() if n == top)
        hits = [poly.intersects(beat_layer.shapely(b)) for b in modal]
        pm = _to_meters(poly, set_layer.crs_kind, ref_lat)
        dist = min(pm.distance(_to_meters(beat_layer.shapely(b), beat_layer.crs_kind, ref_lat)) for b in modal)
        out.append(BeatValidation(s, modal, top, sum(c.values()), any(hits), len(modal) > 1, float(dist)))
    return out


def _infer_crs(features) -> str:
    xs, ys = [], []
    for f in features:
        for poly in _rings(f["geometry"]):
            for ring in poly:
                for p in ring:
                    xs.append(p[0])
                    ys.append(p[1])
    if xs and max(map(abs, xs)) <= 180 and max(map(abs, ys)) <= 90:
        return GEOGRAPHIC
    return PROJECTED


def load_layer(path, id_field: str = "set_id", crs_kind: str | None = None) -> SpatialLayer:
    """Read a GeoJSON FeatureCollection of polygons.

    The CRS kind comes from ``crs_kind``, a top-level ``"crs_kind"`` member,
    or is inferred from the coordinate ranges.
    """
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    feats = []
    for f in obj.get("features", []):
        props = f.get("properties") or {}
        if id_field not in props:
            raise DegenerateGeometry(f"feature without {id_field!r} property in {path}")
        validate_geometry(f["geometry"])
        feats.append({"geometry": f["geometry"], "properties": props})
    kind = crs_kind or obj.get("crs_kind") or _infer_crs(feats)
    return SpatialLayer(feats, kind, id_field)


def write_layer(layer: SpatialLayer, path) -> None:
    obj = {"type": "FeatureCollection", "crs_kind": layer.crs_kind,
           "features": [{"type": "Feature", "properties": f["properties"], "geometry": f["geometry"]}
                        for f in layer.features]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, sort_keys=True)


def load_arrests(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [{"person_id": r.get("person_id", ""), "set_id": r["set_id"], "beat_id": r["beat_id"]}
                for r in csv.DictReader(fh)]


def write_choropleth(set_layer: SpatialLayer, table, baseline=None, path=None, set_ids=None) -> dict:
    """Set polygons with per-community member shares (and baseline shares) as properties."""
    keep = set(set_ids) if set_ids is not None else set(table.set_ids)
    feats = []
    for f in set_layer.features:
        sid = str(f["properties"][set_layer.id_field])
        if sid not in keep or sid not in table.set_ids:
            continue
        props = dict(f["properties"])
        row = table.row(sid)
        for c in range(table.n_communities):
            props[f"community_{c}"] = round(float(row[c]), 6)
            if baseline is not None:
                props[f"baseline_{c}"] = round(float(baseline.row(sid)[c]), 6)
        feats.append({"type": "Feature", "properties": props, "geometry": f["geometry"]})
    obj = {"type": "FeatureCollection", "crs_kind": set_layer.crs_kind, "features": feats}
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, ensure_ascii=False, sort_keys=True)
    return obj
