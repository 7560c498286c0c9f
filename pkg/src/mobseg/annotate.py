"""Geographic and temporal labels for interactions.

The layer file is line-delimited JSON, one feature per line:
    {"id", "kind": "polygon"|"polyline", "category", "parent_id",
     "coords": [[lon, lat], ...], "attrs": {...}}
with category in {tract, poi:<subcategory>, hub, road, region}.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .geo import GridIndex, Ring, haversine_m, meters_per_degree, point_to_chain_dist_m

AT_HOME_RADIUS_M = 50.0
ROAD_DIST_M = 20.0
HOURS_PER_BUCKET = 3


class LayerError(ValueError):
    pass


@dataclass
class Feature:
    id: str
    kind: str
    category: str
    parent_id: str = None
    ring: Ring = None          # polygons
    chain_lats: np.ndarray = None  # polylines
    chain_lons: np.ndarray = None
    attrs: dict = field(default_factory=dict)


class GeoLayer:
    """Validated polygon/polyline features with spatial indexes."""

    def __init__(self, features):
        self.features = list(features)
        self.tracts = [f for f in self.features if f.category == "tract"]
        self.pois = [f for f in self.features if f.category.startswith("poi:")]
        self.hubs = [f for f in self.features if f.category == "hub"]
        self.roads = [f for f in self.features if f.category == "road"]
        self.regions = [f for f in self.features if f.category == "region"]
        self._validate()
        self._tract_index = GridIndex([f.ring.bbox for f in self.tracts])
        self._poi_index = GridIndex([f.ring.bbox for f in self.pois])
        self._hub_index = GridIndex([f.ring.bbox for f in self.hubs])
        self._region_index = GridIndex([f.ring.bbox for f in self.regions])
        self._poi_area = np.array([f.ring.area_m2() for f in self.pois])
        self._hub_area = np.array([f.ring.area_m2() for f in self.hubs])
        self._hub_ids = {f.id: f for f in self.hubs}

    @classmethod
    def load(cls, path) -> "GeoLayer":
        feats = []
        with open(path) as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise LayerError("bad JSON at line %d: %s" % (line_no, e))
                feats.append(cls._feature_from_record(rec, line_no))
        return cls(feats)

    @staticmethod
    def _feature_from_record(rec: dict, line_no: int = 0) -> Feature:
        try:
            coords = np.asarray(rec["coords"], dtype=float)
            kind = rec["kind"]
            fid = str(rec["id"])
        except (KeyError, TypeError, ValueError) as e:
            raise LayerError("bad feature at line %d: %s" % (line_no, e))
        category = rec.get("category", "")
        parent = rec.get("parent_id")
        attrs = rec.get("attrs") or {}
        if kind == "polygon":
            try:
                ring = Ring(coords[:, 0], coords[:, 1])
                ring.validate()
            except (ValueError, IndexError) as e:
                raise LayerError("invalid ring for feature %s: %s" % (fid, e))
            return Feature(fid, kind, category, parent, ring=ring, attrs=attrs)
        if kind == "polyline":
            if len(coords) < 2:
                raise LayerError("polyline %s needs >= 2 points" % fid)
            return Feature(fid, kind, category, parent, chain_lons=coords[:, 0],
                           chain_lats=coords[:, 1], attrs=attrs)
        raise LayerError("unknown feature kind %r for %s" % (kind, fid))

    def _validate(self):
        ids = {f.id for f in self.features}
        for f in self.features:
            if f.parent_id is not None and f.parent_id not in ids:
                raise LayerError("parent_id %s of %s not in layer" % (f.parent_id, f.id))
        # tract polygons must not overlap (shared edges are fine)
        for a in range(len(self.tracts)):
            ra = self.tracts[a].ring
            for b in range(a + 1, len(self.tracts)):
                rb = self.tracts[b].ring
                if ra.bbox[1] < rb.bbox[0] or rb.bbox[1] < ra.bbox[0] \
                        or ra.bbox[3] < rb.bbox[2] or rb.bbox[3] < ra.bbox[2]:
                    continue
                if self._interiors_overlap(ra, rb):
                    raise LayerError("overlapping tract polygons: %s, %s"
                                     % (self.tracts[a].id, self.tracts[b].id))

    @staticmethod
    def _interiors_overlap(ra: Ring, rb: Ring) -> bool:
        ca = ra.centroid()
        cb = rb.centroid()
        if rb.contains_strict_many([ca[0]], [ca[1]])[0] or ra.contains_strict_many([cb[0]], [cb[1]])[0]:
            return True
        ax, ay = ra.lons, ra.lats
        bx, by = rb.lons, rb.lats
        for i in range(len(ax)):
            a1x, a1y = ax[i], ay[i]
            a2x, a2y = ax[(i + 1) % len(ax)], ay[(i + 1) % len(ax)]
            for j in range(len(bx)):
                b1x, b1y = bx[j], by[j]
                b2x, b2y = bx[(j + 1) % len(bx)], by[(j + 1) % len(bx)]
                d1 = (a2x - a1x) * (b1y - a1y) - (a2y - a1y) * (b1x - a1x)
                d2 = (a2x - a1x) * (b2y - a1y) - (a2y - a1y) * (b2x - a1x)
                d3 = (b2x - b1x) * (a1y - b1y) - (b2y - b1y) * (a1x - b1x)
                d4 = (b2x - b1x) * (a2y - b1y) - (b2y - b1y) * (a2x - b1x)
                if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
                    return True  # proper edge crossing
        return False

    def _polygons_at(self, lats, lons, feats, index: GridIndex):
        """For each point, indices of containing polygons among feats."""
        lats = np.asarray(lats, dtype=float)
        lons = np.asarray(lons, dtype=float)
        per_feat_points = {}
        for p, cands in enumerate(index.candidates_many(lats, lons)):
            for c in cands:
                per_feat_points.setdefault(c, []).append(p)
        hits = [[] for _ in range(len(lats))]
        for c, pts in per_feat_points.items():
            pts = np.asarray(pts)
            mask = feats[c].ring.contains_many(lats[pts], lons[pts])
            for p in pts[mask]:
                hits[p].append(c)
        return hits

    def tracts_containing(self, lats, lons):
        """Containing tract id per point (smallest id on a boundary), else None."""
        hits = self._polygons_at(lats, lons, self.tracts, self._tract_index)
        return np.array([min((self.tracts[c].id for c in h), default=None) for h in hits], dtype=object)

    def pois_containing(self, lats, lons):
        """(poi_id, poi_category, parent_id) per point; smallest area wins overlaps."""
        hits = self._polygons_at(lats, lons, self.pois, self._poi_index)
        out = []
        for h in hits:
            if not h:
                out.append((None, None, None))
            else:
                c = min(h, key=lambda idx: (self._poi_area[idx], self.pois[idx].id))
                f = self.pois[c]
                out.append((f.id, f.category[len("poi:"):], f.parent_id))
        return out

    def hubs_containing(self, lats, lons):
        hits = self._polygons_at(lats, lons, self.hubs, self._hub_index)
        out = []
        for h in hits:
            if not h:
                out.append(None)
            else:
                c = min(h, key=lambda idx: (self._hub_area[idx], self.hubs[idx].id))
                out.append(self.hubs[c].id)
        return out

    def regions_containing(self, lats, lons):
        hits = self._polygons_at(lats, lons, self.regions, self._region_index)
        return np.array([min((self.regions[c].id for c in h), default=None) for h in hits], dtype=object)

    def road_within(self, lats, lons, dist_m: float = ROAD_DIST_M):
        """True where a point lies within dist_m of any road polyline."""
        lats = np.asarray(lats, dtype=float)
        lons = np.asarray(lons, dtype=float)
        out = np.zeros(len(lats), dtype=bool)
        if not self.roads:
            return out
        m_lat, _ = meters_per_degree(0.0)
        for f in self.roads:
            lat0 = float(np.max(np.abs(f.chain_lats)))
            _, m_lon = meters_per_degree(lat0)
            pad_lat = dist_m / m_lat
            pad_lon = dist_m / max(m_lon, 1.0)
            near = (
                (lats >= f.chain_lats.min() - 2 * pad_lat) & (lats <= f.chain_lats.max() + 2 * pad_lat)
                & (lons >= f.chain_lons.min() - 2 * pad_lon) & (lons <= f.chain_lons.max() + 2 * pad_lon)
                & ~out
            )
            if np.any(near):
                d = point_to_chain_dist_m(lats[near], lons[near], f.chain_lats, f.chain_lons)
                sub = np.zeros(int(near.sum()), dtype=bool)
                sub[d <= dist_m] = True
                out[near] |= sub
        return out

    def tract_income(self) -> dict:
        return {f.id: f.attrs["tract_income"] for f in self.tracts if "tract_income" in f.attrs}

    def tract_ring(self, tract_id: str) -> Ring:
        for f in self.tracts:
            if f.id == tract_id:
                return f.ring
        raise KeyError(tract_id)


def hour_bucket(t, utc_offset_hours: float = 0.0):
    """3-hour local window index, 0..7."""
    off = int(round(utc_offset_hours * 3600))
    t = np.asarray(t, dtype=np.int64)
    return (((t + off) // 3600) % 24) // HOURS_PER_BUCKET


def classify_tract_context(in_home_tract_i, in_home_tract_j):
    """both_in_home_tract / one_out / both_out from the two tract flags."""
    i = np.asarray(in_home_tract_i, dtype=bool)
    j = np.asarray(in_home_tract_j, dtype=bool)
    out = np.where(i & j, "both_in_home_tract", np.where(i | j, "one_out", "both_out"))
    return out


def annotate_all(inter: pd.DataFrame, persons: pd.DataFrame, layer: GeoLayer,
                 utc_offset_hours: float = 0.0) -> pd.DataFrame:
    """Attach the full annotation to every interaction.

    Endpoints absent from the persons table (no inferred home) get False for
    the home-based flags. Annotation is a pure function of its inputs.
    """
    df = inter.reset_index(drop=True).copy()
    n = len(df)
    lat = df["lat"].to_numpy(dtype=float)
    lon = df["lon"].to_numpy(dtype=float)

    home_lat = dict(zip(persons["person_id"], persons["home_lat"]))
    home_lon = dict(zip(persons["person_id"], persons["home_lon"]))
    tract_of = dict(zip(persons["person_id"], persons.get("home_tract_id", pd.Series(dtype=object))))

    for side in ("i", "j"):
        pid = df[side]
        hlat = pid.map(home_lat).to_numpy(dtype=float)
        hlon = pid.map(home_lon).to_numpy(dtype=float)
        known = ~np.isnan(hlat)
        at_home = np.zeros(n, dtype=bool)
        if known.any():
            at_home[known] = haversine_m(lat[known], lon[known], hlat[known], hlon[known]) <= AT_HOME_RADIUS_M
        df["at_home_%s" % side] = at_home

        in_tract = np.zeros(n, dtype=bool)
        tract_ids = pid.map(tract_of)
        for tid, idx in tract_ids.groupby(tract_ids.to_numpy(), dropna=True).groups.items():
            ring = layer.tract_ring(tid)
            sel = np.asarray(idx, dtype=int)
            in_tract[sel] = ring.contains_many(lat[sel], lon[sel])
        df["in_home_tract_%s" % side] = in_tract

    poi = layer.pois_containing(lat, lon)
    df["poi_id"] = [p[0] for p in poi]
    df["poi_category"] = [p[1] for p in poi]
    direct_hub = layer.hubs_containing(lat, lon)
    df["hub_id"] = [p[2] if p[2] is not None else h for p, h in zip(poi, direct_hub)]
    df["on_road"] = layer.road_within(lat, lon)
    df["hour_bucket"] = hour_bucket(df["t"].to_numpy(), utc_offset_hours)
    df["tract_context"] = classify_tract_context(df["in_home_tract_i"], df["in_home_tract_j"])
    return df
