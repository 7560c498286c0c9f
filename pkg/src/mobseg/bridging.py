"""Bridging Index: do interaction hubs pool economically diverse neighborhoods?

Residents are clustered by their nearest hub; the index is the cluster-size
weighted average economic diversity of those clusters relative to the
region's overall diversity:

    BI = sum_k |C_k| * div(C_k) / (|V| * div(V))

with div the Gini index of raw ES (dollars) by default, or the population
variance as a robustness variant. One hub means one cluster, hence BI = 1
exactly; homogeneous clusters in a diverse region push BI to 0.
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .geo import haversine_m
from .seeds import derive_rng

ABLATION_TRIALS = 1000


def gini(values) -> float:
    """Mean-absolute-difference Gini: sum_ij |v_i - v_j| / (2 n^2 mean).

    Requires a nonempty list of positive values. Computed via the sorted-rank
    identity, O(n log n).
    """
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        raise ValueError("gini of empty input")
    if np.any(v <= 0):
        raise ValueError("gini requires positive values")
    v = np.sort(v)
    n = len(v)
    ranks = np.arange(1, n + 1)
    return float(((2.0 * ranks - n - 1.0) @ v) / (n * v.sum()))


def _diversity(values, measure: str) -> float:
    if measure == "gini":
        return gini(values)
    if measure == "variance":
        return float(np.var(np.asarray(values, dtype=float)))
    raise ValueError("unknown diversity measure: %s" % measure)


@dataclass
class BridgingResult:
    bi: float
    measure: str
    hub_ids: list
    cluster_sizes: dict = field(default_factory=dict)   # hub id -> member count
    cluster_diversity: dict = field(default_factory=dict)
    overall_diversity: float = None
    assignment: np.ndarray = None  # hub id per person, aligned to input order

    def to_dict(self) -> dict:
        return {
            "bi": self.bi, "measure": self.measure,
            "overall_diversity": self.overall_diversity,
            "clusters": [
                {"hub_id": h, "size": self.cluster_sizes[h],
                 "diversity": self.cluster_diversity[h]}
                for h in self.hub_ids
            ],
        }


def nearest_hub_assignment(lat, lon, hub_ids, hub_lat, hub_lon) -> np.ndarray:
    """Hub id per point by straight-line (great-circle) distance.

    Ties go to the smallest hub id; hubs are scanned in id order so the first
    minimum wins.
    """
    order = np.argsort(np.asarray(hub_ids, dtype=object))
    hub_ids = np.asarray(hub_ids, dtype=object)[order]
    hlat = np.asarray(hub_lat, dtype=float)[order]
    hlon = np.asarray(hub_lon, dtype=float)[order]
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    best = np.zeros(len(lat), dtype=np.int64)
    best_d = np.full(len(lat), np.inf)
    for k in range(len(hub_ids)):
        d = haversine_m(lat, lon, hlat[k], hlon[k])
        better = d < best_d
        best[better] = k
        best_d[better] = d[better]
    return hub_ids[best]


def bridging_index(persons: pd.DataFrame, hub_ids, hub_lat, hub_lon,
                   measure: str = "gini") -> BridgingResult:
    """Cluster persons by nearest hub, then the weighted diversity ratio.

    persons needs home_lat/home_lon/es_raw. Raw dollars feed the Gini (it
    needs positive support). Single-member clusters contribute diversity 0
    with weight 1. Raises when there are no hubs, fewer than 2 persons, or
    the overall diversity is 0.
    """
    if len(hub_ids) == 0:
        raise ValueError("bridging index needs at least one hub")
    if len(persons) < 2:
        raise ValueError("bridging index needs at least two persons")
    es = persons["es_raw"].to_numpy(dtype=float)
    overall = _diversity(es, measure)
    if overall == 0:
        raise ValueError("diversity undefined: all ES values equal")
    assign = nearest_hub_assignment(persons["home_lat"].to_numpy(),
                                    persons["home_lon"].to_numpy(),
                                    hub_ids, hub_lat, hub_lon)
    sizes, divs = {}, {}
    num = 0.0
    for hub in sorted(set(assign.tolist())):
        members = es[assign == hub]
        div = _diversity(members, measure) if len(members) > 1 else 0.0
        sizes[hub] = int(len(members))
        divs[hub] = div
        num += len(members) * div
    bi = num / (len(es) * overall)
    present = sorted(sizes)
    return BridgingResult(bi=float(bi), measure=measure, hub_ids=present,
                          cluster_sizes=sizes, cluster_diversity=divs,
                          overall_diversity=overall, assignment=assign)


def ablate_random_hubs(persons: pd.DataFrame, k: int, region_ring,
                       trials: int = ABLATION_TRIALS, seed: int = 0,
                       measure: str = "gini") -> dict:
    """BI distribution when the K hub locations are uniform in the region.

    Hub points are rejection-sampled from the region polygon's bounding box;
    trial r draws from a seed derived as (seed, "ablate", r), so results do
    not depend on scheduling. Returns {"bi": array, "mean": float}.
    """
    if region_ring.area_m2() == 0:
        raise ValueError("degenerate region polygon")
    lat_min, lat_max, lon_min, lon_max = region_ring.bbox
    out = np.empty(trials)
    for r in range(trials):
        rng = derive_rng(seed, "ablate", r)
        pts_lat, pts_lon = [], []
        guard = 0
        while len(pts_lat) < k:
            la = rng.uniform(lat_min, lat_max)
            lo = rng.uniform(lon_min, lon_max)
            if region_ring.contains(la, lo):
                pts_lat.append(la)
                pts_lon.append(lo)
            guard += 1
            if guard > 10000 * max(1, k):
                raise ValueError("rejection sampling failed; degenerate polygon?")
        ids = ["rand_%03d" % i for i in range(k)]
        out[r] = bridging_index(persons, ids, pts_lat, pts_lon, measure=measure).bi
    return {"bi": out, "mean": float(out.mean())}


def category_bridging_index(persons: pd.DataFrame, layer, category: str,
                            measure: str = "gini") -> BridgingResult:
    """Bridging index with one category's POI centroids standing in for hubs."""
    feats = [f for f in layer.pois if f.category == "poi:%s" % category]
    if not feats:
        raise ValueError("no POIs of category %r in layer" % category)
    cent = [f.ring.centroid() for f in feats]
    return bridging_index(persons, [f.id for f in feats],
                          [c[0] for c in cent], [c[1] for c in cent], measure=measure)


def hub_bridging_index(persons: pd.DataFrame, layer, measure: str = "gini") -> BridgingResult:
    """Bridging index for the layer's hub polygons (centroid locations)."""
    if not layer.hubs:
        raise ValueError("layer has no hubs")
    cent = [f.ring.centroid() for f in layer.hubs]
    return bridging_index(persons, [f.id for f in layer.hubs],
                          [c[0] for c in cent], [c[1] for c in cent], measure=measure)
