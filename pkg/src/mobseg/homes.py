"""Home inference from nighttime stationarity, and economic standing linkage.

A person's home is where they repeatedly hold still at night: we interpolate
each person's position at whole local hours, keep nighttime hours where they
move less than HOME_MOVE_THRESH_M until the next hour, and require enough
distinct nights plus enough concentration around the medoid before taking a
per-coordinate median. Economic standing (ES) is the monthly rent of the
nearest residential property, winsorized.
"""

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree
from scipy.stats import rankdata

from .geo import chord_m, ecef, haversine_m, medoid_index

NIGHT_START_HOUR = 18
NIGHT_END_HOUR = 9
HOME_MOVE_THRESH_M = 50.0
HOME_MIN_NIGHTS = 3
HOME_MIN_FRAC = 0.6
HOME_RADIUS_M = 50.0
MAX_GAP_H = 6.0
ES_WINSOR_MAX = 20000.0
ES_LINK_MAX_DIST_M = 100.0


def interpolate_hourly(t, lat, lon, utc_offset_hours: float = 0.0, max_gap_h: float = MAX_GAP_H):
    """Positions at whole local hours between the first and last ping.

    t must be sorted epoch seconds. Hours whose bracketing pings are more
    than max_gap_h apart are omitted. Fewer than 2 pings -> empty arrays.
    Returns (t_hour_utc, lat, lon).
    """
    t = np.asarray(t, dtype=np.int64)
    empty = (np.array([], dtype=np.int64), np.array([]), np.array([]))
    if len(t) < 2:
        return empty
    off = int(round(utc_offset_hours * 3600))
    first, last = t[0] + off, t[-1] + off
    h0 = -(-first // 3600)  # ceil
    h1 = last // 3600       # floor
    if h1 < h0:
        return empty
    hours_local = np.arange(h0, h1 + 1, dtype=np.int64) * 3600
    hours_utc = hours_local - off

    idx = np.searchsorted(t, hours_utc, side="left")
    exact = (idx < len(t)) & (t[np.minimum(idx, len(t) - 1)] == hours_utc)
    lo = np.clip(idx - 1, 0, len(t) - 1)
    hi = np.clip(idx, 0, len(t) - 1)
    gap_ok = exact | ((t[hi] - t[lo]) <= max_gap_h * 3600)

    lat_h = np.interp(hours_utc, t, np.asarray(lat, dtype=float))
    lon_h = np.interp(hours_utc, t, np.asarray(lon, dtype=float))
    return hours_utc[gap_ok], lat_h[gap_ok], lon_h[gap_ok]


def infer_home(hour_t_utc, hour_lat, hour_lon, utc_offset_hours: float = 0.0,
               night_start: int = NIGHT_START_HOUR, night_end: int = NIGHT_END_HOUR,
               move_thresh_m: float = HOME_MOVE_THRESH_M, min_nights: int = HOME_MIN_NIGHTS,
               min_frac: float = HOME_MIN_FRAC, radius_m: float = HOME_RADIUS_M):
    """Infer (lat, lon) of home from hourly positions, or None.

    Stationary nighttime observations are hours in [night_start, night_end)
    local whose displacement to the following hour is under move_thresh_m.
    They must span >= min_nights distinct local nights, and >= min_frac of
    them must fall within radius_m of their medoid; the home is then the
    per-coordinate median of that in-radius subset.
    """
    t = np.asarray(hour_t_utc, dtype=np.int64)
    if len(t) < 2:
        return None
    lat = np.asarray(hour_lat, dtype=float)
    lon = np.asarray(hour_lon, dtype=float)
    off = int(round(utc_offset_hours * 3600))
    local = t + off
    hour_of_day = (local // 3600) % 24
    night = (hour_of_day >= night_start) | (hour_of_day < night_end)

    has_next = np.zeros(len(t), dtype=bool)
    has_next[:-1] = np.diff(t) == 3600
    disp = np.full(len(t), np.inf)
    nxt = np.flatnonzero(has_next)
    disp[nxt] = haversine_m(lat[nxt], lon[nxt], lat[nxt + 1], lon[nxt + 1])
    stationary = night & has_next & (disp < move_thresh_m)
    if not np.any(stationary):
        return None

    s_lat, s_lon, s_local = lat[stationary], lon[stationary], local[stationary]
    # a night spanning 18:00 -> 09:00 belongs to the evening's calendar day
    night_id = (s_local - night_end * 3600) // 86400
    if len(np.unique(night_id)) < min_nights:
        return None

    m = medoid_index(s_lat, s_lon)
    d = haversine_m(s_lat, s_lon, s_lat[m], s_lon[m])
    in_radius = d <= radius_m
    if in_radius.mean() < min_frac:
        return None
    return float(np.median(s_lat[in_radius])), float(np.median(s_lon[in_radius]))


def infer_homes(store, utc_offset_hours: float = 0.0, **kwargs) -> pd.DataFrame:
    """Run hourly interpolation + home inference for every person in a store.

    Persons without a resolvable home are dropped. Returns a persons frame
    with columns person_id, home_lat, home_lon.
    """
    max_gap_h = kwargs.pop("max_gap_h", MAX_GAP_H)
    rows = []
    for pid, sl in store.iter_persons():
        ht, hlat, hlon = interpolate_hourly(store.t[sl], store.lat[sl], store.lon[sl],
                                            utc_offset_hours, max_gap_h)
        home = infer_home(ht, hlat, hlon, utc_offset_hours, **kwargs)
        if home is not None:
            rows.append((pid, home[0], home[1]))
    return pd.DataFrame(rows, columns=["person_id", "home_lat", "home_lon"])


def link_es(persons: pd.DataFrame, properties: pd.DataFrame,
            max_dist_m: float = ES_LINK_MAX_DIST_M, winsor_max: float = ES_WINSOR_MAX,
            max_same_property: int = None) -> pd.DataFrame:
    """Attach es_raw = rent of the nearest property within max_dist_m.

    Persons with no property in range are dropped. Rents above winsor_max are
    capped there. max_same_property optionally drops persons mapped to a
    property shared by more than that many people (data-error guard for
    single-family rows; requires a `kind` column to be meaningful).
    """
    if len(properties) == 0:
        raise ValueError("empty property table")
    prop_xyz = ecef(properties["lat"].to_numpy(), properties["lon"].to_numpy())
    tree = cKDTree(prop_xyz)
    home_xyz = ecef(persons["home_lat"].to_numpy(), persons["home_lon"].to_numpy())
    # chord radius bounds the haversine ball; verify exactly afterwards
    _, nearest = tree.query(home_xyz, k=1)
    d = haversine_m(persons["home_lat"].to_numpy(), persons["home_lon"].to_numpy(),
                    properties["lat"].to_numpy()[nearest], properties["lon"].to_numpy()[nearest])
    ok = d <= max_dist_m
    out = persons.loc[ok].reset_index(drop=True).copy()
    matched = nearest[ok]
    out["es_raw"] = np.minimum(properties["rent"].to_numpy()[matched], winsor_max)
    out["property_index"] = matched
    if max_same_property is not None and "kind" in properties.columns:
        counts = out.groupby("property_index")["person_id"].transform("size")
        kinds = properties["kind"].to_numpy()[out["property_index"].to_numpy()]
        drop = (counts > max_same_property) & (kinds == "single_family")
        out = out.loc[~drop].reset_index(drop=True)
    return out.drop(columns=["property_index"])


def assign_tracts(persons: pd.DataFrame, layer) -> pd.DataFrame:
    """Set home_tract_id by point-in-polygon on the home point.

    On a boundary the smallest tract id wins; persons outside every tract are
    dropped. Tract overlap is rejected at layer load, so containment here is
    unambiguous up to shared edges.
    """
    tract_id = layer.tracts_containing(persons["home_lat"].to_numpy(),
                                       persons["home_lon"].to_numpy())
    out = persons.copy()
    out["home_tract_id"] = tract_id
    return out.loc[out["home_tract_id"].notna()].reset_index(drop=True)


def compute_es_variants(persons: pd.DataFrame, region_ids=None,
                        tract_income: dict = None) -> pd.DataFrame:
    """Standardize ES and add the alternate ES definitions.

    es: z-score of es_raw over the full analysis population (unit variance).
    es_percentile: global rank fraction, rank/(n-1), average ranks for ties.
    es_percentile_within_region: same ranking inside each region.
    es_tract_demeaned: es_raw minus the mean es_raw of the home tract.
    es_income: home-tract income column when a tract_income mapping is given.
    """
    out = persons.copy()
    raw = out["es_raw"].to_numpy(dtype=float)
    n = len(raw)
    if n == 0:
        return out
    sd = raw.std()
    if sd == 0:
        raise ValueError("degenerate ES: zero variance across population")
    out["es"] = (raw - raw.mean()) / sd

    def _pct(values):
        if len(values) == 1:
            return np.array([0.0])
        return (rankdata(values, method="average") - 1.0) / (len(values) - 1.0)

    out["es_percentile"] = _pct(raw)
    if region_ids is not None:
        out["region_id"] = np.asarray(region_ids, dtype=object)
        out["es_percentile_within_region"] = (
            out.groupby("region_id")["es_raw"].transform(lambda s: _pct(s.to_numpy()))
        )
    else:
        out["es_percentile_within_region"] = out["es_percentile"]
    if "home_tract_id" in out.columns:
        out["es_tract_demeaned"] = raw - out.groupby("home_tract_id")["es_raw"].transform("mean").to_numpy()
        if tract_income:
            out["es_income"] = out["home_tract_id"].map(tract_income)
    return out
