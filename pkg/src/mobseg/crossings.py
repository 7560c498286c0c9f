"""Proximity interaction join: all ping pairs of distinct persons within D meters and T seconds.

Two implementations with identical semantics: an O(n^2) brute-force oracle
for small inputs, and the production path that buckets pings into T-wide time
slabs and runs a k-d tree per slab (querying own + adjacent slab). Candidate
generation uses earth-centered chord distance, a monotone proxy for
haversine, and every candidate is re-verified with exact haversine so the
two paths accept exactly the same pairs. Threshold comparisons are strict
(< D, < T).

An interaction records the minimum of the two ping timestamps and the mean of
the two coordinates.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .geo import chord_m, ecef, haversine_m

DEFAULT_DIST_M = 50.0
DEFAULT_TIME_S = 300.0
BRUTE_FORCE_MAX_PINGS = 10_000
# candidate radius inflation so float rounding can never exclude a true pair
_CAND_EPS = 1e-9


@dataclass
class JoinConfig:
    dist_m: float = DEFAULT_DIST_M
    time_s: float = DEFAULT_TIME_S
    tie_kind: str = "any"          # any | consecutive | unique_days
    tie_k: int = 1
    weighting: str = "dedup_pairs"  # dedup_pairs | count_repeats
    collapse_repeats: bool = True   # merge same-pair ping pairs within one T window

    def __post_init__(self):
        if self.dist_m <= 0 or self.time_s <= 0:
            raise ValueError("thresholds must be positive")
        if self.tie_kind not in ("any", "consecutive", "unique_days"):
            raise ValueError("unknown tie_kind: %s" % self.tie_kind)
        if self.tie_k < 1:
            raise ValueError("tie_k must be >= 1")
        if self.weighting not in ("dedup_pairs", "count_repeats"):
            raise ValueError("unknown weighting: %s" % self.weighting)


def _emit(store, a_idx, b_idx, person_of):
    """Canonical interaction frame from qualifying ping index pairs."""
    pa, pb = person_of[a_idx], person_of[b_idx]
    swap = pa > pb  # store ids are sorted, so index order is id order
    ai = np.where(swap, b_idx, a_idx)
    bi = np.where(swap, a_idx, b_idx)
    pa, pb = person_of[ai], person_of[bi]
    ids = np.asarray(store.person_ids, dtype=object)
    df = pd.DataFrame({
        "i": ids[pa],
        "j": ids[pb],
        "t": np.minimum(store.t[ai], store.t[bi]),
        "lat": (store.lat[ai] + store.lat[bi]) / 2.0,
        "lon": (store.lon[ai] + store.lon[bi]) / 2.0,
    })
    return df.sort_values(["i", "j", "t", "lat", "lon"], kind="mergesort").reset_index(drop=True)


def join_bruteforce(store, cfg: JoinConfig) -> pd.DataFrame:
    """Exact all-pairs scan. Refuses large inputs; this is the oracle."""
    n = store.n_pings
    if n > BRUTE_FORCE_MAX_PINGS:
        raise ValueError("brute-force join refused: %d pings > %d" % (n, BRUTE_FORCE_MAX_PINGS))
    person_of = np.repeat(np.arange(store.n_persons), store.counts())
    a_list, b_list = [], []
    step = max(1, int(2e7) // max(1, n))
    for s in range(0, n, step):
        e = min(n, s + step)
        dt = np.abs(store.t[s:e, None] - store.t[None, :])
        near_t = dt < cfg.time_s
        # only consider each unordered pair once (row index < col index)
        near_t &= np.arange(n)[None, :] > np.arange(s, e)[:, None]
        near_t &= person_of[s:e, None] != person_of[None, :]
        ar, br = np.nonzero(near_t)
        if len(ar) == 0:
            continue
        ar = ar + s
        d = haversine_m(store.lat[ar], store.lon[ar], store.lat[br], store.lon[br])
        keep = d < cfg.dist_m
        a_list.append(ar[keep])
        b_list.append(br[keep])
    if not a_list:
        return _empty_interactions()
    return _emit(store, np.concatenate(a_list), np.concatenate(b_list), person_of)


def join_indexed(store, cfg: JoinConfig) -> pd.DataFrame:
    """Slab-bucketed k-d tree join; same output multiset as join_bruteforce."""
    n = store.n_pings
    if n == 0:
        return _empty_interactions()
    person_of = np.repeat(np.arange(store.n_persons), store.counts())
    slab = np.floor(store.t / cfg.time_s).astype(np.int64)
    order = np.argsort(slab, kind="mergesort")
    slab_sorted = slab[order]
    bounds = np.flatnonzero(np.diff(slab_sorted)) + 1
    groups = np.split(order, bounds)
    slab_ids = slab_sorted[np.concatenate([[0], bounds])] if n else np.array([])

    xyz = ecef(store.lat, store.lon)
    radius = chord_m(cfg.dist_m) * (1.0 + _CAND_EPS) + _CAND_EPS
    trees = [cKDTree(xyz[g]) for g in groups]

    a_list, b_list = [], []
    for gi, g in enumerate(groups):
        pairs = trees[gi].query_pairs(radius, output_type="ndarray")
        if len(pairs):
            a_list.append(g[pairs[:, 0]])
            b_list.append(g[pairs[:, 1]])
        if gi + 1 < len(groups) and slab_ids[gi + 1] == slab_ids[gi] + 1:
            g2 = groups[gi + 1]
            hits = trees[gi].query_ball_tree(trees[gi + 1], radius)
            ar = np.fromiter((g[i] for i, hs in enumerate(hits) for _ in hs), dtype=np.int64,
                             count=sum(len(hs) for hs in hits))
            br = np.fromiter((g2[h] for hs in hits for h in hs), dtype=np.int64, count=len(ar))
            if len(ar):
                a_list.append(ar)
                b_list.append(br)
    if not a_list:
        return _empty_interactions()
    a = np.concatenate(a_list)
    b = np.concatenate(b_list)
    keep = (person_of[a] != person_of[b]) & (np.abs(store.t[a] - store.t[b]) < cfg.time_s)
    a, b = a[keep], b[keep]
    d = haversine_m(store.lat[a], store.lon[a], store.lat[b], store.lon[b])
    keep = d < cfg.dist_m
    return _emit(store, a[keep], b[keep], person_of)


def _empty_interactions() -> pd.DataFrame:
    return pd.DataFrame({"i": pd.Series(dtype=object), "j": pd.Series(dtype=object),
                         "t": pd.Series(dtype=np.int64), "lat": pd.Series(dtype=float),
                         "lon": pd.Series(dtype=float)})


def collapse_repeat_windows(inter: pd.DataFrame, time_s: float = DEFAULT_TIME_S) -> pd.DataFrame:
    """Collapse same-pair interactions within one T window to the earliest one.

    Multiple qualifying ping pairs between the same two persons inside a
    single floor(t/T) window are ping-rate artifacts; only repeat-weighted
    statistics are sensitive to this, and pipeline metadata records that the
    collapse ran.
    """
    if len(inter) == 0:
        return inter.copy()
    df = inter.sort_values(["i", "j", "t", "lat", "lon"], kind="mergesort")
    window = np.floor(df["t"].to_numpy() / time_s).astype(np.int64)
    first = ~pd.DataFrame({"i": df["i"].to_numpy(), "j": df["j"].to_numpy(), "w": window}).duplicated().to_numpy()
    return df.loc[first].reset_index(drop=True)


def assign_ordinals(inter: pd.DataFrame) -> pd.DataFrame:
    """Add k, the 1-based time ordinal of each interaction within its (i, j) pair."""
    df = inter.sort_values(["i", "j", "t", "lat", "lon"], kind="mergesort").reset_index(drop=True)
    df["k"] = df.groupby(["i", "j"]).cumcount() + 1
    return df


def apply_tie_strength(inter: pd.DataFrame, cfg: JoinConfig, utc_offset_hours: float = 0.0) -> pd.DataFrame:
    """Keep only pairs meeting the configured minimum tie strength.

    consecutive(k): the pair has a run of >= k interactions, each within T of
    the previous. unique_days(k): the pair interacted on >= k distinct local
    calendar days. Retained pairs keep all their interactions.
    """
    if cfg.tie_kind == "any" or len(inter) == 0:
        return inter.reset_index(drop=True)
    df = inter.sort_values(["i", "j", "t"], kind="mergesort")
    t = df["t"].to_numpy()
    pair_codes, _ = pd.factorize(df["i"].astype(str) + "\x00" + df["j"].astype(str), sort=False)
    if cfg.tie_kind == "consecutive":
        same_pair = np.zeros(len(df), dtype=bool)
        same_pair[1:] = pair_codes[1:] == pair_codes[:-1]
        chain = same_pair & np.concatenate([[False], np.diff(t) < cfg.time_s])
        idx = np.arange(len(df))
        seg_start = np.maximum.accumulate(np.where(~chain, idx, 0))
        run = idx - seg_start + 1
        best = pd.Series(run).groupby(pair_codes).max()
        keep_pair = set(best.index[best >= cfg.tie_k])
    else:  # unique_days
        off = int(round(utc_offset_hours * 3600))
        day = (t + off) // 86400
        days = pd.Series(day).groupby(pair_codes).nunique()
        keep_pair = set(days.index[days >= cfg.tie_k])
    return df.loc[np.isin(pair_codes, list(keep_pair))].reset_index(drop=True)


def alter_multisets(inter: pd.DataFrame, es_by_person: dict, weighting: str = "dedup_pairs"):
    """Per-person multiset of partner ES values.

    dedup_pairs counts each unique partner once; count_repeats counts one
    value per interaction. Edges with an ES-less endpoint contribute nothing
    (the ego needs its own ES for x and the partner's for y). Persons with no
    surviving partners are absent from the result.
    """
    if weighting not in ("dedup_pairs", "count_repeats"):
        raise ValueError("unknown weighting: %s" % weighting)
    has = inter["i"].map(es_by_person.__contains__) & inter["j"].map(es_by_person.__contains__)
    df = inter.loc[has, ["i", "j"]]
    if weighting == "dedup_pairs":
        df = df.drop_duplicates()
    out = {}
    for ego_col, alter_col in (("i", "j"), ("j", "i")):
        alter_es = df[alter_col].map(es_by_person)
        for ego, vals in alter_es.groupby(df[ego_col].to_numpy()):
            out.setdefault(ego, []).append(vals.to_numpy(dtype=float))
    return {ego: np.concatenate(v) for ego, v in out.items()}
