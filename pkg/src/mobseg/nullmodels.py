"""Counterfactual interaction networks.

Two families: (1) constant-homophily random graphs, where each person draws a
fixed number of partners weighted by ES similarity, testing whether a fixed
taste for similar-ES contact plus the city's ES distribution can reproduce
observed segregation; (2) a per-category configuration model that keeps every
person's interaction count within each venue category but randomizes who they
met, erasing within-category venue choice.

Node ES values are never modified. Identical seeds give identical networks.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import rankdata, spearmanr

from .seeds import derive_rng
from . import segregation

log = logging.getLogger(__name__)

DEFAULT_DEGREE = 75  # per-person draws; expected total degree ~150
GENERAL_KERNEL_MAX_N = 4000  # the general path materializes an n^2 weight matrix
CONFIG_MODEL_RESTARTS = 100


def similarity(es_i, es_j, es_min: float, es_max: float):
    """Similarity = 1 - |es_i - es_j| / (es_max - es_min), in [0, 1]."""
    if es_max <= es_min:
        raise ValueError("similarity undefined: es_max must exceed es_min")
    return 1.0 - np.abs(np.asarray(es_i, dtype=float) - np.asarray(es_j, dtype=float)) / (es_max - es_min)


@dataclass
class HomophilyConfig:
    degree_per_person: int = DEFAULT_DEGREE
    H: float = 1.0
    kernel: str = "linear"        # linear: sim^H; softmax: exp(sim)
    es_transform: str = "raw"     # raw | percentile
    seed: int = 0

    def __post_init__(self):
        if self.degree_per_person < 1:
            raise ValueError("degree_per_person must be >= 1")
        if self.kernel not in ("linear", "softmax"):
            raise ValueError("unknown kernel: %s" % self.kernel)
        if self.es_transform not in ("raw", "percentile"):
            raise ValueError("unknown es_transform: %s" % self.es_transform)
        if self.H < 0:
            raise ValueError("H must be >= 0")


def _transform_es(es, how: str):
    es = np.asarray(es, dtype=float)
    if how == "percentile":
        if len(es) == 1:
            return np.zeros(1)
        return (rankdata(es, method="average") - 1.0) / (len(es) - 1.0)
    return es


def sample_edge_codes(es_raw, cfg: HomophilyConfig):
    """Core sampler on integer person codes; returns unique (a, b) with a < b.

    Each ego draws degree_per_person distinct partners without replacement
    with probability proportional to the kernel weight; the undirected union
    of the draws is returned. With degree >= population - 1 the complete
    graph is returned with a warning.
    """
    es = _transform_es(np.asarray(es_raw, dtype=float), cfg.es_transform)
    n = len(es)
    if n < 2:
        raise ValueError("need at least 2 persons")
    if cfg.degree_per_person >= n - 1:
        log.warning("degree %d >= n-1 (%d): falling back to the complete graph",
                    cfg.degree_per_person, n - 1)
        return np.triu_indices(n, k=1)

    rng = derive_rng(cfg.seed, "homophily", cfg.kernel, cfg.H, cfg.es_transform)
    uniform = cfg.kernel == "linear" and cfg.H == 0.0
    if uniform:
        picks = _draw_uniform(n, cfg.degree_per_person, rng)
    elif cfg.kernel == "linear" and cfg.H == 1.0:
        picks = _draw_linear_fast(es, cfg.degree_per_person, rng)
    else:
        if n > GENERAL_KERNEL_MAX_N:
            raise ValueError("general kernel sampling limited to %d persons" % GENERAL_KERNEL_MAX_N)
        picks = _draw_general(es, cfg.degree_per_person, cfg, rng)
    ego = np.repeat(np.arange(n), cfg.degree_per_person)
    a = np.minimum(ego, picks)
    b = np.maximum(ego, picks)
    keys = np.unique(a.astype(np.int64) * n + b)
    return keys // n, keys % n


def sample_homophily_network(persons: pd.DataFrame, cfg: HomophilyConfig) -> pd.DataFrame:
    """Random network with partner choice weighted by ES similarity."""
    ids = persons["person_id"].to_numpy(dtype=object)
    a, b = sample_edge_codes(persons["es_raw"].to_numpy(dtype=float), cfg)
    return _edges_frame(ids, a, b)


def _edges_frame(ids, a, b) -> pd.DataFrame:
    df = pd.DataFrame({"i": ids[a], "j": ids[b]})
    return df.sort_values(["i", "j"], kind="mergesort").reset_index(drop=True)


def _settle_rounds(n, k, rng, propose):
    """Draw k distinct non-self partners per ego via propose(flat_ego_codes).

    Rejected proposals (self or already chosen for that ego) are redrawn, so
    the accepted sequence follows successive without-replacement sampling.
    Returns a flat int array of n*k picks ordered by (ego, slot).
    """
    picks = np.full(n * k, -1, dtype=np.int64)
    pending = np.arange(n * k)
    chosen = np.empty(0, dtype=np.int64)  # sorted accepted (ego, pick) keys
    guard = 0
    while len(pending):
        guard += 1
        if guard > 200:
            raise RuntimeError("partner sampling failed to settle")
        egos = pending // k
        cand = propose(egos)
        key = egos.astype(np.int64) * n + cand
        ok = cand != egos
        # reject duplicates inside this round (keep the first per key)...
        order = np.argsort(key, kind="mergesort")
        dup_sorted = np.zeros(len(key), dtype=bool)
        dup_sorted[1:] = key[order][1:] == key[order][:-1]
        dup = np.zeros(len(key), dtype=bool)
        dup[order] = dup_sorted
        ok &= ~dup
        # ...and against previously accepted picks
        if len(chosen):
            pos = np.searchsorted(chosen, key)
            prev = (pos < len(chosen)) & (chosen[np.minimum(pos, len(chosen) - 1)] == key)
            ok &= ~prev
        accepted = pending[ok]
        picks[accepted] = cand[ok]
        chosen = np.sort(np.concatenate([chosen, key[ok]]))
        pending = pending[~ok]
    return picks


def _draw_uniform(n, k, rng):
    return _settle_rounds(n, k, rng, lambda egos: rng.integers(0, n, size=len(egos)))


def _draw_general(es, k, cfg: HomophilyConfig, rng):
    """Exact per-ego inverse-CDF sampling for any kernel (O(n) per ego)."""
    n = len(es)
    sims = similarity(es[:, None], es[None, :], es.min(), es.max())
    if cfg.kernel == "softmax":
        w = np.exp(sims)
    else:
        with np.errstate(invalid="ignore"):
            w = sims ** cfg.H
        w = np.nan_to_num(w, nan=1.0)  # 0^0 at H=0 counts as weight 1
    np.fill_diagonal(w, 0.0)
    cum = np.cumsum(w, axis=1)
    total = cum[:, -1]
    if np.any(total <= 0):
        raise ValueError("an ego has zero total kernel weight")

    def propose(egos):
        u = rng.random(len(egos)) * total[egos]
        return np.array([np.searchsorted(cum[e], uu, side="right") for e, uu in zip(egos, u)],
                        dtype=np.int64)

    return _settle_rounds(n, k, rng, propose)


def _draw_linear_fast(es, k, rng):
    """Closed-form inverse CDF for the H=1 linear kernel.

    With values sorted, the cumulative kernel weight up to sorted index j is
    C(j) = (j+1) - (sum of |es_l - e|, l <= j) / range, and the absolute-gap
    prefix splits around the ego's own value, so C evaluates in O(1) from one
    prefix-sum table. Each draw is then a binary search; self-picks are
    rejected and redrawn.
    """
    n = len(es)
    order = np.argsort(es, kind="mergesort")
    S = es[order]
    R = S[-1] - S[0]
    if R <= 0:
        raise ValueError("similarity undefined: all ES values equal")
    P = np.cumsum(S)
    pos_of = np.empty(n, dtype=np.int64)
    pos_of[order] = np.arange(n)

    # per-ego constants, indexed by sorted position; with duplicate values the
    # split must cover every l with S_l <= e, not just the ego's own position
    e_val = S
    split = np.searchsorted(S, S, side="right") - 1
    A_split = (split + 1) * e_val - P[split]

    def C(j, ego_pos):
        e = e_val[ego_pos]
        sp = split[ego_pos]
        below = j <= sp
        Pj = P[j]
        A = np.where(below, (j + 1) * e - Pj,
                     A_split[ego_pos] + (Pj - P[sp]) - (j - sp) * e)
        return (j + 1) - A / R

    total = C(np.full(n, n - 1, dtype=np.int64), np.arange(n))

    def propose(egos):
        ego_pos = pos_of[egos]  # egos arrive as original indices
        u = rng.random(len(egos)) * total[ego_pos]
        lo = np.zeros(len(egos), dtype=np.int64)
        hi = np.full(len(egos), n - 1, dtype=np.int64)
        for _ in range(int(np.ceil(np.log2(max(2, n)))) + 1):
            mid = (lo + hi) // 2
            go_right = C(mid, ego_pos) <= u
            lo = np.where(go_right, mid + 1, lo)
            hi = np.where(go_right, hi, mid)
            if np.all(lo >= hi):
                break
        return order[np.minimum(hi, n - 1)]

    return _settle_rounds(n, k, rng, propose)


def configuration_by_category(annotated: pd.DataFrame, seed: int = 0):
    """Degree-preserving rewiring within each POI category.

    Stubs (one per incident edge end) are matched by a uniform random perfect
    matching per category; matchings with self-pairs are redrawn up to 100
    times, after which remaining self-pairs are kept and flagged. Returns
    (edges frame with i, j, poi_category; flags dict with per-category
    self-edge counts).
    """
    rows = annotated.loc[pd.notna(annotated["poi_category"]), ["i", "j", "poi_category"]]
    out_i, out_j, out_c = [], [], []
    flags = {}
    for cat in sorted(rows["poi_category"].unique()):
        sub = rows.loc[rows["poi_category"] == cat]
        stubs = np.concatenate([sub["i"].to_numpy(dtype=object), sub["j"].to_numpy(dtype=object)])
        rng = derive_rng(seed, "config_model", cat)
        if len(stubs) % 2 == 1:
            drop = int(rng.integers(0, len(stubs)))
            log.warning("odd stub count in category %s: dropping one stub", cat)
            stubs = np.delete(stubs, drop)
        perm = None
        for _ in range(CONFIG_MODEL_RESTARTS):
            perm = rng.permutation(len(stubs))
            a, b = stubs[perm[0::2]], stubs[perm[1::2]]
            if not np.any(a == b):
                break
        a, b = stubs[perm[0::2]], stubs[perm[1::2]]
        self_edges = int(np.sum(a == b))
        if self_edges:
            log.warning("category %s: %d self-matches kept after %d restarts",
                        cat, self_edges, CONFIG_MODEL_RESTARTS)
        flags[cat] = self_edges
        out_i.append(np.minimum(a, b))
        out_j.append(np.maximum(a, b))
        out_c.append(np.full(len(a), cat, dtype=object))
    if not out_i:
        return pd.DataFrame({"i": [], "j": [], "poi_category": []}), flags
    df = pd.DataFrame({"i": np.concatenate(out_i), "j": np.concatenate(out_j),
                       "poi_category": np.concatenate(out_c)})
    df = df.sort_values(["poi_category", "i", "j"], kind="mergesort").reset_index(drop=True)
    return df, flags


def network_segregation(edges: pd.DataFrame, persons: pd.DataFrame,
                        weighting: str = "dedup_pairs", es_col: str = "es_raw"):
    """Mixed-model estimate for a simulated edge list (self-edges skipped)."""
    edges = edges.loc[edges["i"] != edges["j"]]
    stats = segregation.build_ego_groups(edges, persons, weighting=weighting, es_col=es_col)
    return segregation.fit_mixed(stats)


def network_naive_is(edges: pd.DataFrame, persons: pd.DataFrame,
                     weighting: str = "dedup_pairs", es_col: str = "es_raw") -> float:
    """Naive IS used for null-model baselines.

    The counterfactual generators here have no person-level noise term: each
    ego's partner mean is a deterministic function of its ES plus sampling
    noise, so the mixed model's disattenuated ratio degenerates toward +-1 on
    them regardless of how weak the kernel is. The group-mean correlation is
    the comparison the baselines are meant to supply.
    """
    edges = edges.loc[edges["i"] != edges["j"]]
    stats = segregation.build_ego_groups(edges, persons, weighting=weighting, es_col=es_col)
    return segregation.naive_corr(stats)


def population_sweep_null(regions, cfg: HomophilyConfig, n_draws: int = 1) -> pd.DataFrame:
    """IS under the constant-homophily null across regions of varying size.

    regions: iterable of (region_id, persons frame). Each region gets a seed
    derived from (cfg.seed, "null", region_id, draw). Returns one row per
    region with population and the null-model IS; callers correlate
    population vs IS. n_draws > 1 averages the IS over independent network
    draws, estimating the model-level IS rather than one realization's (a
    single draw carries ~1/sqrt(population) correlation noise).
    """
    recs = []
    for region_id, persons in regions:
        es = persons["es_raw"].to_numpy(dtype=float)
        vals = []
        for draw in range(n_draws):
            sub_cfg = HomophilyConfig(
                degree_per_person=cfg.degree_per_person, H=cfg.H,
                kernel=cfg.kernel, es_transform=cfg.es_transform,
                seed=int(derive_rng(cfg.seed, "null", region_id, draw).integers(2**62)))
            a, b = sample_edge_codes(es, sub_cfg)
            # integer-coded group build: both endpoints act as egos
            ego = np.concatenate([a, b])
            alter_y = np.concatenate([es[b], es[a]])
            uniq = np.unique(ego)
            remap = np.zeros(len(es), dtype=np.int64)
            remap[uniq] = np.arange(len(uniq))
            stats = segregation.GroupStats.from_arrays(
                uniq.astype(object), es[uniq], remap[ego], alter_y)
            vals.append(segregation.naive_corr(stats))
        recs.append((region_id, len(persons), float(np.mean(vals))))
    df = pd.DataFrame(recs, columns=["region_id", "population", "is_null"])
    if len(df) >= 2 and df["is_null"].notna().all():
        rho, p = spearmanr(df["population"], df["is_null"])
        df.attrs["spearman"] = float(rho)
        df.attrs["spearman_p"] = float(p)
    return df
