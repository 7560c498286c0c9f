"""Segregation estimation from ego/alter economic standing.

The estimand is the Pearson correlation between a person's ES (x_i) and the
true mean ES of their interaction partners. Averaging a finite sample of
partners adds noise to that mean, which biases the plain sample correlation
toward zero, so the estimate comes from a random-intercept model

    y_ij = a * x_i + b + u_i + e_ij,   u_i ~ N(0, var_u),  e_ij ~ N(0, var_e)

fit by REML, with

    rho = a / sqrt(a^2 + var_u)

once x is standardized to unit variance. Because the model has a single
variance ratio lam = var_u / var_e, the restricted likelihood is profiled:
at fixed lam the GLS solution for (a, b) is a weighted least squares on the
group means with weights w_i = n_i / (1 + lam * n_i), and the scalar profile
is maximized over log lam by a bounded search. The fit uses only per-group
sufficient statistics (n_i, mean, within-group SS), so it scales to millions
of observations.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .geo import haversine_m

log = logging.getLogger(__name__)

LOG_LAMBDA_BOUND = 12.0
_BRACKET_EXPANSIONS = 3
_BISECT_STEPS = 60  # resolves log-lambda to ~2e-17, well inside the 1e-8 contract


@dataclass
class EgoGroup:
    ego: str
    x: float
    ys: np.ndarray

    def __post_init__(self):
        self.ys = np.asarray(self.ys, dtype=float)


@dataclass
class SegregationEstimate:
    rho: float
    a: float
    b: float
    var_u: float
    var_e: float
    n_egos: int
    n_obs: int
    reml_loglik: float
    converged: bool
    diagnostic: str = None
    region_id: str = None
    filter: str = None

    def to_dict(self) -> dict:
        return {
            "region_id": self.region_id, "rho": self.rho, "a": self.a, "b": self.b,
            "var_u": self.var_u, "var_e": self.var_e, "n_egos": self.n_egos,
            "n_obs": self.n_obs, "converged": self.converged, "filter": self.filter,
        }


class GroupStats:
    """Sufficient statistics for the mixed-model fit: one row per ego."""

    def __init__(self, egos, x, n_i, ybar, ss):
        self.egos = np.asarray(egos, dtype=object)
        self.x = np.asarray(x, dtype=float)
        self.n_i = np.asarray(n_i, dtype=float)
        self.ybar = np.asarray(ybar, dtype=float)
        self.ss = np.asarray(ss, dtype=float)

    def __len__(self):
        return len(self.x)

    @classmethod
    def from_groups(cls, groups) -> "GroupStats":
        egos = [g.ego for g in groups]
        x = [g.x for g in groups]
        n_i = [len(g.ys) for g in groups]
        if any(n == 0 for n in n_i):
            raise ValueError("ego group with empty alter list")
        ybar = [float(np.mean(g.ys)) for g in groups]
        ss = [float(np.sum((g.ys - np.mean(g.ys)) ** 2)) for g in groups]
        return cls(egos, x, n_i, ybar, ss)

    @classmethod
    def from_arrays(cls, ego_ids, ego_x, alter_codes, alter_y) -> "GroupStats":
        """Vectorized build from directed (ego, alter value) arrays.

        ego_ids/ego_x: one entry per distinct ego (code order). alter_codes:
        ego code per observation. alter_y: partner ES per observation.
        """
        n_e = len(ego_ids)
        n_i = np.bincount(alter_codes, minlength=n_e).astype(float)
        if np.any(n_i == 0):
            keep = n_i > 0
            idx = np.flatnonzero(keep)
            remap = -np.ones(n_e, dtype=np.int64)
            remap[idx] = np.arange(len(idx))
            return cls.from_arrays(np.asarray(ego_ids, dtype=object)[keep],
                                   np.asarray(ego_x, dtype=float)[keep],
                                   remap[alter_codes], alter_y)
        sums = np.bincount(alter_codes, weights=alter_y, minlength=n_e)
        ybar = sums / n_i
        resid = alter_y - ybar[alter_codes]
        ss = np.bincount(alter_codes, weights=resid * resid, minlength=n_e)
        return cls(ego_ids, ego_x, n_i, ybar, ss)


def _as_stats(groups) -> GroupStats:
    if isinstance(groups, GroupStats):
        return groups
    return GroupStats.from_groups(list(groups))


def fit_mixed(groups) -> SegregationEstimate:
    """REML fit of the random-intercept model; see the module docstring.

    x and y are re-standardized internally with one shared affine transform
    (x to mean 0, variance 1), so reported a, b, var_u, var_e are on that
    scale and rho is invariant to affine rescaling of all ES values.
    """
    st = _as_stats(groups)
    g = len(st)
    if g < 2:
        raise ValueError("need >= 2 ego groups")
    mu, sd = st.x.mean(), st.x.std()
    if sd == 0:
        raise ValueError("degenerate x: zero variance across egos")
    x = (st.x - mu) / sd
    ybar = (st.ybar - mu) / sd
    ss = st.ss / (sd * sd)
    n_i = st.n_i
    n = float(n_i.sum())

    if np.all(n_i == 1):
        # no within-group replication: the profile is flat in lambda
        return SegregationEstimate(
            rho=float("nan"), a=float("nan"), b=float("nan"),
            var_u=float("nan"), var_e=float("nan"), n_egos=g, n_obs=int(n),
            reml_loglik=float("nan"), converged=False,
            diagnostic="variance components unidentifiable: every ego has a single alter",
        )

    ss_total = float(ss.sum())

    def _gls(lam):
        w = n_i / (1.0 + lam * n_i)
        sw = w.sum()
        swx = float(w @ x)
        swy = float(w @ ybar)
        swxx = float(w @ (x * x))
        swxy = float(w @ (x * ybar))
        det = swxx * sw - swx * swx
        a = (swxy * sw - swx * swy) / det
        b = (swy - a * swx) / sw
        d = ybar - a * x - b
        q = ss_total + float(w @ (d * d))
        return a, b, q, det, w

    def dneg_dlam(loglam):
        # analytic derivative of the profiled objective w.r.t. lambda; the GLS
        # inner optimum makes the (a, b) dependence vanish (envelope theorem)
        lam = np.exp(loglam)
        a, b, q, det, w = _gls(lam)
        d = ybar - a * x - b
        w2 = w * w
        sw = w.sum()
        swx, swxx = float(w @ x), float(w @ (x * x))
        sw2, sw2x, sw2xx = w2.sum(), float(w2 @ x), float(w2 @ (x * x))
        tr = (sw * sw2xx - 2.0 * swx * sw2x + swxx * sw2) / det
        return -(n - 2.0) * float(w2 @ (d * d)) / max(q, 1e-300) + sw - tr

    # bracket the stationary point of the profile by the derivative sign,
    # expanding past [-12, 12] when the optimum runs against an edge
    lo, hi = -LOG_LAMBDA_BOUND, LOG_LAMBDA_BOUND
    converged = True
    diagnostic = None
    lower_collapse = False
    for _ in range(_BRACKET_EXPANSIONS):
        moved = False
        if dneg_dlam(lo) >= 0.0:
            lo -= LOG_LAMBDA_BOUND
            moved = True
        if dneg_dlam(hi) <= 0.0:
            hi += LOG_LAMBDA_BOUND
            moved = True
        if not moved:
            break
    if dneg_dlam(lo) >= 0.0:
        # rising from the lower edge everywhere we looked: var_u -> 0
        loglam = lo
        converged = False
        lower_collapse = True
    elif dneg_dlam(hi) <= 0.0:
        loglam = hi
        converged = False
        diagnostic = "profile optimum ran past the upper log-lambda bound %.0f" % hi
    else:
        # bisection on the derivative pins the optimum far inside the 1e-8
        # contract and is stable to last-ulp input perturbations, so rho is
        # affine-invariant to ~1e-12
        a_lo, a_hi = lo, hi
        for _ in range(_BISECT_STEPS):
            mid = 0.5 * (a_lo + a_hi)
            if dneg_dlam(mid) < 0.0:
                a_lo = mid
            else:
                a_hi = mid
        loglam = 0.5 * (a_lo + a_hi)

    lam = float(np.exp(loglam))
    a, b, q, det, _ = _gls(lam)
    var_e = q / (n - 2.0)
    var_u = lam * var_e
    ll = -0.5 * ((n - 2.0) * (1.0 + np.log(2.0 * np.pi) + np.log(max(q, 1e-300) / (n - 2.0)))
                 + float(np.log1p(lam * n_i).sum()) + np.log(det))

    if lower_collapse:
        # var_u collapsed to the lower boundary: no ego-level variance beyond
        # alter-sampling noise is detectable, so the disattenuated ratio is
        # 0/0-unstable (it saturates at +-1 on pure noise). The model reduces
        # to a fixed-effects regression on the group means, whose natural
        # correlation estimate is the plain Pearson r; report that, with
        # var_u backfilled so rho = a / sqrt(a^2 + var_u) still holds.
        if x.std() > 0 and ybar.std() > 0:
            r = float(np.corrcoef(x, ybar)[0, 1])
        else:
            r = 0.0
        diagnostic = ("no ego-level variance detected (profile at lower bound); "
                      "rho reported as the group-mean correlation")
        if r == 0.0 or a == 0.0:
            a = 0.0
            var_u = max(var_e, 1e-300)
            rho = 0.0
        else:
            if (r > 0) != (a > 0):
                a = -a
            var_u = a * a * (1.0 / (r * r) - 1.0)
            rho = r
        return SegregationEstimate(rho=float(rho), a=float(a), b=float(b),
                                   var_u=float(var_u), var_e=float(var_e),
                                   n_egos=g, n_obs=int(n), reml_loglik=float(ll),
                                   converged=False, diagnostic=diagnostic)

    denom = np.sqrt(a * a + var_u)
    rho = a / denom if denom > 0 else (1.0 if a >= 0 else -1.0)
    return SegregationEstimate(rho=float(rho), a=float(a), b=float(b),
                               var_u=float(var_u), var_e=float(var_e),
                               n_egos=g, n_obs=int(n), reml_loglik=float(ll),
                               converged=converged, diagnostic=diagnostic)


def naive_corr(groups) -> float:
    """Plain Pearson correlation of (x_i, mean of ys_i); downward biased with few alters."""
    st = _as_stats(groups)
    if len(st) < 2:
        raise ValueError("need >= 2 ego groups")
    x, m = st.x, st.ybar
    if x.std() == 0 or m.std() == 0:
        raise ValueError("zero variance input to correlation")
    return float(np.corrcoef(x, m)[0, 1])


def nsi(es, tract_ids) -> float:
    """Neighborhood sorting index: Pearson of (es_i, mean es of i's tract).

    The tract mean includes person i. Undefined (raises) with fewer than two
    occupied tracts or when all tract means coincide.
    """
    es = np.asarray(es, dtype=float)
    tract_ids = np.asarray(tract_ids, dtype=object)
    codes, uniq = pd.factorize(tract_ids)
    if len(uniq) < 2:
        raise ValueError("NSI undefined: fewer than 2 occupied tracts")
    sums = np.bincount(codes, weights=es)
    counts = np.bincount(codes)
    tract_mean = (sums / counts)[codes]
    if tract_mean.std() == 0:
        raise ValueError("NSI undefined: zero variance of tract means")
    if es.std() == 0:
        raise ValueError("NSI undefined: zero variance of ES")
    return float(np.corrcoef(es, tract_mean)[0, 1])


def build_ego_groups(inter: pd.DataFrame, persons: pd.DataFrame,
                     weighting: str = "dedup_pairs", egos=None,
                     es_col: str = "es") -> GroupStats:
    """Group builder used by every estimator entry point.

    Egos are persons with known ES and >= 1 surviving alter, optionally
    restricted to a resident set (partners outside it still contribute as
    alters). dedup_pairs counts each unique partner once; count_repeats once
    per interaction.
    """
    if weighting not in ("dedup_pairs", "count_repeats"):
        raise ValueError("unknown weighting: %s" % weighting)
    es_map = persons.set_index("person_id")[es_col].dropna()
    df = inter[["i", "j"]]
    if weighting == "dedup_pairs":
        df = df.drop_duplicates()
    i_es = df["i"].map(es_map)
    j_es = df["j"].map(es_map)
    ok = i_es.notna() & j_es.notna()
    df, i_es, j_es = df.loc[ok], i_es[ok].to_numpy(), j_es[ok].to_numpy()

    ego_ids = np.concatenate([df["i"].to_numpy(), df["j"].to_numpy()])
    ego_x = np.concatenate([i_es, j_es])
    alter_y = np.concatenate([j_es, i_es])
    if egos is not None:
        allowed = set(egos)
        keep = np.fromiter((e in allowed for e in ego_ids), dtype=bool, count=len(ego_ids))
        ego_ids, ego_x, alter_y = ego_ids[keep], ego_x[keep], alter_y[keep]
    if len(ego_ids) == 0:
        return GroupStats([], [], [], [], [])
    codes, uniq = pd.factorize(ego_ids, sort=True)
    first = np.zeros(len(uniq), dtype=np.int64)
    first[codes[::-1]] = np.arange(len(codes))[::-1]
    return GroupStats.from_arrays(uniq, ego_x[first], codes, alter_y)


def groups_to_list(stats: GroupStats, inter=None):
    """Debug helper: GroupStats rows as (ego, x, n, ybar) tuples."""
    return list(zip(stats.egos, stats.x, stats.n_i, stats.ybar))


# ---------------------------------------------------------------------------
# decomposition predicates over annotated interactions


def by_hour_bucket(bucket: int):
    return lambda df: df["hour_bucket"].to_numpy() == bucket


def by_poi_category(category: str):
    return lambda df: df["poi_category"].to_numpy() == category


def by_tract_context(context: str):
    return lambda df: df["tract_context"].to_numpy() == context


def excluding_roads():
    return lambda df: ~df["on_road"].to_numpy()


def inside_any_poi():
    return lambda df: pd.notna(df["poi_id"]).to_numpy()


def work_leisure():
    """Neither endpoint inside their home tract."""
    return lambda df: df["tract_context"].to_numpy() == "both_out"


def excluding_same_home():
    """Drop interactions where both sides are at their own homes (household proxy)."""
    return lambda df: ~(df["at_home_i"].to_numpy() & df["at_home_j"].to_numpy())


def is_decomposed(annotated: pd.DataFrame, persons: pd.DataFrame, predicate,
                  weighting: str = "dedup_pairs", egos=None,
                  filter_label: str = None) -> SegregationEstimate:
    """Refit the mixed model on the interactions selected by a predicate."""
    mask = np.asarray(predicate(annotated), dtype=bool)
    if mask.sum() == 0:
        raise ValueError("no interactions match the decomposition filter")
    stats = build_ego_groups(annotated.loc[mask], persons, weighting=weighting, egos=egos)
    est = fit_mixed(stats)
    est.filter = filter_label
    return est


# ---------------------------------------------------------------------------
# venue choice and differentiation statistics


@dataclass
class VenueStats:
    category: str
    venue_es: dict = field(default_factory=dict)  # venue id -> median visitor ES
    cov: float = None                             # population std/mean across venues
    mean_venues_within_radius: float = None
    mean_dist_to_nearest_m: float = None
    radius_m: float = 10_000.0


def venue_stats(annotated: pd.DataFrame, persons: pd.DataFrame, category: str,
                layer, radius_m: float = 10_000.0) -> VenueStats:
    """Differentiation and accessibility statistics for one venue category.

    A venue's ES is the median es_raw over its distinct visitors (persons
    with at least one interaction inside it). Accessibility counts category
    venues within radius_m of each resident's home; localization is the mean
    distance to the nearest one.
    """
    out = VenueStats(category=category, radius_m=radius_m)
    rows = annotated.loc[annotated["poi_category"] == category, ["poi_id", "i", "j"]]
    es_raw = persons.set_index("person_id")["es_raw"]
    if len(rows):
        visitors = pd.concat([
            rows[["poi_id", "i"]].rename(columns={"i": "person_id"}),
            rows[["poi_id", "j"]].rename(columns={"j": "person_id"}),
        ]).drop_duplicates()
        visitors["es_raw"] = visitors["person_id"].map(es_raw)
        visitors = visitors.dropna(subset=["es_raw"])
        med = visitors.groupby("poi_id")["es_raw"].median()
        out.venue_es = {str(k): float(v) for k, v in med.sort_index().items()}
        vals = np.asarray(list(out.venue_es.values()))
        if len(vals) and vals.mean() != 0:
            out.cov = float(vals.std() / vals.mean())
    cats = [f for f in layer.pois if f.category == "poi:%s" % category]
    if cats and len(persons):
        cent = np.asarray([f.ring.centroid() for f in cats])
        hl = persons["home_lat"].to_numpy()
        ho = persons["home_lon"].to_numpy()
        d = haversine_m(hl[:, None], ho[:, None], cent[None, :, 0], cent[None, :, 1])
        out.mean_venues_within_radius = float((d <= radius_m).sum(axis=1).mean())
        out.mean_dist_to_nearest_m = float(d.min(axis=1).mean())
    return out


def connectedness(inter: pd.DataFrame, persons: pd.DataFrame) -> pd.DataFrame:
    """Region-pair connectedness: unique interacting person pairs over n_a * n_b.

    Regions with zero persons are omitted. The result includes the diagonal
    (within-region pairs over n_a^2) and is symmetric by construction.
    """
    region_of = persons.set_index("person_id")["region_id"].dropna()
    pairs = inter[["i", "j"]].drop_duplicates()
    ra = pairs["i"].map(region_of)
    rb = pairs["j"].map(region_of)
    ok = ra.notna() & rb.notna()
    ra, rb = ra[ok].to_numpy(dtype=object), rb[ok].to_numpy(dtype=object)
    lo = np.minimum(ra, rb)
    hi = np.maximum(ra, rb)
    counts = pd.DataFrame({"region_a": lo, "region_b": hi}).value_counts().sort_index()
    sizes = region_of.value_counts()
    recs = []
    for (a, b), c in counts.items():
        recs.append((a, b, float(c) / (sizes[a] * sizes[b])))
    return pd.DataFrame(recs, columns=["region_a", "region_b", "score"])
