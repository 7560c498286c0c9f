import numpy as np
import pandas as pd
import pytest

from mobseg import crossings, segregation
from mobseg.segregation import (EgoGroup, GroupStats, build_ego_groups, fit_mixed,
                                naive_corr, nsi)

from conftest import layer_from_records, square_feature, xy_to_latlon
from estimator_fixtures import make_groups, make_groups_with_y, subsample_groups


def test_fit_matches_statsmodels_reml():
    import statsmodels.api as sm

    rng = np.random.default_rng(0)
    groups = []
    rows_y, rows_x, rows_g = [], [], []
    for i in range(80):
        x = rng.normal()
        n_i = int(rng.integers(2, 9))
        ys = 0.7 * x + 0.3 + rng.normal(0, np.sqrt(0.5)) + rng.normal(0, np.sqrt(1.2), n_i)
        groups.append(EgoGroup("g%d" % i, x, ys))
        rows_y.extend(ys)
        rows_x.extend([x] * n_i)
        rows_g.extend([i] * n_i)

    est = fit_mixed(groups)
    # reference fit on the same (internally standardized) data
    xs = np.array([g.x for g in groups])
    mu, sd = xs.mean(), xs.std()
    exog = sm.add_constant((np.asarray(rows_x) - mu) / sd)
    mf = sm.MixedLM((np.asarray(rows_y) - mu) / sd, exog,
                    groups=np.asarray(rows_g)).fit(reml=True)
    assert est.a == pytest.approx(mf.fe_params[1], abs=1e-6)
    assert est.b == pytest.approx(mf.fe_params[0], abs=1e-6)
    assert est.var_u == pytest.approx(float(np.atleast_2d(np.asarray(mf.cov_re))[0, 0]), abs=1e-5)
    assert est.var_e == pytest.approx(mf.scale, abs=1e-6)
    assert est.reml_loglik == pytest.approx(mf.llf, abs=1e-6)
    assert est.converged


def test_recovers_analytic_rho():
    stats = make_groups(rho=0.6, n_egos=2000, n_alters=30, seed=1)
    est = fit_mixed(stats)
    assert est.converged
    assert abs(est.rho - 0.6) < 0.03
    assert est.rho == pytest.approx(est.a / np.sqrt(est.a ** 2 + est.var_u))


def test_perfect_segregation_limit():
    rng = np.random.default_rng(2)
    x = rng.normal(size=50)
    groups = [EgoGroup(str(i), x[i], np.full(5, x[i])) for i in range(50)]
    est = fit_mixed(groups)
    assert est.rho == pytest.approx(1.0, abs=1e-3)


def test_perfect_integration_limit():
    rng = np.random.default_rng(3)
    groups = [EgoGroup(str(i), rng.normal(), rng.normal(size=20)) for i in range(800)]
    est = fit_mixed(groups)
    assert abs(est.rho) < 0.08


def test_all_singleton_groups_unidentifiable():
    rng = np.random.default_rng(4)
    groups = [EgoGroup(str(i), rng.normal(), [rng.normal()]) for i in range(50)]
    est = fit_mixed(groups)
    assert not est.converged
    assert est.diagnostic is not None
    assert np.isnan(est.rho)


def test_zero_variance_x_error():
    groups = [EgoGroup("a", 1.0, [1.0, 2.0]), EgoGroup("b", 1.0, [2.0, 3.0])]
    with pytest.raises(ValueError):
        fit_mixed(groups)


def test_fewer_than_two_groups_error():
    with pytest.raises(ValueError):
        fit_mixed([EgoGroup("a", 1.0, [1.0])])


def test_rho_affine_invariant():
    stats = make_groups(rho=0.4, n_egos=300, n_alters=8, seed=5)
    est = fit_mixed(stats)
    scaled = GroupStats(stats.egos, 2.0 * stats.x + 3.0, stats.n_i,
                        2.0 * stats.ybar + 3.0, 4.0 * stats.ss)
    est2 = fit_mixed(scaled)
    assert abs(est.rho - est2.rho) < 1e-9


def test_reml_objective_local_optimality():
    stats = make_groups(rho=0.5, n_egos=400, n_alters=6, seed=6)
    est = fit_mixed(stats)
    # rebuild the profile objective and probe it at random lambda values
    x = (stats.x - stats.x.mean()) / stats.x.std()
    ybar = (stats.ybar - stats.x.mean()) / stats.x.std()
    ss = stats.ss / stats.x.std() ** 2
    n_i, n = stats.n_i, stats.n_i.sum()

    def profile_ll(lam):
        w = n_i / (1 + lam * n_i)
        sw, swx, swy = w.sum(), w @ x, w @ ybar
        swxx, swxy = w @ (x * x), w @ (x * ybar)
        det = swxx * sw - swx ** 2
        a = (swxy * sw - swx * swy) / det
        b = (swy - a * swx) / sw
        q = ss.sum() + w @ (ybar - a * x - b) ** 2
        return -0.5 * ((n - 2) * np.log(q) + np.log1p(lam * n_i).sum() + np.log(det))

    lam_hat = est.var_u / est.var_e
    best = profile_ll(lam_hat)
    rng = np.random.default_rng(7)
    probes = np.exp(rng.uniform(-12, 12, size=1000))
    assert all(profile_ll(lam) <= best + 1e-7 for lam in probes)


def test_naive_corr_trivials():
    groups = [EgoGroup(str(i), float(i), [float(i)] * 3) for i in range(5)]
    assert naive_corr(groups) == pytest.approx(1.0)
    anti = [EgoGroup(str(i), float(i), [-float(i)] * 3) for i in range(5)]
    assert naive_corr(anti) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        naive_corr(groups[:1])


def test_naive_downward_bias_mixed_unbiased():
    stats_full, y = make_groups_with_y(rho=0.6, n_egos=2000, n_alters=500, seed=8, sigma_e=1.5)
    gold = naive_corr(stats_full)
    small = subsample_groups(stats_full, y, k=5, seed=8)
    naive_small = naive_corr(small)
    mixed_small = fit_mixed(small).rho
    assert naive_small / gold < 0.9
    assert 0.95 < mixed_small / gold < 1.05


def test_nsi_trivials():
    # internally uniform tracts with different values -> exactly 1
    es = np.array([1.0, 1.0, 3.0, 3.0, 7.0, 7.0])
    tracts = np.array(["a", "a", "b", "b", "c", "c"])
    assert nsi(es, tracts) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        nsi(es, np.array(["a"] * 6))           # single tract
    with pytest.raises(ValueError):
        nsi(np.array([1.0, 2.0, 1.0, 2.0]), np.array(["a", "a", "b", "b"]))  # equal means


def test_build_ego_groups_matches_alter_multisets():
    rng = np.random.default_rng(9)
    ids = ["p%d" % i for i in range(12)]
    inter = pd.DataFrame({
        "i": rng.choice(ids[:6], 60),
        "j": rng.choice(ids[6:], 60),
        "t": np.arange(60, dtype=np.int64),
        "lat": 0.0, "lon": 0.0,
    })
    inter = inter[inter["i"] != inter["j"]]
    persons = pd.DataFrame({"person_id": ids, "es": rng.normal(size=12)})
    es_map = dict(zip(persons["person_id"], persons["es"]))
    for weighting in ("dedup_pairs", "count_repeats"):
        stats = build_ego_groups(inter, persons, weighting=weighting)
        reference = crossings.alter_multisets(inter, es_map, weighting)
        assert set(stats.egos) == set(reference)
        for ego, x, n, ybar in zip(stats.egos, stats.x, stats.n_i, stats.ybar):
            assert x == pytest.approx(es_map[ego])
            assert n == len(reference[ego])
            assert ybar == pytest.approx(np.mean(reference[ego]))


def _annotated_fixture(rng, n=300):
    ids = ["p%02d" % i for i in range(20)]
    df = pd.DataFrame({
        "i": rng.choice(ids, n), "j": rng.choice(ids, n),
        "t": rng.integers(0, 86400 * 3, n).astype(np.int64),
        "lat": 0.0, "lon": 0.0,
        "hour_bucket": rng.integers(0, 8, n),
        "poi_category": rng.choice(["restaurant", "park", None], n),
        "poi_id": None,
        "on_road": rng.random(n) < 0.2,
        "tract_context": rng.choice(["both_in_home_tract", "one_out", "both_out"], n),
        "at_home_i": False, "at_home_j": False,
    })
    df = df[df["i"] != df["j"]].reset_index(drop=True)
    persons = pd.DataFrame({"person_id": ids, "es": rng.normal(size=20)})
    return df, persons


def test_decompose_identity_filter_matches_unfiltered():
    rng = np.random.default_rng(10)
    ann, persons = _annotated_fixture(rng)
    est_all = fit_mixed(build_ego_groups(ann, persons))
    est_id = segregation.is_decomposed(ann, persons, lambda df: np.ones(len(df), bool))
    assert est_id.rho == pytest.approx(est_all.rho, nan_ok=True)


def test_decompose_empty_filter_errors():
    rng = np.random.default_rng(11)
    ann, persons = _annotated_fixture(rng)
    with pytest.raises(ValueError, match="no interactions match"):
        segregation.is_decomposed(ann, persons, lambda df: np.zeros(len(df), bool))


def test_decompose_filters_compose():
    rng = np.random.default_rng(12)
    ann, persons = _annotated_fixture(rng, n=600)
    pa = segregation.by_hour_bucket(int(ann["hour_bucket"].iloc[0]))
    pb = segregation.excluding_roads()
    seq = ann.loc[np.asarray(pa(ann))]
    seq = seq.loc[np.asarray(pb(seq))].reset_index(drop=True)
    both = ann.loc[np.asarray(pa(ann)) & np.asarray(pb(ann))].reset_index(drop=True)
    pd.testing.assert_frame_equal(seq, both)


def test_venue_stats():
    layer = layer_from_records([
        square_feature("v1", "poi:restaurant", 0, 0, 50, 50),
        square_feature("v2", "poi:restaurant", 5000, 0, 5050, 50),
        square_feature("v3", "poi:restaurant", 20000, 0, 20050, 50),
    ])
    hlat, hlon = xy_to_latlon([0.0, 100.0], [0.0, 0.0])
    persons = pd.DataFrame({
        "person_id": ["a", "b"],
        "home_lat": hlat, "home_lon": hlon,
        "es_raw": [1000.0, 3000.0],
    })
    ann = pd.DataFrame({
        "i": ["a", "b"], "j": ["b", "a"],
        "poi_id": ["v1", "v2"], "poi_category": ["restaurant", "restaurant"],
    })
    out = segregation.venue_stats(ann, persons, "restaurant", layer)
    # both persons visited both venues, so venue medians are equal -> cov 0
    assert out.venue_es == {"v1": 2000.0, "v2": 2000.0}
    assert out.cov == pytest.approx(0.0)
    # venues at 0, 5, and 20 km: two within the 10 km radius
    assert out.mean_venues_within_radius == pytest.approx(2.0)
    assert out.mean_dist_to_nearest_m < 200.0


def test_venue_stats_cov():
    layer = layer_from_records([
        square_feature("v1", "poi:bar", 0, 0, 50, 50),
        square_feature("v2", "poi:bar", 500, 0, 550, 50),
    ])
    persons = pd.DataFrame({
        "person_id": ["a", "b"],
        "home_lat": xy_to_latlon(0, 0)[0], "home_lon": xy_to_latlon(0, 0)[1],
        "es_raw": [1000.0, 3000.0],
    })
    ann = pd.DataFrame({"i": ["a", "b"], "j": ["x", "y"],
                        "poi_id": ["v1", "v2"], "poi_category": ["bar", "bar"]})
    out = segregation.venue_stats(ann, persons, "bar", layer)
    # venue medians 1000 and 3000: population std 1000, mean 2000
    assert out.cov == pytest.approx(0.5)


def test_venue_stats_absent_category():
    layer = layer_from_records([square_feature("v1", "poi:bar", 0, 0, 50, 50)])
    persons = pd.DataFrame({"person_id": ["a"], "home_lat": [0.0], "home_lon": [0.0],
                            "es_raw": [1000.0]})
    ann = pd.DataFrame({"i": [], "j": [], "poi_id": [], "poi_category": []})
    out = segregation.venue_stats(ann, persons, "casino", layer)
    assert out.venue_es == {} and out.cov is None


def test_connectedness():
    persons = pd.DataFrame({
        "person_id": ["a1", "a2", "b1", "b2", "c1"],
        "region_id": ["A", "A", "B", "B", "C"],
    })
    inter = pd.DataFrame({
        "i": ["a1", "a1", "a2", "a2", "b1"],
        "j": ["b1", "b2", "b1", "b2", "c1"],
    })
    out = segregation.connectedness(inter, persons).set_index(["region_a", "region_b"])
    assert out.loc[("A", "B"), "score"] == pytest.approx(1.0)  # complete bipartite
    assert out.loc[("B", "C"), "score"] == pytest.approx(1 / 2)
    assert ("A", "C") not in out.index  # no interactions -> 0 (absent)
