"""File-based pipeline stages.

Every stage reads the previous stage's files and writes its own, so each
intermediate is inspectable and re-runnable. Stage outputs embed the config
hash (CSV: leading `# config_hash=` comment line; JSON: a config_hash key);
`report` refuses to merge regions whose hashes differ unless forced. Stage
outputs are byte-identical across runs with identical inputs and config.
"""

import json
import logging
import os

import numpy as np
import pandas as pd

from . import annotate as annotate_mod
from . import bridging as bridging_mod
from . import crossings, homes, ingest, segregation
from .config import RunConfig

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["region_id", "population", "venue_count", "venue_cov",
                  "venue_is", "overall_is", "nsi", "bi", "config_hash"]


class MissingStageError(FileNotFoundError):
    def __init__(self, path, stage):
        super().__init__("%s not found: run the %r stage first" % (path, stage))
        self.stage = stage


def _require(path, producing_stage):
    if not os.path.exists(path):
        raise MissingStageError(path, producing_stage)
    return path


def write_csv(df: pd.DataFrame, path, cfg: RunConfig):
    with open(path, "w") as fh:
        fh.write("# config_hash=%s\n" % cfg.hash())
        df.to_csv(fh, index=False)


def read_csv(path, **kwargs):
    return pd.read_csv(path, comment="#", **kwargs)


def read_config_hash(path) -> str:
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("# config_hash="):
        return first.strip().split("=", 1)[1]
    if first.lstrip().startswith("{"):
        with open(path) as fh:
            return json.load(fh).get("config_hash")
    return None


def write_json(obj: dict, path, cfg: RunConfig):
    obj = dict(obj)
    obj["config_hash"] = cfg.hash()
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)


def stage_ingest(pings_csv, outdir, cfg: RunConfig):
    """Parse + quality filters -> store.csv and ingest_report.json."""
    os.makedirs(outdir, exist_ok=True)
    df, report = ingest.load_pings(_require(pings_csv, "synth"))
    df = ingest.filter_accuracy(df, cfg.accuracy_max_m)
    store = ingest.PingStore.from_dataframe(df)
    report.persons_in = store.n_persons
    store = ingest.filter_min_pings(store, cfg.min_pings)
    store, removed = ingest.dedup_devices(store, cfg.dedup_overlap_frac)
    report.persons_out = store.n_persons
    report.notes["deduped_persons"] = len(removed)
    write_csv(store.to_dataframe(), os.path.join(outdir, "store.csv"), cfg)
    write_json(json.loads(report.to_json()), os.path.join(outdir, "ingest_report.json"), cfg)
    return store, report


def load_store(outdir) -> ingest.PingStore:
    df = read_csv(_require(os.path.join(outdir, "store.csv"), "ingest"),
                  dtype={"person_id": str})
    return ingest.PingStore.from_dataframe(df)


def stage_homes(store, outdir, cfg: RunConfig) -> pd.DataFrame:
    persons = homes.infer_homes(
        store, utc_offset_hours=cfg.utc_offset_hours,
        night_start=cfg.night_start_hour, night_end=cfg.night_end_hour,
        move_thresh_m=cfg.home_move_thresh_m, min_nights=cfg.home_min_nights,
        min_frac=cfg.home_min_frac, max_gap_h=cfg.max_gap_h,
    )
    write_csv(persons, os.path.join(outdir, "homes.csv"), cfg)
    return persons


def stage_link_es(persons, properties_csv, outdir, cfg: RunConfig) -> pd.DataFrame:
    props = read_csv(_require(properties_csv, "synth"))
    persons = homes.link_es(persons, props, max_dist_m=cfg.es_link_max_dist_m,
                            winsor_max=cfg.es_winsor_max)
    write_csv(persons, os.path.join(outdir, "persons_es.csv"), cfg)
    return persons


def stage_finalize_persons(persons, layer, outdir, cfg: RunConfig) -> pd.DataFrame:
    """Tract + region assignment and the standardized ES variants."""
    persons = homes.assign_tracts(persons, layer)
    if layer.regions:
        region_ids = layer.regions_containing(persons["home_lat"].to_numpy(),
                                              persons["home_lon"].to_numpy())
    else:
        region_ids = np.full(len(persons), "all", dtype=object)
    persons = homes.compute_es_variants(persons, region_ids=region_ids,
                                        tract_income=layer.tract_income() or None)
    write_csv(persons, os.path.join(outdir, "persons.csv"), cfg)
    return persons


def load_persons(outdir) -> pd.DataFrame:
    return read_csv(_require(os.path.join(outdir, "persons.csv"), "link-es"),
                    dtype={"person_id": str, "home_tract_id": str, "region_id": str})


def stage_join(store, outdir, cfg: RunConfig) -> pd.DataFrame:
    jc = cfg.join_config()
    inter = crossings.join_indexed(store, jc)
    raw_pairs = len(inter)
    if jc.collapse_repeats:
        inter = crossings.collapse_repeat_windows(inter, jc.time_s)
    inter = crossings.apply_tie_strength(inter, jc, cfg.utc_offset_hours)
    inter = crossings.assign_ordinals(inter)
    write_csv(inter, os.path.join(outdir, "interactions.csv"), cfg)
    write_json({"raw_ping_pairs": raw_pairs, "interactions": len(inter),
                "collapsed_same_window_repeats": bool(jc.collapse_repeats),
                "tie_strength": cfg.tie_strength},
               os.path.join(outdir, "join_meta.json"), cfg)
    return inter


def load_interactions(outdir, annotated=False) -> pd.DataFrame:
    name = "annotated.csv" if annotated else "interactions.csv"
    stage = "annotate" if annotated else "join"
    return read_csv(_require(os.path.join(outdir, name), stage),
                    dtype={"i": str, "j": str})


def stage_annotate(inter, persons, layer, outdir, cfg: RunConfig) -> pd.DataFrame:
    out = annotate_mod.annotate_all(inter, persons, layer, cfg.utc_offset_hours)
    write_csv(out, os.path.join(outdir, "annotated.csv"), cfg)
    return out


def _resident_ids(persons: pd.DataFrame, region: str):
    if region == "all" or "region_id" not in persons.columns:
        return persons["person_id"].tolist()
    return persons.loc[persons["region_id"] == region, "person_id"].tolist()


def stage_segregate(inter, persons, outdir, cfg: RunConfig, filter_label=None,
                    predicate=None) -> segregation.SegregationEstimate:
    """Fit the mixed model for the configured region; also store naive + NSI."""
    variants = cfg.robustness_variants()
    if variants:
        log.warning("robustness variant active: %s", ", ".join(variants))
    df = inter
    if predicate is not None:
        mask = np.asarray(predicate(df), dtype=bool)
        if mask.sum() == 0:
            raise ValueError("no interactions match the decomposition filter")
        df = df.loc[mask]
    egos = _resident_ids(persons, cfg.region)
    stats = segregation.build_ego_groups(df, persons, weighting=cfg.weighting,
                                         egos=egos, es_col=cfg.es_column)
    est = segregation.fit_mixed(stats)
    est.region_id = cfg.region
    est.filter = filter_label
    out = est.to_dict()
    try:
        out["naive_corr"] = segregation.naive_corr(stats)
    except ValueError:
        out["naive_corr"] = None
    sub = persons[persons["person_id"].isin(egos)]
    try:
        out["nsi"] = segregation.nsi(sub[cfg.es_column].to_numpy(),
                                     sub["home_tract_id"].to_numpy())
    except (ValueError, KeyError):
        out["nsi"] = None
    name = "estimate.json" if not filter_label else "estimate_%s.json" % filter_label.replace(":", "_").replace("=", "_")
    write_json(out, os.path.join(outdir, name), cfg)
    return est


def stage_bridge(persons, layer, outdir, cfg: RunConfig, measure="gini",
                 ablate_trials=0) -> dict:
    res = bridging_mod.hub_bridging_index(persons, layer, measure=measure)
    out = res.to_dict()
    if ablate_trials:
        region_ring = layer.regions[0].ring if layer.regions else None
        if region_ring is None:
            raise ValueError("ablation needs a region polygon in the layer")
        abl = bridging_mod.ablate_random_hubs(persons, len(res.hub_ids), region_ring,
                                              trials=ablate_trials, seed=cfg.seed,
                                              measure=measure)
        out["ablation"] = {"trials": ablate_trials, "mean": abl["mean"],
                           "p95": float(np.percentile(abl["bi"], 95)),
                           "values": [float(v) for v in abl["bi"]]}
    write_json(out, os.path.join(outdir, "bridging.json"), cfg)
    return out


def run_region(pings_csv, properties_csv, layers_path, outdir, cfg: RunConfig = None) -> dict:
    """Full chain on one region; returns the headline summary row."""
    cfg = cfg or RunConfig()
    os.makedirs(outdir, exist_ok=True)
    layer = annotate_mod.GeoLayer.load(_require(layers_path, "synth"))
    store, _ = stage_ingest(pings_csv, outdir, cfg)
    persons = stage_homes(store, outdir, cfg)
    persons = stage_link_es(persons, properties_csv, outdir, cfg)
    persons = stage_finalize_persons(persons, layer, outdir, cfg)
    inter = stage_join(store, outdir, cfg)
    ann = stage_annotate(inter, persons, layer, outdir, cfg)

    overall = stage_segregate(ann, persons, outdir, cfg)
    region_id = cfg.region
    if region_id == "all" and layer.regions:
        region_id = layer.regions[0].id
    summary = {
        "region_id": region_id,
        "population": int(len(persons)),
        "overall_is": overall.rho,
        "converged": overall.converged,
        "config_hash": cfg.hash(),
    }
    try:
        venue_est = stage_segregate(ann, persons, outdir, cfg, filter_label="inside_poi",
                                    predicate=segregation.inside_any_poi())
        summary["venue_is"] = venue_est.rho
    except ValueError:
        summary["venue_is"] = None
    cats = sorted(set(c for c in ann["poi_category"].dropna().unique()))
    covs = []
    n_venues = 0
    for cat in cats:
        vs = segregation.venue_stats(ann, persons, cat, layer)
        if vs.cov is not None:
            covs.append(vs.cov)
        n_venues += len(vs.venue_es)
    summary["venue_cov"] = float(np.mean(covs)) if covs else None
    summary["venue_count"] = n_venues
    try:
        summary["nsi"] = segregation.nsi(persons["es"].to_numpy(),
                                         persons["home_tract_id"].to_numpy())
    except ValueError:
        summary["nsi"] = None
    try:
        summary["bi"] = stage_bridge(persons, layer, outdir, cfg)["bi"]
    except ValueError:
        summary["bi"] = None
    write_json(summary, os.path.join(outdir, "summary.json"), cfg)
    return summary


def report(region_dirs, out_csv, force=False) -> pd.DataFrame:
    """Merge per-region summary JSONs into one CSV with the sweep schema."""
    rows = []
    hashes = set()
    for d in region_dirs:
        path = _require(os.path.join(d, "summary.json"), "run")
        with open(path) as fh:
            s = json.load(fh)
        hashes.add(s.get("config_hash"))
        rows.append({k: s.get(k) for k in REPORT_COLUMNS})
    if len(hashes) > 1 and not force:
        raise ValueError("config hash mismatch across regions: %s" % sorted(hashes))
    df = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    df.to_csv(out_csv, index=False)
    return df
