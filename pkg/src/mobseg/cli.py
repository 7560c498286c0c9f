"""Command-line entry points.

Stages compose through a shared output directory: each subcommand reads the
files earlier stages wrote there. Exit codes: 0 ok, 1 usage, 2 data error,
3 convergence/diagnostic failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np
import pandas as pd

from . import annotate as annotate_mod
from . import bridging as bridging_mod
from . import nullmodels, pipeline, segregation, synthcity
from .config import RunConfig
from .ingest import SchemaError

log = logging.getLogger("mobseg")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CONVERGENCE = 3


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname, "name": record.name,
                           "msg": record.getMessage()}, sort_keys=True)


def _setup_logging(json_logs: bool):
    h = logging.StreamHandler()
    h.setFormatter(_JsonFormatter() if json_logs else logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.basicConfig(level=logging.INFO, handlers=[h], force=True)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    for kv in getattr(args, "set", None) or []:
        key, _, val = kv.partition("=")
        if not _:
            raise ValueError("--set expects key=value, got %r" % kv)
        field_types = {f.name: f.type for f in fields(RunConfig)}
        if key not in field_types:
            raise ValueError("unknown config key: %s" % key)
        current = getattr(cfg, key)
        if isinstance(current, bool):
            val = val.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            val = int(val)
        elif isinstance(current, float):
            val = float(val)
        setattr(cfg, key, val)
    for name in ("dist_m", "time_s", "tie_strength", "weighting", "region", "seed", "utc_offset_hours"):
        flag = getattr(args, name, None)
        if flag is not None:
            setattr(cfg, name, flag)
    return cfg


def _add_common(p):
    p.add_argument("--out", required=True, help="stage directory")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mobseg", description=__doc__)
    ap.add_argument("--json-logs", action="store_true", help="structured log lines")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", help="generate a synthetic region")
    p.add_argument("--recipe", help="JSON recipe file (CityRecipe fields)")
    p.add_argument("--population", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--name")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ingest", help="parse pings and apply quality filters")
    p.add_argument("--pings", required=True)
    _add_common(p)

    p = sub.add_parser("infer-homes", help="nighttime home inference")
    _add_common(p)

    p = sub.add_parser("link-es", help="attach rents, tracts, ES variants")
    p.add_argument("--properties", required=True)
    p.add_argument("--layers", required=True)
    _add_common(p)

    p = sub.add_parser("join", help="build the interaction network")
    p.add_argument("--dist-m", type=float, dest="dist_m")
    p.add_argument("--time-s", type=float, dest="time_s")
    p.add_argument("--tie-strength", dest="tie_strength",
                   help="any | consecutive:K | unique_days:K")
    p.add_argument("--weighting", choices=["dedup_pairs", "count_repeats"])
    _add_common(p)

    p = sub.add_parser("annotate", help="geographic/temporal interaction labels")
    p.add_argument("--layers", required=True)
    _add_common(p)

    p = sub.add_parser("segregate", help="mixed-model segregation estimate")
    p.add_argument("--region")
    p.add_argument("--weighting", choices=["dedup_pairs", "count_repeats"])
    _add_common(p)

    p = sub.add_parser("nsi", help="neighborhood sorting index")
    _add_common(p)

    p = sub.add_parser("decompose", help="segregation on a filtered network")
    p.add_argument("--by", choices=["hour", "poi-category", "tract-context", "road"])
    p.add_argument("--value", help="bucket / category / context value")
    p.add_argument("--robustness-matrix", action="store_true",
                   help="emit the full robustness-variant table")
    _add_common(p)

    p = sub.add_parser("bridge", help="bridging index for hub locations")
    p.add_argument("--hubs", help="layer file holding hub polygons (defaults to --layers)")
    p.add_argument("--layers")
    p.add_argument("--measure", choices=["gini", "variance"], default="gini")
    p.add_argument("--ablate-trials", type=int, default=0)
    p.add_argument("--seed", type=int)
    _add_common(p)

    p = sub.add_parser("nullmodel", help="counterfactual networks")
    nm = p.add_subparsers(dest="null_kind", required=True)
    ph = nm.add_parser("homophily")
    ph.add_argument("--degree", type=int, default=nullmodels.DEFAULT_DEGREE)
    ph.add_argument("--H", type=float, default=1.0)
    ph.add_argument("--kernel", choices=["linear", "softmax"], default="linear")
    ph.add_argument("--es-transform", choices=["raw", "percentile"], default="raw")
    ph.add_argument("--seed", type=int, default=0)
    _add_common(ph)
    pc = nm.add_parser("config-model")
    pc.add_argument("--seed", type=int, default=0)
    _add_common(pc)

    p = sub.add_parser("sweep", help="generate + run many synthetic regions")
    p.add_argument("--recipes", required=True, help="JSON list of recipe dicts")
    _add_common(p)

    p = sub.add_parser("report", help="merge per-region summaries into one CSV")
    p.add_argument("--regions", nargs="+", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("run", help="full pipeline on one region")
    p.add_argument("--pings", required=True)
    p.add_argument("--properties", required=True)
    p.add_argument("--layers", required=True)
    _add_common(p)
    return ap


def _cmd_synth(args) -> int:
    data = {}
    if args.recipe:
        with open(args.recipe) as fh:
            data = json.load(fh)
    for k in ("population", "seed", "name"):
        v = getattr(args, k)
        if v is not None:
            data[k] = v
    recipe = synthcity.CityRecipe(**data)
    files = synthcity.generate(recipe, args.out)
    log.info("synth region %s: %s", recipe.name, files["pings"])
    return EXIT_OK


def _cmd_run(args, cfg) -> int:
    summary = pipeline.run_region(args.pings, args.properties, args.layers, args.out, cfg)
    print(json.dumps(summary, sort_keys=True, indent=1))
    return EXIT_OK if summary.get("converged", True) else EXIT_CONVERGENCE


def _cmd_decompose(args, cfg) -> int:
    persons = pipeline.load_persons(args.out)
    ann = pipeline.load_interactions(args.out, annotated=True)
    if args.robustness_matrix:
        return _robustness_matrix(args, cfg, persons)
    if not args.by:
        raise ValueError("decompose needs --by or --robustness-matrix")
    preds = {
        "hour": lambda v: segregation.by_hour_bucket(int(v)),
        "poi-category": segregation.by_poi_category,
        "tract-context": segregation.by_tract_context,
        "road": lambda v: segregation.excluding_roads(),
    }
    label = "%s=%s" % (args.by, args.value)
    est = pipeline.stage_segregate(ann, persons, args.out, cfg,
                                   filter_label=label, predicate=preds[args.by](args.value))
    print(json.dumps(est.to_dict(), sort_keys=True, indent=1))
    return EXIT_OK if est.converged else EXIT_CONVERGENCE


_ROBUSTNESS_ROWS = [
    ("primary", {}),
    ("count_repeats", {"weighting": "count_repeats"}),
    ("es_percentile", {"es_column": "es_percentile"}),
    ("es_percentile_within_region", {"es_column": "es_percentile_within_region"}),
    ("dist_25m", {"dist_m": 25.0}),
    ("dist_10m", {"dist_m": 10.0}),
    ("time_120s", {"time_s": 120.0}),
    ("time_60s", {"time_s": 60.0}),
    ("consecutive_2", {"tie_strength": "consecutive:2"}),
    ("consecutive_3", {"tie_strength": "consecutive:3"}),
    ("unique_days_2", {"tie_strength": "unique_days:2"}),
    ("unique_days_3", {"tie_strength": "unique_days:3"}),
]
_ROBUSTNESS_FILTERS = [
    ("exclude_roads", segregation.excluding_roads),
    ("exclude_same_home", segregation.excluding_same_home),
    ("work_leisure", segregation.work_leisure),
    ("leisure_inside_poi", segregation.inside_any_poi),
]


def _robustness_matrix(args, cfg, persons) -> int:
    """Re-estimate under each variant; join-threshold variants re-run the join."""
    store = pipeline.load_store(args.out)
    layer_path = os.path.join(args.out, "layers.jsonl")
    layer = annotate_mod.GeoLayer.load(layer_path) if os.path.exists(layer_path) else None
    rows = []
    for name, overrides in _ROBUSTNESS_ROWS:
        vcfg = RunConfig.from_dict({**cfg.to_dict(), **overrides})
        rejoin = any(k in overrides for k in ("dist_m", "time_s", "tie_strength"))
        if rejoin:
            jc = vcfg.join_config()
            from . import crossings
            inter = crossings.join_indexed(store, jc)
            if jc.collapse_repeats:
                inter = crossings.collapse_repeat_windows(inter, jc.time_s)
            inter = crossings.apply_tie_strength(inter, jc, vcfg.utc_offset_hours)
        else:
            inter = pipeline.load_interactions(args.out, annotated=True)
        if vcfg.es_column != "es" and vcfg.es_column not in persons.columns:
            rows.append({"variant": name, "rho": None, "note": "es column unavailable"})
            continue
        egos = persons["person_id"].tolist()
        stats = segregation.build_ego_groups(inter, persons, weighting=vcfg.weighting,
                                             egos=egos, es_col=vcfg.es_column)
        try:
            est = segregation.fit_mixed(stats)
            rows.append({"variant": name, "rho": est.rho, "n_egos": est.n_egos,
                         "converged": est.converged})
        except ValueError as e:
            rows.append({"variant": name, "rho": None, "note": str(e)})
    ann = pipeline.load_interactions(args.out, annotated=True)
    for name, make_pred in _ROBUSTNESS_FILTERS:
        try:
            est = segregation.is_decomposed(ann, persons, make_pred(),
                                            weighting=cfg.weighting, filter_label=name)
            rows.append({"variant": name, "rho": est.rho, "n_egos": est.n_egos,
                         "converged": est.converged})
        except ValueError as e:
            rows.append({"variant": name, "rho": None, "note": str(e)})
    df = pd.DataFrame(rows)
    out_path = os.path.join(args.out, "robustness.csv")
    pipeline.write_csv(df, out_path, cfg)
    print(df.to_string(index=False))
    return EXIT_OK


def _cmd_nullmodel(args, cfg) -> int:
    persons = pipeline.load_persons(args.out)
    if args.null_kind == "homophily":
        hcfg = nullmodels.HomophilyConfig(degree_per_person=args.degree, H=args.H,
                                          kernel=args.kernel, es_transform=args.es_transform,
                                          seed=args.seed)
        edges = nullmodels.sample_homophily_network(persons, hcfg)
        is_naive = nullmodels.network_naive_is(edges, persons)
        est = nullmodels.network_segregation(edges, persons)
        out_path = os.path.join(args.out, "null_homophily.csv")
        pipeline.write_csv(edges, out_path, cfg)
        pipeline.write_json({"model": "homophily", "degree": args.degree, "H": args.H,
                             "kernel": args.kernel, "es_transform": args.es_transform,
                             "seed": args.seed, "edges": len(edges), "is": is_naive,
                             "is_mixed": est.rho, "mixed_converged": est.converged},
                            os.path.join(args.out, "null_homophily.json"), cfg)
    else:
        ann = pipeline.load_interactions(args.out, annotated=True)
        edges, flags = nullmodels.configuration_by_category(ann, seed=args.seed)
        is_naive = nullmodels.network_naive_is(edges, persons)
        out_path = os.path.join(args.out, "null_config_model.csv")
        pipeline.write_csv(edges, out_path, cfg)
        pipeline.write_json({"model": "config_by_category", "seed": args.seed,
                             "self_edges": flags, "edges": len(edges), "is": is_naive},
                            os.path.join(args.out, "null_config_model.json"), cfg)
    print(out_path)
    return EXIT_OK


def _dispatch(args) -> int:
    if args.cmd == "synth":
        return _cmd_synth(args)
    if args.cmd == "report":
        pipeline.report(args.regions, args.out, force=args.force)
        return EXIT_OK
    cfg = _load_config(args)
    if args.cmd == "run":
        return _cmd_run(args, cfg)
    if args.cmd == "sweep":
        with open(args.recipes) as fh:
            recipes = [synthcity.CityRecipe(**r) for r in json.load(fh)]
        df = synthcity.sweep(recipes, args.out, cfg)
        out_csv = os.path.join(args.out, "sweep.csv")
        df.to_csv(out_csv, index=False)
        print(out_csv)
        return EXIT_OK
    if args.cmd == "ingest":
        pipeline.stage_ingest(args.pings, args.out, cfg)
        return EXIT_OK
    if args.cmd == "infer-homes":
        store = pipeline.load_store(args.out)
        pipeline.stage_homes(store, args.out, cfg)
        return EXIT_OK
    if args.cmd == "link-es":
        persons = pipeline.read_csv(os.path.join(args.out, "homes.csv"), dtype={"person_id": str})
        layer = annotate_mod.GeoLayer.load(args.layers)
        persons = pipeline.stage_link_es(persons, args.properties, args.out, cfg)
        pipeline.stage_finalize_persons(persons, layer, args.out, cfg)
        return EXIT_OK
    if args.cmd == "join":
        store = pipeline.load_store(args.out)
        pipeline.stage_join(store, args.out, cfg)
        return EXIT_OK
    if args.cmd == "annotate":
        store_inter = pipeline.load_interactions(args.out)
        persons = pipeline.load_persons(args.out)
        layer = annotate_mod.GeoLayer.load(args.layers)
        pipeline.stage_annotate(store_inter, persons, layer, args.out, cfg)
        return EXIT_OK
    if args.cmd == "segregate":
        persons = pipeline.load_persons(args.out)
        ann = pipeline.load_interactions(args.out, annotated=os.path.exists(
            os.path.join(args.out, "annotated.csv")))
        est = pipeline.stage_segregate(ann, persons, args.out, cfg)
        print(json.dumps(est.to_dict(), sort_keys=True, indent=1))
        return EXIT_OK if est.converged else EXIT_CONVERGENCE
    if args.cmd == "nsi":
        persons = pipeline.load_persons(args.out)
        value = segregation.nsi(persons[cfg.es_column].to_numpy(),
                                persons["home_tract_id"].to_numpy())
        pipeline.write_json({"nsi": value}, os.path.join(args.out, "nsi.json"), cfg)
        print(json.dumps({"nsi": value}))
        return EXIT_OK
    if args.cmd == "decompose":
        return _cmd_decompose(args, cfg)
    if args.cmd == "bridge":
        persons = pipeline.load_persons(args.out)
        if not (args.hubs or args.layers):
            raise ValueError("bridge needs --hubs or --layers")
        layer = annotate_mod.GeoLayer.load(args.hubs or args.layers)
        if args.seed is not None:
            cfg.seed = args.seed
        out = pipeline.stage_bridge(persons, layer, args.out, cfg, measure=args.measure,
                                    ablate_trials=args.ablate_trials)
        print(json.dumps({k: v for k, v in out.items() if k != "ablation"},
                         sort_keys=True, indent=1))
        return EXIT_OK
    if args.cmd == "nullmodel":
        return _cmd_nullmodel(args, cfg)
    raise ValueError("unknown command %r" % args.cmd)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    _setup_logging(args.json_logs)
    try:
        return _dispatch(args)
    except (ValueError, KeyError, SchemaError, annotate_mod.LayerError) as e:
        log.error("%s", e)
        return EXIT_DATA
    except FileNotFoundError as e:
        log.error("%s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
