import filecmp
import json
import os
import shutil

import pandas as pd
import pytest

from mobseg import cli, pipeline, synthcity
from mobseg.config import RunConfig
from mobseg.synthcity import CityRecipe


@pytest.fixture(scope="module")
def region(tmp_path_factory):
    out = tmp_path_factory.mktemp("region")
    recipe = CityRecipe(name="cli_city", population=70, n_tracts=4, days=4,
                        night_pings_per_night=6, visits_per_day=2,
                        categories={"restaurant": 5}, n_hubs=2, extent_km=4.0,
                        visit_radius_km=10.0, seed=5)
    files = synthcity.generate(recipe, str(out))
    return out, files


def _run(argv):
    return cli.main(argv)


CFG_ARGS = ["--set", "min_pings=30"]


def test_stagewise_cli_composition(region):
    out, files = region
    o = str(out)
    assert _run(["ingest", "--pings", files["pings"], "--out", o] + CFG_ARGS) == 0
    assert _run(["infer-homes", "--out", o] + CFG_ARGS) == 0
    assert _run(["link-es", "--properties", files["properties"],
                 "--layers", files["layers"], "--out", o] + CFG_ARGS) == 0
    assert _run(["join", "--out", o] + CFG_ARGS) == 0
    assert _run(["annotate", "--layers", files["layers"], "--out", o] + CFG_ARGS) == 0
    rc = _run(["segregate", "--out", o] + CFG_ARGS)
    assert rc in (0, 3)
    assert _run(["nsi", "--out", o] + CFG_ARGS) == 0
    assert _run(["bridge", "--layers", files["layers"], "--out", o,
                 "--ablate-trials", "20", "--seed", "4"] + CFG_ARGS) == 0
    rc = _run(["decompose", "--by", "tract-context", "--value", "both_out",
               "--out", o] + CFG_ARGS)
    assert rc in (0, 3)
    assert _run(["nullmodel", "homophily", "--degree", "5", "--seed", "2",
                 "--out", o] + CFG_ARGS) == 0
    assert _run(["nullmodel", "config-model", "--seed", "2", "--out", o] + CFG_ARGS) == 0
    for name in ("store.csv", "persons.csv", "interactions.csv", "annotated.csv",
                 "estimate.json", "nsi.json", "bridging.json", "null_homophily.csv",
                 "null_config_model.csv"):
        assert os.path.exists(os.path.join(o, name)), name


def test_stage_idempotent(region, tmp_path):
    out, files = region
    o = str(out)
    before = tmp_path / "interactions_before.csv"
    shutil.copy(os.path.join(o, "interactions.csv"), before)
    assert _run(["join", "--out", o] + CFG_ARGS) == 0
    assert filecmp.cmp(str(before), os.path.join(o, "interactions.csv"), shallow=False)


def test_outputs_embed_config_hash(region):
    out, _ = region
    h = pipeline.read_config_hash(os.path.join(str(out), "interactions.csv"))
    cfg = RunConfig(min_pings=30)
    assert h == cfg.hash()
    with open(os.path.join(str(out), "estimate.json")) as fh:
        assert json.load(fh)["config_hash"] == cfg.hash()


def test_missing_upstream_is_data_error(tmp_path):
    rc = _run(["join", "--out", str(tmp_path)])
    assert rc == 2


def test_usage_error_exit_code():
    assert _run(["definitely-not-a-command"]) == 1
    assert _run([]) == 1


def test_robustness_matrix(region):
    out, _ = region
    o = str(out)
    assert _run(["decompose", "--robustness-matrix", "--out", o] + CFG_ARGS) == 0
    df = pipeline.read_csv(os.path.join(o, "robustness.csv"))
    assert "primary" in df["variant"].tolist()
    assert len(df) >= 12


def test_report_merges_and_checks_hashes(region, tmp_path):
    out, files = region
    o = str(out)
    # build one full summary with the pipeline API
    cfg = RunConfig(min_pings=30)
    pipeline.run_region(files["pings"], files["properties"], files["layers"], o, cfg)
    out_csv = str(tmp_path / "report.csv")
    assert _run(["report", "--regions", o, "--out", out_csv]) == 0
    df = pd.read_csv(out_csv)
    assert list(df.columns) == pipeline.REPORT_COLUMNS
    assert len(df) == 1
    # a second region with a different config hash is refused without --force
    other = str(tmp_path / "other")
    shutil.copytree(o, other)
    with open(os.path.join(other, "summary.json")) as fh:
        s = json.load(fh)
    s["config_hash"] = "deadbeef"
    with open(os.path.join(other, "summary.json"), "w") as fh:
        json.dump(s, fh)
    assert _run(["report", "--regions", o, other, "--out", out_csv]) == 2
    assert _run(["report", "--regions", o, other, "--out", out_csv, "--force"]) == 0


def test_run_subcommand(tmp_path):
    recipe_path = str(tmp_path / "recipe.json")
    with open(recipe_path, "w") as fh:
        json.dump({"name": "runcity", "population": 50, "n_tracts": 4, "days": 4,
                   "night_pings_per_night": 6, "visits_per_day": 1,
                   "categories": {"restaurant": 4}, "n_hubs": 2,
                   "extent_km": 3.0, "visit_radius_km": 8.0, "seed": 9}, fh)
    o = str(tmp_path / "city")
    assert _run(["synth", "--recipe", recipe_path, "--out", o]) == 0
    rc = _run(["run", "--pings", os.path.join(o, "pings.csv"),
               "--properties", os.path.join(o, "properties.csv"),
               "--layers", os.path.join(o, "layers.jsonl"),
               "--out", o] + CFG_ARGS)
    assert rc in (0, 3)
    assert os.path.exists(os.path.join(o, "summary.json"))
