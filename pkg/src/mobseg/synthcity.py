"""Synthetic region generator: the test bed for desk-scale experiments.

A recipe pins a city's geometry (rectangular tracts tiling a square region),
its ES landscape (tract means plus within-tract spread), venues with a
controllable cross-venue ES differentiation, hubs in bridging / segregating /
random placements, and per-person ping behavior (stationary nights at home,
daytime venue visits chosen with ES-similarity weighting). Output files are
exactly the formats the pipeline consumes, plus a ground-truth JSON for
oracle comparisons. Generation is a pure function of the recipe.
"""

import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

from .geo import meters_per_degree
from .seeds import derive_rng

HUB_SIZE_M = 220.0
VENUE_SIZE_M = 60.0
NIGHT_HOURS = [18, 19, 20, 21, 22, 23, 0, 1, 2, 3, 4, 5, 6, 7, 8]


@dataclass
class CityRecipe:
    name: str = "city"
    population: int = 200
    n_tracts: int = 4
    tract_es_mode: str = "lognormal"   # lognormal | striped
    tract_es_center: float = 1500.0    # dollars/month
    tract_es_spread: float = 0.45      # sigma of log tract means
    stripe_low: float = 800.0
    stripe_high: float = 3000.0
    within_tract_sigma: float = 0.12   # sigma of log within-tract multiplier
    categories: dict = field(default_factory=lambda: {"restaurant": 8})
    venue_es_sigma: float = 0.3        # cross-venue visitor-ES differentiation
    venues_in_hubs: bool = False
    n_hubs: int = 4
    hub_placement: str = "random"      # bridging | segregating | random
    visit_gamma: float = 2.0           # venue-choice ES-similarity strength
    visit_radius_km: float = 30.0
    visits_per_day: int = 2
    days: int = 10
    night_pings_per_night: int = 6
    pings_per_visit: int = 2
    visit_stay_min: float = 30.0
    day_start_hour: int = 10
    day_end_hour: int = 17
    ping_noise_m: float = 10.0
    night_jitter_min: float = 0.0      # per-person phase shift of night pings
    accuracy_m: float = 10.0
    extent_km: float = 8.0
    origin_lat: float = 37.0
    origin_lon: float = -122.0
    utc_offset_hours: float = 0.0
    start_epoch: int = 1488326400      # midnight UTC
    with_roads: bool = False
    seed: int = 0

    def validate(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        for v in (self.tract_es_center, self.stripe_low, self.stripe_high):
            if v <= 0:
                raise ValueError("dollar quantities must be positive")
        if self.visits_per_day > 0 and sum(self.categories.values()) == 0:
            raise ValueError("visit model enabled but no venues configured")
        if self.n_tracts < 1 or self.n_hubs < 1:
            raise ValueError("need at least one tract and one hub")
        if self.hub_placement not in ("bridging", "segregating", "random"):
            raise ValueError("unknown hub placement: %s" % self.hub_placement)


class _Frame:
    """Planar meter coordinates anchored at the recipe origin."""

    def __init__(self, recipe: CityRecipe):
        self.m_lat, self.m_lon = meters_per_degree(recipe.origin_lat)
        self.lat0 = recipe.origin_lat
        self.lon0 = recipe.origin_lon

    def latlon(self, x_m, y_m):
        return self.lat0 + np.asarray(y_m) / self.m_lat, self.lon0 + np.asarray(x_m) / self.m_lon


def _tract_grid(recipe: CityRecipe):
    """Axis-aligned rectangles tiling the region square, row-major."""
    g = int(math.ceil(math.sqrt(recipe.n_tracts)))
    rows = int(math.ceil(recipe.n_tracts / g))
    L = recipe.extent_km * 1000.0
    w, h = L / g, L / rows
    cells = []
    for k in range(recipe.n_tracts):
        r, c = divmod(k, g)
        cells.append((c * w, r * h, (c + 1) * w, (r + 1) * h))
    return cells, g, rows


def _tract_means(recipe: CityRecipe, n_cols: int, rng) -> np.ndarray:
    if recipe.tract_es_mode == "striped":
        means = np.empty(recipe.n_tracts)
        for k in range(recipe.n_tracts):
            col = k % n_cols
            means[k] = recipe.stripe_low if col % 2 == 0 else recipe.stripe_high
        return means
    if recipe.tract_es_mode == "lognormal":
        z = rng.normal(0.0, 1.0, recipe.n_tracts)
        return recipe.tract_es_center * np.exp(recipe.tract_es_spread * z)
    raise ValueError("unknown tract_es_mode: %s" % recipe.tract_es_mode)


def _hub_positions(recipe: CityRecipe, n_cols: int, rng):
    """Hub centers in meters, per the placement regime."""
    L = recipe.extent_km * 1000.0
    col_w = L / n_cols
    k = recipe.n_hubs
    xs, ys = [], []
    if recipe.hub_placement == "random":
        for _ in range(k):
            xs.append(rng.uniform(0.1 * L, 0.9 * L))
            ys.append(rng.uniform(0.1 * L, 0.9 * L))
    elif recipe.hub_placement == "segregating":
        # one hub deep inside a column interior, cycling over columns;
        # stacked hubs spread evenly in y so every home has a nearby one
        rows = max(1, math.ceil(k / n_cols))
        for h in range(k):
            col = h % n_cols
            xs.append((col + 0.5) * col_w)
            ys.append((0.5 + (h // n_cols)) / rows * L)
    else:  # bridging: on the boundaries between adjacent columns
        n_bounds = max(1, n_cols - 1)
        rows = max(1, math.ceil(k / n_bounds))
        for h in range(k):
            b = h % n_bounds
            xs.append((b + 1) * col_w)
            ys.append((0.5 + (h // n_bounds)) / rows * L)
    return np.asarray(xs), np.asarray(ys)


def _square(cx, cy, size_m):
    s = size_m / 2.0
    return [(cx - s, cy - s), (cx + s, cy - s), (cx + s, cy + s), (cx - s, cy + s)]


def _poly_feature(frame, fid, category, corners_m, parent_id=None, attrs=None):
    lat, lon = frame.latlon(np.asarray([c[0] for c in corners_m]),
                            np.asarray([c[1] for c in corners_m]))
    rec = {"id": fid, "kind": "polygon", "category": category,
           "coords": [[float(lo), float(la)] for lo, la in zip(lon, lat)]}
    if parent_id is not None:
        rec["parent_id"] = parent_id
    if attrs:
        rec["attrs"] = attrs
    return rec


def _build_population(recipe: CityRecipe, city_rng):
    """Tract geometry plus per-person homes and ES draws."""
    cells, n_cols, _ = _tract_grid(recipe)
    tract_mean = _tract_means(recipe, n_cols, city_rng)
    n = recipe.population
    tract_of = np.arange(n) % recipe.n_tracts
    cell_arr = np.asarray(cells)
    prng = derive_rng(recipe.seed, "persons", recipe.name)
    x0, y0, x1, y1 = (cell_arr[tract_of, k] for k in range(4))
    mx, my = 0.05 * (x1 - x0), 0.05 * (y1 - y0)
    hx = x0 + mx + prng.random(n) * (x1 - x0 - 2 * mx)
    hy = y0 + my + prng.random(n) * (y1 - y0 - 2 * my)
    es_raw = tract_mean[tract_of] * np.exp(recipe.within_tract_sigma * prng.normal(size=n))
    es_raw = np.clip(es_raw, 50.0, 19500.0)  # stay under the winsor cap so linkage is exact
    return cells, n_cols, tract_mean, tract_of, hx, hy, es_raw


def sample_persons(recipe: CityRecipe) -> pd.DataFrame:
    """Persons-only draw from a recipe (no pings); used by the null models."""
    recipe.validate()
    frame = _Frame(recipe)
    city_rng = derive_rng(recipe.seed, "city", recipe.name)
    _, _, _, tract_of, hx, hy, es_raw = _build_population(recipe, city_rng)
    lat, lon = frame.latlon(hx, hy)
    return pd.DataFrame({
        "person_id": ["p%06d" % i for i in range(recipe.population)],
        "home_lat": lat, "home_lon": lon, "es_raw": es_raw,
        "home_tract_id": ["t%03d" % t for t in tract_of],
    })


def generate(recipe: CityRecipe, outdir: str) -> dict:
    """Write pings/properties/layers/ground-truth files for one region."""
    recipe.validate()
    os.makedirs(outdir, exist_ok=True)
    frame = _Frame(recipe)
    city_rng = derive_rng(recipe.seed, "city", recipe.name)
    L = recipe.extent_km * 1000.0

    cells, n_cols, tract_mean, tract_of, hx, hy, es_raw = _build_population(recipe, city_rng)
    tract_ids = ["t%03d" % k for k in range(recipe.n_tracts)]
    n = recipe.population
    person_ids = ["p%06d" % i for i in range(n)]
    home_lat, home_lon = frame.latlon(hx, hy)

    # hubs and venues
    hub_x, hub_y = _hub_positions(recipe, n_cols, city_rng)
    hub_ids = ["hub%03d" % h for h in range(recipe.n_hubs)]
    venues = []  # (id, category, x, y, parent, target_es)
    vid = 0
    for cat in sorted(recipe.categories):
        for _ in range(recipe.categories[cat]):
            if recipe.venues_in_hubs:
                h = vid % recipe.n_hubs
                vx = hub_x[h] + city_rng.uniform(-0.3, 0.3) * (HUB_SIZE_M - VENUE_SIZE_M)
                vy = hub_y[h] + city_rng.uniform(-0.3, 0.3) * (HUB_SIZE_M - VENUE_SIZE_M)
                parent = hub_ids[h]
            else:
                vx = city_rng.uniform(0.05 * L, 0.95 * L)
                vy = city_rng.uniform(0.05 * L, 0.95 * L)
                parent = None
            target = recipe.tract_es_center * math.exp(recipe.venue_es_sigma * city_rng.normal())
            venues.append(("v%04d" % vid, cat, vx, vy, parent, target))
            vid += 1

    pings = _simulate_pings(recipe, frame, hx, hy, es_raw, venues)

    # ---- files ----
    pings_path = os.path.join(outdir, "pings.csv")
    pings.to_csv(pings_path, index=False)

    props = pd.DataFrame({"lat": home_lat, "lon": home_lon, "rent": es_raw,
                          "kind": "residential"})
    props_path = os.path.join(outdir, "properties.csv")
    props.to_csv(props_path, index=False)

    layer_path = os.path.join(outdir, "layers.jsonl")
    with open(layer_path, "w") as fh:
        region_rec = _poly_feature(frame, recipe.name, "region",
                                   [(0, 0), (L, 0), (L, L), (0, L)])
        fh.write(json.dumps(region_rec, sort_keys=True) + "\n")
        for k, (x0, y0, x1, y1) in enumerate(cells):
            rec = _poly_feature(frame, tract_ids[k], "tract",
                                [(x0, y0), (x1, y0), (x1, y1), (x0, y1)],
                                attrs={"tract_income": float(tract_mean[k])})
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for h in range(recipe.n_hubs):
            rec = _poly_feature(frame, hub_ids[h], "hub", _square(hub_x[h], hub_y[h], HUB_SIZE_M))
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for vid_, cat, vx, vy, parent, _ in venues:
            rec = _poly_feature(frame, vid_, "poi:%s" % cat, _square(vx, vy, VENUE_SIZE_M), parent_id=parent)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if recipe.with_roads:
            lat_r, lon_r = frame.latlon(np.asarray([0.0, L]), np.asarray([0.35 * L, 0.35 * L]))
            rec = {"id": "road000", "kind": "polyline", "category": "road",
                   "coords": [[float(lon_r[0]), float(lat_r[0])], [float(lon_r[1]), float(lat_r[1])]]}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    truth = {
        "region": recipe.name,
        "recipe": asdict(recipe),
        "persons": {
            pid: {"home_lat": float(home_lat[i]), "home_lon": float(home_lon[i]),
                  "es_raw": float(es_raw[i]), "tract_id": tract_ids[tract_of[i]]}
            for i, pid in enumerate(person_ids)
        },
        "tract_means": {tract_ids[k]: float(tract_mean[k]) for k in range(recipe.n_tracts)},
        "venue_target_es": {v[0]: float(v[5]) for v in venues},
        "hubs": {hub_ids[h]: {"x_m": float(hub_x[h]), "y_m": float(hub_y[h])}
                 for h in range(recipe.n_hubs)},
    }
    truth_path = os.path.join(outdir, "ground_truth.json")
    with open(truth_path, "w") as fh:
        json.dump(truth, fh, sort_keys=True, indent=1)

    return {"pings": pings_path, "properties": props_path, "layers": layer_path,
            "ground_truth": truth_path, "truth": truth}


def _simulate_pings(recipe: CityRecipe, frame: _Frame, hx, hy, es_raw, venues) -> pd.DataFrame:
    """Nightly stationary pings at home plus daytime venue-visit pings."""
    n = len(hx)
    noise = recipe.ping_noise_m
    off = int(round(recipe.utc_offset_hours * 3600))
    idx = np.linspace(0, len(NIGHT_HOURS) - 1, max(1, recipe.night_pings_per_night)).astype(int)
    night_hours = np.asarray(sorted(set(NIGHT_HOURS[i] for i in idx)))

    v_x = np.asarray([v[2] for v in venues]) if venues else np.empty(0)
    v_y = np.asarray([v[3] for v in venues]) if venues else np.empty(0)
    v_es = np.asarray([v[5] for v in venues]) if venues else np.empty(0)
    es_scale = float(np.std(es_raw)) or 1.0
    radius_m = recipe.visit_radius_km * 1000.0
    window_s = (recipe.day_end_hour - recipe.day_start_hour) * 3600

    day0 = recipe.start_epoch
    night_grid = (day0 + np.arange(recipe.days)[:, None] * 86400
                  + night_hours[None, :] * 3600).ravel().astype(float)
    n_night = len(night_grid)
    n_visits = recipe.days * recipe.visits_per_day if len(venues) else 0
    n_vping = n_visits * recipe.pings_per_visit
    stride = recipe.visit_stay_min * 60.0 / max(1, recipe.pings_per_visit)

    pid_chunks, t_chunks, x_chunks, y_chunks = [], [], [], []
    for i in range(n):
        prng = derive_rng(recipe.seed, "pings", i)
        phase = prng.uniform(0.0, recipe.night_jitter_min * 60.0)
        t_night = night_grid + phase + prng.uniform(-60.0, 60.0, n_night)
        x_night = hx[i] + prng.normal(0.0, noise, n_night)
        y_night = hy[i] + prng.normal(0.0, noise, n_night)
        if n_vping:
            d2 = (v_x - hx[i]) ** 2 + (v_y - hy[i]) ** 2
            cand = np.flatnonzero(d2 <= radius_m * radius_m)
        if n_vping and len(cand):
            w = np.exp(-recipe.visit_gamma * np.abs(es_raw[i] - v_es[cand]) / es_scale)
            w = w / w.sum()
            choice = cand[prng.choice(len(cand), size=n_visits, p=w)]
            arrive = (day0 + np.repeat(np.arange(recipe.days), recipe.visits_per_day) * 86400
                      + recipe.day_start_hour * 3600 + prng.uniform(0.0, window_s, n_visits))
            t_visit = (arrive[:, None] + np.arange(recipe.pings_per_visit)[None, :] * stride).ravel()
            vv = np.repeat(choice, recipe.pings_per_visit)
            x_visit = v_x[vv] + prng.normal(0.0, noise, n_vping)
            y_visit = v_y[vv] + prng.normal(0.0, noise, n_vping)
            t_all = np.concatenate([t_night, t_visit])
            x_all = np.concatenate([x_night, x_visit])
            y_all = np.concatenate([y_night, y_visit])
        else:
            t_all, x_all, y_all = t_night, x_night, y_night
        pid_chunks.append(np.full(len(t_all), i, dtype=np.int64))
        t_chunks.append(t_all.astype(np.int64) - off)
        x_chunks.append(x_all)
        y_chunks.append(y_all)

    pid = np.concatenate(pid_chunks)
    lat, lon = frame.latlon(np.concatenate(x_chunks), np.concatenate(y_chunks))
    ids = np.array(["p%06d" % i for i in range(n)], dtype=object)
    df = pd.DataFrame({
        "person_id": ids[pid],
        "t": np.concatenate(t_chunks),
        "lat": lat, "lon": lon,
        "accuracy_m": recipe.accuracy_m,
    })
    return df.sort_values(["person_id", "t", "lat", "lon"], kind="mergesort").reset_index(drop=True)


def sweep(recipes, workdir: str, run_config=None) -> pd.DataFrame:
    """Generate each recipe, run the full pipeline, and tabulate headlines.

    One row per region: population, venue_count, venue-ES coefficient of
    variation, within-venue IS, overall IS, and the bridging index.
    """
    from . import pipeline  # local import; pipeline does not import synthcity

    rows = []
    for recipe in recipes:
        outdir = os.path.join(workdir, recipe.name)
        files = generate(recipe, outdir)
        summary = pipeline.run_region(files["pings"], files["properties"], files["layers"],
                                      outdir, run_config)
        rows.append({
            "region_id": recipe.name,
            "population": recipe.population,
            "venue_count": int(sum(recipe.categories.values())),
            "venue_cov": summary.get("venue_cov"),
            "venue_is": summary.get("venue_is"),
            "overall_is": summary.get("overall_is"),
            "bi": summary.get("bi"),
        })
    return pd.DataFrame(rows)
