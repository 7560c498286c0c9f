import json

import numpy as np
import pandas as pd
import pytest

from mobseg.annotate import GeoLayer
from mobseg.geo import meters_per_degree
from mobseg.ingest import PingStore

LAT0, LON0 = 37.0, -122.0
M_LAT, M_LON = meters_per_degree(LAT0)


def xy_to_latlon(x_m, y_m):
    """Planar meters -> lat/lon anchored at the shared test origin."""
    return LAT0 + np.asarray(y_m, dtype=float) / M_LAT, LON0 + np.asarray(x_m, dtype=float) / M_LON


def store_from_rows(rows):
    """rows: (person_id, t, x_m, y_m[, accuracy])."""
    lat, lon = xy_to_latlon([r[2] for r in rows], [r[3] for r in rows])
    df = pd.DataFrame({
        "person_id": [r[0] for r in rows],
        "t": np.asarray([r[1] for r in rows], dtype=np.int64),
        "lat": lat,
        "lon": lon,
        "accuracy_m": [r[4] if len(r) > 4 else np.nan for r in rows],
    })
    return PingStore.from_dataframe(df)


def square_feature(fid, category, x0, y0, x1, y1, parent_id=None, attrs=None):
    lat, lon = xy_to_latlon([x0, x1, x1, x0], [y0, y0, y1, y1])
    rec = {"id": fid, "kind": "polygon", "category": category,
           "coords": [[float(lo), float(la)] for lo, la in zip(lon, lat)]}
    if parent_id:
        rec["parent_id"] = parent_id
    if attrs:
        rec["attrs"] = attrs
    return rec


def layer_from_records(records) -> GeoLayer:
    return GeoLayer([GeoLayer._feature_from_record(r) for r in records])


def write_layer(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    return path


@pytest.fixture
def two_tract_layer():
    """Two unit-km tracts side by side plus a region polygon."""
    recs = [
        square_feature("region0", "region", -100, -100, 2100, 1100),
        square_feature("t0", "tract", 0, 0, 1000, 1000),
        square_feature("t1", "tract", 1000, 0, 2000, 1000),
    ]
    return layer_from_records(recs)
