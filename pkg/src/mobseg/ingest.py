"""Ping ingestion: parsing, quality filters, and the per-person ping store.

Input format: CSV with header person_id,t,lat,lon,accuracy_m (accuracy may be
empty). Malformed rows are counted and skipped, never fatal; a missing
required column is a schema error.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

ACCURACY_MAX_M = 100.0   # drop pings estimated worse than this
MIN_PINGS = 500          # drop persons with fewer pings than this
DEDUP_OVERLAP_FRAC = 0.8  # drop a device when more than this fraction of its
                          # pings exactly matches another device's
DEDUP_COORD_DECIMALS = 6  # ~0.1 m; "identical" coordinates compared after rounding

REQUIRED_COLUMNS = ("person_id", "t", "lat", "lon")


class SchemaError(ValueError):
    pass


@dataclass
class Ping:
    person_id: str
    t: int
    lat: float
    lon: float
    accuracy_m: float = None

    def valid(self) -> bool:
        ok = (-90.0 <= self.lat <= 90.0) and (-180.0 <= self.lon <= 180.0) and self.t > 0
        if self.accuracy_m is not None:
            ok = ok and self.accuracy_m >= 0
        return ok


@dataclass
class RejectCounter:
    rows_read: int = 0
    rows_rejected: int = 0


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_rejected: int = 0
    persons_in: int = 0
    persons_out: int = 0
    notes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {"rows_read": self.rows_read, "rows_rejected": self.rows_rejected,
             "persons_in": self.persons_in, "persons_out": self.persons_out}
        d.update(self.notes)
        return json.dumps(d, sort_keys=True)


def parse_pings(reader, schema=None, counter: RejectCounter = None):
    """Yield valid Pings from a line-delimited CSV reader.

    schema maps the canonical names (person_id, t, lat, lon, accuracy_m) to
    the file's column names; by default columns are used as named. Rows that
    fail to parse or violate field invariants bump counter.rows_rejected.
    """
    schema = schema or {}
    counter = counter if counter is not None else RejectCounter()
    rows = csv.DictReader(reader)
    if rows.fieldnames is None:
        return
    colmap = {k: schema.get(k, k) for k in ("person_id", "t", "lat", "lon", "accuracy_m")}
    for k in REQUIRED_COLUMNS:
        if colmap[k] not in rows.fieldnames:
            raise SchemaError("missing required column: %s" % colmap[k])
    has_acc = colmap["accuracy_m"] in rows.fieldnames
    for row in rows:
        counter.rows_read += 1
        try:
            pid = row[colmap["person_id"]]
            t = int(float(row[colmap["t"]]))
            lat = float(row[colmap["lat"]])
            lon = float(row[colmap["lon"]])
            acc_raw = row[colmap["accuracy_m"]] if has_acc else None
            acc = float(acc_raw) if acc_raw not in (None, "") else None
        except (TypeError, ValueError, KeyError):
            counter.rows_rejected += 1
            continue
        ping = Ping(pid, t, lat, lon, acc)
        if not pid or not ping.valid():
            counter.rows_rejected += 1
            continue
        yield ping


def load_pings(path_or_buf, schema=None):
    """Vectorized CSV load with the same row semantics as parse_pings.

    Returns (DataFrame[person_id,t,lat,lon,accuracy_m], IngestReport with row
    counts filled in).
    """
    schema = schema or {}
    colmap = {k: schema.get(k, k) for k in ("person_id", "t", "lat", "lon", "accuracy_m")}
    df = pd.read_csv(path_or_buf, dtype={colmap["person_id"]: str}, low_memory=False)
    for k in REQUIRED_COLUMNS:
        if colmap[k] not in df.columns:
            raise SchemaError("missing required column: %s" % colmap[k])
    report = IngestReport(rows_read=len(df))
    out = pd.DataFrame({
        "person_id": df[colmap["person_id"]],
        "t": pd.to_numeric(df[colmap["t"]], errors="coerce"),
        "lat": pd.to_numeric(df[colmap["lat"]], errors="coerce"),
        "lon": pd.to_numeric(df[colmap["lon"]], errors="coerce"),
    })
    if colmap["accuracy_m"] in df.columns:
        out["accuracy_m"] = pd.to_numeric(df[colmap["accuracy_m"]], errors="coerce")
    else:
        out["accuracy_m"] = np.nan
    ok = (
        out["person_id"].notna() & (out["person_id"] != "")
        & out["t"].notna() & (out["t"] > 0)
        & out["lat"].between(-90.0, 90.0) & out["lon"].between(-180.0, 180.0)
    )
    # accuracy is optional, but a present negative value is invalid
    acc_src = df[colmap["accuracy_m"]] if colmap["accuracy_m"] in df.columns else None
    if acc_src is not None:
        present = acc_src.notna() & (acc_src.astype(str).str.strip() != "")
        ok &= ~present | (out["accuracy_m"] >= 0)
    report.rows_rejected = int((~ok).sum())
    out = out.loc[ok].reset_index(drop=True)
    out["t"] = out["t"].astype(np.int64)
    return out, report


def filter_accuracy(pings: pd.DataFrame, max_accuracy_m: float = ACCURACY_MAX_M) -> pd.DataFrame:
    """Keep pings with accuracy <= threshold; missing accuracy passes."""
    keep = pings["accuracy_m"].isna() | (pings["accuracy_m"] <= max_accuracy_m)
    return pings.loc[keep].reset_index(drop=True)


class PingStore:
    """Per-person, time-sorted ping arrays in one columnar block.

    Within a person, pings are sorted by (t, lat, lon). The store is immutable
    after construction; filters return new stores sharing no mutable state.
    """

    def __init__(self, person_ids, starts, t, lat, lon, accuracy_m):
        self.person_ids = list(person_ids)       # sorted unique ids
        self.starts = np.asarray(starts)         # len P+1 offsets into arrays
        self.t = np.asarray(t, dtype=np.int64)
        self.lat = np.asarray(lat, dtype=float)
        self.lon = np.asarray(lon, dtype=float)
        self.accuracy_m = np.asarray(accuracy_m, dtype=float)
        self._index = {pid: i for i, pid in enumerate(self.person_ids)}

    @classmethod
    def from_dataframe(cls, df: pd.DataFrame) -> "PingStore":
        df = df.sort_values(["person_id", "t", "lat", "lon"], kind="mergesort")
        ids, inverse = np.unique(df["person_id"].to_numpy(), return_inverse=True)
        counts = np.bincount(inverse, minlength=len(ids))
        starts = np.concatenate([[0], np.cumsum(counts)])
        acc = df["accuracy_m"].to_numpy(dtype=float) if "accuracy_m" in df else np.full(len(df), np.nan)
        return cls(ids.tolist(), starts, df["t"].to_numpy(), df["lat"].to_numpy(),
                   df["lon"].to_numpy(), acc)

    @property
    def n_persons(self) -> int:
        return len(self.person_ids)

    @property
    def n_pings(self) -> int:
        return len(self.t)

    def counts(self) -> np.ndarray:
        return np.diff(self.starts)

    def person_slice(self, pid: str) -> slice:
        i = self._index[pid]
        return slice(int(self.starts[i]), int(self.starts[i + 1]))

    def iter_persons(self):
        for i, pid in enumerate(self.person_ids):
            yield pid, slice(int(self.starts[i]), int(self.starts[i + 1]))

    def subset(self, keep_mask) -> "PingStore":
        """New store restricted to persons where keep_mask[i] is True."""
        keep_mask = np.asarray(keep_mask, dtype=bool)
        ids = [pid for pid, k in zip(self.person_ids, keep_mask) if k]
        row_mask = np.repeat(keep_mask, self.counts())
        counts = self.counts()[keep_mask]
        starts = np.concatenate([[0], np.cumsum(counts)])
        return PingStore(ids, starts, self.t[row_mask], self.lat[row_mask],
                         self.lon[row_mask], self.accuracy_m[row_mask])

    def to_dataframe(self) -> pd.DataFrame:
        pid = np.repeat(np.asarray(self.person_ids, dtype=object), self.counts())
        return pd.DataFrame({"person_id": pid, "t": self.t, "lat": self.lat,
                             "lon": self.lon, "accuracy_m": self.accuracy_m})


def filter_min_pings(store: PingStore, min_count: int = MIN_PINGS) -> PingStore:
    """Drop persons with fewer than min_count pings (strictly fewer)."""
    return store.subset(store.counts() >= min_count)


def dedup_devices(store: PingStore, overlap_frac: float = DEDUP_OVERLAP_FRAC):
    """Remove likely duplicate devices.

    Two pings are identical when (t, lat, lon) match after rounding coords to
    1e-6 degrees. When more than overlap_frac of one person's pings are
    identical to another person's, the person with fewer pings is removed
    (tie: the lexicographically larger id goes). Repeats until no violating
    pair remains among survivors. Returns (store, removed_ids).
    """
    scale = 10 ** DEDUP_COORD_DECIMALS
    lat_r = np.round(store.lat * scale).astype(np.int64)
    lon_r = np.round(store.lon * scale).astype(np.int64)
    person_of = np.repeat(np.arange(store.n_persons), store.counts())

    order = np.lexsort((lon_r, lat_r, store.t))
    t_s, la_s, lo_s = store.t[order], lat_r[order], lon_r[order]
    person_sorted = person_of[order]
    new_key = np.zeros(store.n_pings, dtype=bool)
    new_key[0] = True
    new_key[1:] = (np.diff(t_s) != 0) | (np.diff(la_s) != 0) | (np.diff(lo_s) != 0)
    # matches[p][q] = number of p's pings whose (t, lat, lon) occurs in q's pings
    matches = {}
    bounds = np.concatenate([np.flatnonzero(new_key), [store.n_pings]])
    lengths = np.diff(bounds)
    for gi in np.flatnonzero(lengths >= 2):
        grp = person_sorted[bounds[gi]:bounds[gi + 1]]
        persons, mult = np.unique(grp, return_counts=True)
        if len(persons) < 2:
            continue
        for a in range(len(persons)):
            for b in range(len(persons)):
                if a == b:
                    continue
                pair = (int(persons[a]), int(persons[b]))
                matches[pair] = matches.get(pair, 0) + int(mult[a])

    counts = store.counts()
    ids = store.person_ids
    alive = np.ones(store.n_persons, dtype=bool)
    changed = True
    while changed:
        changed = False
        flagged = []
        for (p, q), m in matches.items():
            if p < q and alive[p] and alive[q]:
                if m / counts[p] > overlap_frac or matches.get((q, p), 0) / counts[q] > overlap_frac:
                    flagged.append((ids[p], ids[q], p, q))
        for _, _, p, q in sorted(flagged, key=lambda f: (f[0], f[1])):
            if not (alive[p] and alive[q]):
                continue
            if counts[p] != counts[q]:
                victim = p if counts[p] < counts[q] else q
            else:
                victim = p if ids[p] > ids[q] else q
            alive[victim] = False
            changed = True

    removed = [ids[i] for i in range(store.n_persons) if not alive[i]]
    return store.subset(alive), removed


def write_pings_csv(df: pd.DataFrame, path):
    df = df.copy()
    df["accuracy_m"] = df["accuracy_m"].map(lambda v: "" if pd.isna(v) else repr(float(v)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["person_id", "t", "lat", "lon", "accuracy_m"])
        for row in df.itertuples(index=False):
            w.writerow([row.person_id, int(row.t), repr(float(row.lat)), repr(float(row.lon)), row.accuracy_m])


def parse_pings_to_dataframe(text: str, schema=None):
    """Reference path: run the streaming parser and collect into a DataFrame."""
    counter = RejectCounter()
    pings = list(parse_pings(io.StringIO(text), schema=schema, counter=counter))
    df = pd.DataFrame({
        "person_id": [p.person_id for p in pings],
        "t": np.asarray([p.t for p in pings], dtype=np.int64),
        "lat": [p.lat for p in pings],
        "lon": [p.lon for p in pings],
        "accuracy_m": [np.nan if p.accuracy_m is None else p.accuracy_m for p in pings],
    })
    return df, counter
