"""Run configuration shared by every pipeline stage.

Defaults reproduce the primary measure configuration: 100 m accuracy filter,
500-ping minimum, 50 m / 5 min join thresholds, 18:00-09:00 nights with the
50 m / 3 nights / 60% home rule, $20,000 winsorization, 100 m ES linkage,
pair-deduplicated alter weighting. Anything else is a robustness variant and
is warned about when active.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .crossings import JoinConfig


@dataclass
class RunConfig:
    # ingest
    accuracy_max_m: float = 100.0
    min_pings: int = 500
    dedup_overlap_frac: float = 0.8
    # homes and economic standing
    utc_offset_hours: float = 0.0
    night_start_hour: int = 18
    night_end_hour: int = 9
    home_move_thresh_m: float = 50.0
    home_min_nights: int = 3
    home_min_frac: float = 0.6
    max_gap_h: float = 6.0
    es_winsor_max: float = 20000.0
    es_link_max_dist_m: float = 100.0
    # interaction join
    dist_m: float = 50.0
    time_s: float = 300.0
    tie_strength: str = "any"          # any | consecutive:K | unique_days:K
    weighting: str = "dedup_pairs"     # dedup_pairs | count_repeats
    collapse_repeats: bool = True
    # estimation
    region: str = "all"
    es_column: str = "es"
    # randomness
    seed: int = 0

    _ROBUSTNESS_KEYS = ("dist_m", "time_s", "tie_strength", "weighting", "es_column")

    def join_config(self) -> JoinConfig:
        kind, k = "any", 1
        if ":" in self.tie_strength:
            kind, k_str = self.tie_strength.split(":", 1)
            k = int(k_str)
        elif self.tie_strength != "any":
            kind = self.tie_strength
            k = 2
        return JoinConfig(dist_m=self.dist_m, time_s=self.time_s, tie_kind=kind,
                          tie_k=k, weighting=self.weighting,
                          collapse_repeats=self.collapse_repeats)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def robustness_variants(self) -> list:
        """Names of knobs that differ from the primary-measure defaults."""
        defaults = RunConfig()
        return [k for k in self._ROBUSTNESS_KEYS
                if getattr(self, k) != getattr(defaults, k)]

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        with open(path) as fh:
            data = json.load(fh)
        data.update(overrides)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError("unknown config keys: %s" % ", ".join(sorted(unknown)))
        return cls(**data)
