"""Toolkit for measuring everyday socioeconomic mixing from raw GPS ping streams.

Pipeline stages: ingest ping CSVs -> infer homes and economic standing ->
join pings into a proximity interaction network -> annotate interactions with
geography -> estimate segregation (mixed model), bridging indices, and
null-model baselines. Every stage is file-based and deterministic under a
fixed seed.
"""

__version__ = "0.1.0"
