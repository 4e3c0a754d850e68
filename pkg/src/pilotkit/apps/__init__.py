from .bench import BenchRow, CSV_HEADER, bench_io, read_csv, rows_from_stats, write_csv
from .kmeans import (
    KMeansConfig,
    KMeansResult,
    assignments_for,
    generate_points,
    kmeans_iteration,
    run_kmeans,
)
from .wordcount import map_words, reduce_counts, run_wordcount
from .workload import WorkloadSpec, parse_workload, run_workload

__all__ = [
    "BenchRow",
    "CSV_HEADER",
    "bench_io",
    "read_csv",
    "rows_from_stats",
    "write_csv",
    "KMeansConfig",
    "KMeansResult",
    "assignments_for",
    "generate_points",
    "kmeans_iteration",
    "run_kmeans",
    "map_words",
    "reduce_counts",
    "run_wordcount",
    "WorkloadSpec",
    "parse_workload",
    "run_workload",
]
