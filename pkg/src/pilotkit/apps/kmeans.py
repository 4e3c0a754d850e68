"""KMeans clustering on the in-memory engine.

Map assigns every point to its nearest centroid (squared Euclidean
distance, lowest index wins ties); reduce recomputes each centroid as
the mean of its members and reports the cluster's squared-distance sum.
Centroids travel to the workers as a broadcast.

Determinism: assignment uses the same vectorized distance expression on
every worker, reduce consumes members in global point order, and the
driver folds cluster results in index order, so a fixed (config, seed)
yields bit-identical centroids on any backend, partitioning or worker
count.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatchError, PilotError, ValidationError
from ..memory import BatchMapFunction
from ..memory.encoding import encode_tuples
from .bench import BenchRow, rows_from_stats

BACKENDS = ("memory", "file")

# Rows x clusters budget per distance chunk, to bound the (rows, k, d)
# intermediate while keeping numpy batches large.
_CHUNK_CELLS = 2_000_000

_HDR = struct.Struct("<Qd")  # point index, squared distance
_STATS = struct.Struct("<Qd")  # member count, wcss contribution


@dataclass
class KMeansConfig:
    """Everything a run needs; validate() before use."""

    n_points: int
    n_clusters: int
    n_dims: int = 2
    max_iterations: int = 10
    epsilon: float = 0.0
    seed: int = 0
    backend: str = "memory"
    n_partitions: int = 4
    n_reducers: int = 2


def validate_config(config: KMeansConfig) -> KMeansConfig:
    errors = []
    for name in ("n_points", "n_clusters", "n_dims", "max_iterations",
                 "n_partitions", "n_reducers"):
        value = getattr(config, name)
        if not isinstance(value, int) or value < 1:
            errors.append(f"{name} must be an integer >= 1")
    if isinstance(config.n_clusters, int) and isinstance(config.n_points, int):
        if config.n_clusters > config.n_points:
            errors.append("n_clusters must be <= n_points")
    if not isinstance(config.epsilon, (int, float)) or (
        isinstance(config.epsilon, float) and math.isnan(config.epsilon)
    ) or config.epsilon < 0:
        errors.append("epsilon must be >= 0")
    if config.backend not in BACKENDS:
        errors.append(f"backend must be one of {list(BACKENDS)}")
    if not isinstance(config.seed, int):
        errors.append("seed must be an integer")
    if errors:
        raise ValidationError(errors)
    return config


def generate_points(n_points, n_dims, seed) -> np.ndarray:
    """Uniform points in the unit hypercube, pinned to the seed."""
    rng = np.random.default_rng(seed)
    return rng.random((n_points, n_dims), dtype=np.float64)


def assignments_for(points, centroids):
    """Nearest centroid per point: (assignments, squared distances).

    This single expression is the reference for every consumer; ties go
    to the lowest centroid index by argmin semantics.
    """
    if points.shape[1] != centroids.shape[1]:
        raise DimensionMismatchError(
            f"points have {points.shape[1]} dims, centroids {centroids.shape[1]}"
        )
    n, k = len(points), len(centroids)
    d = points.shape[1]
    assign = np.empty(n, dtype=np.int64)
    sqdist = np.empty(n, dtype=np.float64)
    rows = max(1, _CHUNK_CELLS // max(k, 1))
    for start in range(0, n, rows):
        chunk = points[start:start + rows]
        # Left fold over dimensions: same subtractions, products and
        # addition order as (diff * diff).sum(axis=2) on the full
        # (rows, k, d) block, but each step is one contiguous pass.
        d2 = None
        for j in range(d):
            diff = chunk[:, j, None] - centroids[None, :, j]
            diff *= diff
            if d2 is None:
                d2 = diff
            else:
                d2 += diff
        a = np.argmin(d2, axis=1)
        assign[start:start + rows] = a
        sqdist[start:start + rows] = d2[np.arange(len(chunk)), a]
    return assign, sqdist


class KMeansMap(BatchMapFunction):
    """Assigns a partition of points in one numpy pass.

    Emits exactly one tuple per point: key is the centroid index
    (big-endian u32), value is (point index, squared distance, point).
    """

    def __init__(self, engine, centroids_ref, n_dims):
        self.engine = engine
        self.centroids_ref = centroids_ref
        self.n_dims = n_dims

    def process_batch(self, keys, values):
        d = self.n_dims
        centroids = np.frombuffer(
            self.engine.get_broadcast(self.centroids_ref), dtype=np.float64
        ).reshape(-1, d)
        n = len(keys)
        if n == 0:
            return [], [], None
        points = np.frombuffer(b"".join(values), dtype=np.float64)
        if points.size != n * d:
            raise DimensionMismatchError(
                f"expected {n} points x {d} dims, got {points.size} floats"
            )
        points = points.reshape(n, d)
        indices = np.frombuffer(b"".join(keys), dtype=">u8")
        assign, sqdist = assignments_for(points, centroids)

        # Keys repeat from at most k distinct clusters; share one bytes
        # object per cluster instead of slicing n of them.
        table_blob = np.arange(len(centroids), dtype=">u4").tobytes()
        key_table = [table_blob[4 * c:4 * c + 4] for c in range(len(centroids))]
        out_keys = list(map(key_table.__getitem__, assign.tolist()))
        width = _HDR.size + d * 8
        blob = np.empty((n, width), dtype=np.uint8)
        header = np.empty(n, dtype=[("idx", "<u8"), ("sq", "<f8")])
        header["idx"] = indices
        header["sq"] = sqdist
        blob[:, :_HDR.size] = header.view(np.uint8).reshape(n, _HDR.size)
        blob[:, _HDR.size:] = np.ascontiguousarray(points).view(np.uint8).reshape(n, d * 8)
        raw = blob.tobytes()
        out_values = [raw[i * width:(i + 1) * width] for i in range(n)]
        return out_keys, out_values, None


def kmeans_reduce(key, values):
    """Fold one cluster: mean centroid, stats, member list.

    Values arrive in global point order, so the sums are reproducible.
    """
    n = len(values)
    width = len(values[0])
    arr = np.frombuffer(b"".join(values), dtype=np.uint8).reshape(n, width)
    header = arr[:, :_HDR.size].copy().view([("idx", "<u8"), ("sq", "<f8")]).reshape(n)
    points = arr[:, _HDR.size:].copy().view(np.float64).reshape(n, -1)
    centroid = points.sum(axis=0) / n
    yield b"c" + key, centroid.tobytes()
    yield b"s" + key, _STATS.pack(n, float(header["sq"].sum()))
    yield b"a" + key, header["idx"].tobytes()


@dataclass
class IterationResult:
    centroids: np.ndarray
    wcss: float
    assignments: np.ndarray
    output: object  # the InMemoryDataUnit holding the reduce emissions
    stats: object


def kmeans_iteration(engine, points, centroids, n_reducers=2,
                     n_points=None) -> IterationResult:
    """One Lloyd step over a loaded point set.

    Empty clusters keep their previous centroid; the point-conservation
    invariant (every point lands in exactly one cluster) is checked.
    """
    k, d = centroids.shape
    n_points = points.total_records if n_points is None else n_points
    ref = engine.broadcast(np.ascontiguousarray(centroids).tobytes())
    try:
        out = engine.map_reduce(
            points, KMeansMap(engine, ref, d), kmeans_reduce, n_reducers
        )
    finally:
        engine.release_broadcast(ref)

    new_centroids = centroids.copy()
    assignments = np.full(n_points, -1, dtype=np.int64)
    counts = np.zeros(k, dtype=np.int64)
    wcss_parts = np.zeros(k, dtype=np.float64)
    for rkey, rvalue in engine.collect(out):
        tag, j = rkey[:1], int.from_bytes(rkey[1:], "big")
        if j >= k:
            raise PilotError(f"reduce emitted cluster {j} for k={k}")
        if tag == b"c":
            new_centroids[j] = np.frombuffer(rvalue, dtype=np.float64)
        elif tag == b"s":
            counts[j], wcss_parts[j] = _STATS.unpack(rvalue)
        elif tag == b"a":
            members = np.frombuffer(rvalue, dtype="<u8").astype(np.int64)
            assignments[members] = j
    if int(counts.sum()) != n_points:
        raise PilotError(
            f"point conservation violated: {int(counts.sum())} of {n_points} "
            "points accounted for"
        )
    return IterationResult(
        centroids=new_centroids,
        wcss=float(wcss_parts.sum()),
        assignments=assignments,
        output=out,
        stats=out.job_stats,
    )


def points_to_records(points) -> list:
    """(big-endian u64 index, raw float64 vector) per point."""
    n, d = points.shape
    raw = np.ascontiguousarray(points).tobytes()
    width = d * 8
    return [
        (i.to_bytes(8, "big"), raw[i * width:(i + 1) * width])
        for i in range(n)
    ]


@dataclass
class KMeansResult:
    config: KMeansConfig
    centroids: np.ndarray
    assignments: np.ndarray
    wcss_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    rows: list = field(default_factory=list)


def run_kmeans(runtime, config: KMeansConfig) -> KMeansResult:
    """Generate, load, and iterate until displacement <= epsilon or the
    iteration budget runs out. Iteration 0 rows cover the load."""
    config = validate_config(config)
    engine = runtime.engine(config.backend)
    points = generate_points(config.n_points, config.n_dims, config.seed)
    centroids = points[:config.n_clusters].copy()

    spaces = [
        p.local_space for p in runtime.manager.pilots() if p.local_space is not None
    ]
    if not spaces:
        raise PilotError("run_kmeans needs at least one pilot with a local space")
    du = runtime.du_manager.create_from_bytes(
        {"points": encode_tuples(points_to_records(points))}, spaces[0]
    )
    result = KMeansResult(config=config, centroids=centroids,
                          assignments=np.zeros(0, dtype=np.int64))
    try:
        imdu = engine.load(du, config.n_partitions, "tuples")
        result.rows += rows_from_stats(
            "kmeans", config.backend, config.n_partitions, config.n_reducers,
            0, imdu.load_stats,
        )
        try:
            for iteration in range(1, config.max_iterations + 1):
                step = kmeans_iteration(
                    engine, imdu, result.centroids, config.n_reducers,
                    n_points=config.n_points,
                )
                engine.release(step.output)
                result.rows += rows_from_stats(
                    "kmeans", config.backend, config.n_partitions,
                    config.n_reducers, iteration, step.stats,
                )
                displacement = float(
                    np.sqrt(((step.centroids - result.centroids) ** 2).sum(axis=1)).max()
                )
                result.centroids = step.centroids
                result.assignments = step.assignments
                result.wcss_history.append(step.wcss)
                result.iterations = iteration
                if displacement <= config.epsilon:
                    result.converged = True
                    break
        finally:
            engine.release(imdu)
    finally:
        runtime.du_manager.drop(du)
    return result
