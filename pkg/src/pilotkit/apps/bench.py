"""Benchmark rows, the CSV result format, and the storage I/O benchmark.

All measurements funnel into one flat row shape so every tool downstream
(tests, plotting, diffing) parses a single schema. The format is frozen:
header and column order never change, lines end with LF, numbers are
plain ASCII decimals.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import PilotError, ValidationError
from ..memory import BatchMapFunction

CSV_HEADER = "scenario,backend,partitions,reducers,iteration,phase,wall_ms,bytes_moved"
PHASES = ("load", "map", "shuffle", "reduce", "total")
MB = 1024 * 1024


@dataclass
class BenchRow:
    """One measurement: a phase of one iteration of one scenario."""

    scenario: str
    backend: str
    partitions: int
    reducers: int
    iteration: int
    phase: str
    wall_ms: float
    bytes_moved: int

    def to_csv(self) -> str:
        return (
            f"{self.scenario},{self.backend},{self.partitions},"
            f"{self.reducers},{self.iteration},{self.phase},"
            f"{self.wall_ms:.3f},{self.bytes_moved}"
        )

    @classmethod
    def from_csv(cls, line: str) -> "BenchRow":
        parts = line.split(",")
        if len(parts) != 8:
            raise ValidationError([f"expected 8 columns, got {len(parts)}: {line!r}"])
        return cls(
            scenario=parts[0], backend=parts[1],
            partitions=int(parts[2]), reducers=int(parts[3]),
            iteration=int(parts[4]), phase=parts[5],
            wall_ms=float(parts[6]), bytes_moved=int(parts[7]),
        )


def write_csv(path, rows) -> None:
    text = "\n".join([CSV_HEADER] + [r.to_csv() for r in rows]) + "\n"
    Path(path).write_text(text, encoding="ascii", newline="\n")


def read_csv(path) -> list[BenchRow]:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValidationError([f"bad CSV header in {path}"])
    return [BenchRow.from_csv(line) for line in lines[1:] if line]


def rows_from_stats(scenario, backend, partitions, reducers, iteration,
                    stats) -> list[BenchRow]:
    """Flatten one JobStats into rows, fixed phase order."""
    rows = []
    for name in PHASES:
        phase = stats.phases.get(name)
        if phase is None:
            continue
        rows.append(BenchRow(
            scenario=scenario, backend=backend, partitions=partitions,
            reducers=reducers, iteration=iteration, phase=name,
            wall_ms=phase.wall_ms, bytes_moved=phase.bytes_moved,
        ))
    return rows


class _DrainMap(BatchMapFunction):
    """Reads its whole partition and emits nothing: pure read benchmark."""

    def process_batch(self, keys, values):
        return [], [], np.zeros(len(keys), dtype=np.int64)


def _drain_reduce(key, values):
    return iter(())


_TIER_URLS = {"memory": "mem://", "file": "file://"}


def bench_io(runtime, sizes_mb, backends=("file", "memory"),
             n_partitions=4, seed=0) -> list[BenchRow]:
    """Put / get / parallel-read timings per payload size and backend.

    Three scenarios per (size, backend): ``io-put`` writes the payload as
    one item, ``io-get`` reads it back (content verified), ``io-pread``
    reads it as a map-only job with one task per partition. The size in
    MB rides in the iteration column.
    """
    rows = []
    rng = np.random.default_rng(seed)
    for backend in backends:
        tier_url = _TIER_URLS.get(backend)
        if tier_url is None:
            raise ValidationError([f"unknown io backend {backend!r}"])
        for size_mb in sizes_mb:
            if size_mb < 0:
                raise ValidationError(["sizes must be >= 0"])
            payload = rng.integers(0, 256, size_mb * MB, dtype=np.uint8).tobytes()
            space = runtime.storage.create_space(
                tier_url, max(1, 2 * size_mb + 8)
            )
            try:
                t0 = time.perf_counter()
                space.put("blob", payload)
                put_ms = (time.perf_counter() - t0) * 1000.0
                rows.append(BenchRow(
                    "io-put", backend, 1, 0, size_mb, "total",
                    put_ms, len(payload),
                ))

                t0 = time.perf_counter()
                back = space.get("blob")
                get_ms = (time.perf_counter() - t0) * 1000.0
                if back != payload:
                    raise PilotError(f"io-get returned different bytes at {size_mb} MB")
                rows.append(BenchRow(
                    "io-get", backend, 1, 0, size_mb, "total",
                    get_ms, len(back),
                ))
            finally:
                runtime.storage.release_space(space)

            rows.extend(_bench_parallel_read(
                runtime, backend, payload, size_mb, n_partitions
            ))
    return rows


def _bench_parallel_read(runtime, backend, payload, size_mb, n_partitions):
    """Load the payload as 1 MB records, then time a drain-only job."""
    from ..memory.encoding import encode_tuples

    engine = runtime.engine(backend)
    records = []
    for i in range(0, len(payload), MB):
        records.append((i.to_bytes(8, "big"), payload[i:i + MB]))
    pilots = [p for p in runtime.manager.pilots() if p.local_space is not None]
    if not pilots:
        raise PilotError("bench-io needs at least one pilot with a local space")
    du = runtime.du_manager.create_from_bytes(
        {"blob": encode_tuples(records)}, pilots[0].local_space
    )
    try:
        imdu = engine.load(du, n_partitions, "tuples")
        try:
            out = engine.map_reduce(imdu, _DrainMap(), _drain_reduce, 1)
            stats = out.job_stats
            row_rows = [
                BenchRow(
                    "io-pread", backend, n_partitions, 1, size_mb, name,
                    stats.phases[name].wall_ms, stats.phases[name].bytes_moved,
                )
                for name in ("map", "total")
            ]
            engine.release(out)
            return row_rows
        finally:
            engine.release(imdu)
    finally:
        runtime.du_manager.drop(du)


def throughput_mb_s(row: BenchRow) -> float:
    """Effective throughput for a row; 0 when nothing moved."""
    if row.wall_ms <= 0 or row.bytes_moved == 0:
        return 0.0
    return (row.bytes_moved / MB) / (row.wall_ms / 1000.0)
