"""Partitioned in-memory map/reduce over pilot-managed resources.

The engine turns a data unit into round-robin partitions held on spaces
near the pilots, then runs map and reduce phases as typed compute units
through the regular submission path, so placement, retries and event
logging all come from the same machinery as any other unit.

Determinism contract: records get a global sequence number at load time
(record ``j`` of partition ``p`` is number ``j * P + p``, i.e. its
original position, independent of P). Map emissions carry
(sequence, emission index) provenance; each reduce group consumes its
values in that order, and output partitions are sorted by (output key,
group key, emission index). For a fixed input, output bytes are identical
across partition counts, reducer counts, worker counts and backends —
with one documented exception: enabling the combiner reassociates
reductions per map task, which is only byte-stable for associative exact
value types (integers), not floats.
"""

from __future__ import annotations

import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..descriptions import ComputeUnitDescription, UnitKind
from ..errors import (
    BroadcastTooLargeError,
    NoPilotsError,
    PartitionLostError,
    PilotError,
    TaskFailedError,
)
from ..states import PilotState
from ..storage.dataunits import DataUnitState
from .backends import MemoryBackendAdaptor
from .encoding import decode_tuples, encode_tuples
from .hashing import reducer_for_keys

BROADCAST_LIMIT_MB = 64

_engine_counter_lock = threading.Lock()
_engine_counter = 0


def _next_engine_id() -> str:
    global _engine_counter
    with _engine_counter_lock:
        _engine_counter += 1
        return f"eng{_engine_counter}"


class BatchMapFunction:
    """Map function that processes a whole partition at once.

    ``process_batch(keys, values)`` returns ``(out_keys, out_values,
    counts)`` where ``counts[j]`` is how many tuples record ``j`` emitted,
    in order (``None`` means exactly one per record). Semantics must equal
    calling a per-tuple map record by record; the engine assigns the same
    provenance either way.
    """

    def process_batch(self, keys, values):
        raise NotImplementedError


@dataclass
class PartitionInfo:
    partition_id: int
    space_id: str
    pilot_id: str
    item_name: str
    count: int
    nbytes: int


@dataclass
class PhaseStats:
    wall_ms: float = 0.0
    bytes_moved: int = 0


@dataclass
class JobStats:
    job_id: str
    phases: dict = field(default_factory=dict)
    records_in: int = 0
    records_emitted: int = 0
    records_out: int = 0

    def phase(self, name) -> PhaseStats:
        return self.phases.setdefault(name, PhaseStats())


class InMemoryDataUnit:
    """Handle to one partitioned dataset living on engine spaces."""

    def __init__(self, imdu_id, n_partitions, splitter, origin_du_id=None):
        self.imdu_id = imdu_id
        self.n_partitions = n_partitions
        self.splitter = splitter
        self.origin_du_id = origin_du_id
        self.partitions: list[PartitionInfo | None] = [None] * n_partitions
        self.total_records = 0
        self.load_stats: JobStats | None = None
        self.job_stats: JobStats | None = None


@dataclass(frozen=True)
class BroadcastRef:
    broadcast_id: str
    size_bytes: int


@dataclass
class _Job:
    job_id: str
    imdu: InMemoryDataUnit
    map_fn: object
    reduce_fn: object
    n_reducers: int
    combine: bool
    stats: JobStats = None
    lock: threading.Lock = field(default_factory=threading.Lock)
    # (map partition, reducer) -> (space_id, item_name, count, nbytes)
    blocks: dict = field(default_factory=dict)


def split_lines(data: bytes) -> list[bytes]:
    """Line records without their terminators; a trailing unterminated
    line still counts."""
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    return lines


class MemoryEngine:
    """Driver for load / map_reduce / persist / broadcast over one backend."""

    def __init__(self, manager, du_manager, backend: MemoryBackendAdaptor,
                 payloads, space_mb=2048, task_timeout=600.0, event_log=None):
        self.manager = manager
        self.du_manager = du_manager
        self.backend = backend
        self.payloads = payloads
        self.space_mb = space_mb
        self.task_timeout = task_timeout
        self.event_log = event_log
        self.engine_id = _next_engine_id()
        self._lock = threading.Lock()
        self._job_counter = 0
        self._imdu_counter = 0
        self._bcast_counter = 0
        self._broadcasts: dict[str, bytes] = {}
        self._pilot_spaces: dict[str, object] = {}

    # -- spaces ----------------------------------------------------------

    def _space_for(self, pilot_id):
        with self._lock:
            space = self._pilot_spaces.get(pilot_id)
            if space is not None and space.alive:
                return space
            pilot = self.manager.get_pilot(pilot_id)
            space = self.backend.alloc(
                self.space_mb, labels=pilot.labels, owner_pilot_id=pilot_id
            )
            self._pilot_spaces[pilot_id] = space
            return space

    # -- ids ---------------------------------------------------------------

    def _next_job_id(self):
        with self._lock:
            self._job_counter += 1
            return f"{self.engine_id}-job{self._job_counter:04d}"

    def _next_imdu_id(self):
        with self._lock:
            self._imdu_counter += 1
            return f"{self.engine_id}-imdu{self._imdu_counter:04d}"

    # -- task submission ---------------------------------------------------

    def _submit_and_wait(self, kind, ref_bodies, affinities=None):
        """Run payload bodies as typed units and wait for the barrier."""
        if not any(
            p.state is PilotState.RUNNING for p in self.manager.pilots()
        ):
            raise NoPilotsError("no running pilots to execute engine tasks")
        affinities = affinities or {}
        unit_ids = []
        try:
            for ref, body in ref_bodies.items():
                self.payloads[ref] = body
                labels = affinities.get(ref) or {}
                cud = ComputeUnitDescription(
                    kind=kind, payload_ref=ref, cores=1,
                    affinity_datacenter_label=labels.get("datacenter"),
                    affinity_machine_label=labels.get("machine"),
                )
                unit_ids.append(self.manager.submit_compute_unit(cud))
            done = self.manager.wait_for_units(unit_ids, timeout=self.task_timeout)
            if not done:
                raise TaskFailedError(
                    "barrier", 0,
                    f"engine barrier timed out after {self.task_timeout}s",
                )
            self.manager.raise_if_failed(unit_ids)
        finally:
            for ref in ref_bodies:
                self.payloads.pop(ref, None)

    # -- load ----------------------------------------------------------------

    def _read_records(self, du, record_splitter):
        """Materialize the unit's records in their global order."""
        total_bytes = 0
        records = []
        if record_splitter == "lines":
            for name in sorted(du.items):
                data = self.du_manager.get_bytes(du, name)
                total_bytes += len(data)
                base = len(records)
                for i, line in enumerate(split_lines(data)):
                    records.append((_u64_key(base + i), line))
        elif record_splitter == "tuples":
            for name in sorted(du.items):
                data = self.du_manager.get_bytes(du, name)
                total_bytes += len(data)
                records.extend(decode_tuples(data))
        else:
            raise PilotError(f"unknown record splitter {record_splitter!r}")
        return records, total_bytes

    def load(self, du, n_partitions, record_splitter="lines") -> InMemoryDataUnit:
        """Split a data unit round-robin into ``n_partitions`` partitions
        stored near the pilots that will work on them."""
        if n_partitions < 1:
            raise PilotError("n_partitions must be >= 1")
        t0 = time.perf_counter()
        records, read_bytes = self._read_records(du, record_splitter)
        imdu = InMemoryDataUnit(
            self._next_imdu_id(), n_partitions, record_splitter, origin_du_id=du.du_id
        )
        imdu.total_records = len(records)
        stored = self._store_partitions(imdu, records, range(n_partitions))
        stats = JobStats(job_id=f"{imdu.imdu_id}-load")
        stats.records_in = len(records)
        stats.phase("load").wall_ms = (time.perf_counter() - t0) * 1000.0
        stats.phase("load").bytes_moved = read_bytes + stored
        stats.phase("total").wall_ms = stats.phase("load").wall_ms
        stats.phase("total").bytes_moved = stats.phase("load").bytes_moved
        imdu.load_stats = stats
        return imdu

    def _store_partitions(self, imdu, records, partition_ids) -> int:
        """Distribute the listed partitions onto pilots as store tasks."""
        P = imdu.n_partitions
        job_id = self._next_job_id()
        bodies = {}
        stored = {"bytes": 0}
        lock = threading.Lock()

        def make_body(p):
            chunk = records[p::P]

            def body(tctx, p=p, chunk=chunk):
                space = self._space_for(tctx.pilot_id)
                name = f"{imdu.imdu_id}-part-{p:05d}"
                keys = [k for k, _ in chunk]
                values = [v for _, v in chunk]
                nbytes = self.backend.store_partition(space, name, keys, values)
                info = PartitionInfo(
                    p, space.space_id, tctx.pilot_id, name, len(chunk), nbytes
                )
                with lock:
                    imdu.partitions[p] = info
                    stored["bytes"] += nbytes

            return body

        for p in partition_ids:
            bodies[f"{job_id}:store:{p}"] = make_body(p)
        self._submit_and_wait(UnitKind.MAP_TASK, bodies)
        return stored["bytes"]

    # -- availability and reload ----------------------------------------------

    def _lost_partitions(self, imdu) -> list[int]:
        lost = []
        for p, info in enumerate(imdu.partitions):
            if info is None:
                lost.append(p)
                continue
            try:
                space = self.du_manager.storage.get_space(info.space_id)
            except Exception:
                lost.append(p)
                continue
            if not space.alive or not space.has(info.item_name):
                lost.append(p)
        return lost

    def ensure_available(self, imdu):
        """Reload lost partitions from the origin data unit, or raise
        PARTITION_LOST when there is nothing to reload from."""
        lost = self._lost_partitions(imdu)
        if not lost:
            return
        if imdu.origin_du_id is None:
            raise PartitionLostError(
                f"{imdu.imdu_id}: partitions {lost} lost and no origin to reload from"
            )
        try:
            du = self.du_manager.get(imdu.origin_du_id)
            if du.state is not DataUnitState.AVAILABLE:
                raise PilotError(f"origin {du.du_id} is {du.state.value}")
            records, _ = self._read_records(du, imdu.splitter)
        except Exception as exc:
            raise PartitionLostError(
                f"{imdu.imdu_id}: partitions {lost} lost and origin unavailable: {exc}"
            ) from exc
        self._store_partitions(imdu, records, lost)
        if self.event_log is not None:
            self.event_log.emit(
                "partition-reload", f"imdu:{imdu.imdu_id}", "-", "-",
                "reloaded from origin", partitions=str(lost),
            )

    # -- map/reduce --------------------------------------------------------------

    def map_reduce(self, imdu, map_fn, reduce_fn, n_reducers,
                   combine=False) -> InMemoryDataUnit:
        """One full job; returns the output unit with stats attached."""
        if n_reducers < 1:
            raise PilotError("n_reducers must be >= 1")
        self.ensure_available(imdu)
        job = _Job(
            job_id=self._next_job_id(), imdu=imdu, map_fn=map_fn,
            reduce_fn=reduce_fn, n_reducers=n_reducers, combine=combine,
        )
        job.stats = JobStats(job_id=job.job_id)
        out = InMemoryDataUnit(self._next_imdu_id(), n_reducers, "tuples")
        t0 = time.perf_counter()

        map_bodies = {}
        map_affinity = {}
        for p, info in enumerate(imdu.partitions):
            ref = f"{job.job_id}:map:{p}"
            map_bodies[ref] = self._make_map_body(job, p)
            space = self.du_manager.storage.get_space(info.space_id)
            map_affinity[ref] = {
                "machine": space.labels.get("machine"),
                "datacenter": space.labels.get("datacenter"),
            }
        self._submit_and_wait(UnitKind.MAP_TASK, map_bodies, map_affinity)
        t1 = time.perf_counter()

        reduce_bodies = {
            f"{job.job_id}:reduce:{r}": self._make_reduce_body(job, r, out)
            for r in range(n_reducers)
        }
        self._submit_and_wait(UnitKind.REDUCE_TASK, reduce_bodies)
        t2 = time.perf_counter()

        # Every emitted tuple must have arrived somewhere.
        fetched = sum(count for (_, _, count, _) in job.blocks.values())
        if fetched != job.stats.records_emitted:
            raise PilotError(
                f"{job.job_id}: {job.stats.records_emitted} tuples emitted "
                f"but {fetched} shuffled"
            )

        for space_id, name, _, _ in job.blocks.values():
            space = self.du_manager.storage.get_space(space_id)
            self.backend.remove(space, name)

        job.stats.phase("map").wall_ms = (t1 - t0) * 1000.0
        job.stats.phase("reduce").wall_ms = (t2 - t1) * 1000.0
        job.stats.phase("total").wall_ms = (t2 - t0) * 1000.0
        job.stats.phase("total").bytes_moved = (
            job.stats.phase("map").bytes_moved
            + job.stats.phase("shuffle").bytes_moved
            + job.stats.phase("reduce").bytes_moved
        )
        out.total_records = job.stats.records_out
        out.job_stats = job.stats
        if self.event_log is not None:
            self.event_log.emit(
                "engine-job", f"job:{job.job_id}", "-", "DONE", "map_reduce complete",
                partitions=str(imdu.n_partitions), reducers=str(n_reducers),
                records_in=str(job.stats.records_in),
                records_out=str(job.stats.records_out),
            )
        return out

    def _make_map_body(self, job, p):
        def body(tctx):
            imdu = job.imdu
            info = imdu.partitions[p]
            space = self.du_manager.storage.get_space(info.space_id)
            keys, values = self.backend.fetch_partition(space, info.item_name)
            seqs = (
                np.arange(len(keys), dtype=np.uint64) * np.uint64(imdu.n_partitions)
                + np.uint64(p)
            )
            ok, ov, oseq, oemi = _apply_map(job.map_fn, keys, values, seqs)
            if job.combine:
                ok, ov, oseq, oemi = _combine(job.reduce_fn, ok, ov, oseq, oemi)
            rids = reducer_for_keys(ok, job.n_reducers)
            t_shuf = time.perf_counter()
            local = self._space_for(tctx.pilot_id)
            shuffle_bytes = 0
            for r in range(job.n_reducers):
                idx = np.nonzero(rids == r)[0]
                if idx.size == 0:
                    continue
                sel = idx.tolist()
                name = f"{job.job_id}-m{p:05d}-r{r:05d}"
                nbytes = self.backend.store_block(
                    local, name,
                    list(map(ok.__getitem__, sel)),
                    list(map(ov.__getitem__, sel)),
                    oseq[idx], oemi[idx],
                )
                shuffle_bytes += nbytes
                with job.lock:
                    job.blocks[(p, r)] = (local.space_id, name, len(sel), nbytes)
            shuf_ms = (time.perf_counter() - t_shuf) * 1000.0
            with job.lock:
                job.stats.records_in += len(keys)
                job.stats.records_emitted += len(ok)
                job.stats.phase("map").bytes_moved += info.nbytes
                job.stats.phase("shuffle").bytes_moved += shuffle_bytes
                job.stats.phase("shuffle").wall_ms += shuf_ms

        return body

    def _make_reduce_body(self, job, r, out):
        def body(tctx):
            keys: list = []
            values: list = []
            seq_parts = []
            emi_parts = []
            fetched_bytes = 0
            t_shuf = time.perf_counter()
            for m in range(job.imdu.n_partitions):
                loc = job.blocks.get((m, r))
                if loc is None:
                    continue
                space = self.du_manager.storage.get_space(loc[0])
                bk, bv, bs, be = self.backend.fetch_block(space, loc[1])
                keys.extend(bk)
                values.extend(bv)
                seq_parts.append(bs)
                emi_parts.append(be)
                fetched_bytes += loc[3]
            shuf_ms = (time.perf_counter() - t_shuf) * 1000.0
            if seq_parts:
                seqs = np.concatenate(seq_parts)
                emis = np.concatenate(emi_parts)
            else:
                seqs = np.zeros(0, dtype=np.uint64)
                emis = np.zeros(0, dtype=np.uint32)

            groups: dict = defaultdict(list)
            for i, k in enumerate(keys):
                groups[k].append(i)
            emitted = []
            for k in sorted(groups):
                idx = np.asarray(groups[k], dtype=np.int64)
                order = idx[np.lexsort((emis[idx], seqs[idx]))].tolist()
                ordered_vals = list(map(values.__getitem__, order))
                for j, (k2, v2) in enumerate(job.reduce_fn(k, ordered_vals)):
                    emitted.append((k2, v2, k, j))
            emitted.sort(key=lambda t: (t[0], t[2], t[3]))
            out_keys = [t[0] for t in emitted]
            out_values = [t[1] for t in emitted]

            local = self._space_for(tctx.pilot_id)
            name = f"{out.imdu_id}-part-{r:05d}"
            nbytes = self.backend.store_partition(local, name, out_keys, out_values)
            info = PartitionInfo(r, local.space_id, tctx.pilot_id, name, len(out_keys), nbytes)
            with job.lock:
                out.partitions[r] = info
                job.stats.records_out += len(out_keys)
                job.stats.phase("reduce").bytes_moved += nbytes
                job.stats.phase("shuffle").bytes_moved += fetched_bytes
                job.stats.phase("shuffle").wall_ms += shuf_ms

        return body

    # -- results -----------------------------------------------------------------

    def collect(self, imdu) -> list:
        """All records as (key, value) pairs, partition by partition."""
        self.ensure_available(imdu)
        pairs = []
        for info in imdu.partitions:
            space = self.du_manager.storage.get_space(info.space_id)
            keys, values = self.backend.fetch_partition(space, info.item_name)
            pairs.extend(zip(keys, values))
        return pairs

    def canonical_bytes(self, imdu) -> bytes:
        """Partition-layout-independent fingerprint: the sorted record
        stream in wire form."""
        return encode_tuples(sorted(self.collect(imdu)))

    def partition_bytes(self, imdu, p) -> bytes:
        """Exact stored order of one partition, in wire form."""
        self.ensure_available(imdu)
        info = imdu.partitions[p]
        space = self.du_manager.storage.get_space(info.space_id)
        keys, values = self.backend.fetch_partition(space, info.item_name)
        return encode_tuples(zip(keys, values))

    def persist(self, imdu, space):
        """Write the unit to a data-backend space as one item per
        partition; the result is a regular data unit."""
        self.ensure_available(imdu)
        named = {}
        for info in imdu.partitions:
            named[f"partition-{info.partition_id:05d}"] = self.partition_bytes(
                imdu, info.partition_id
            )
        return self.du_manager.create_from_bytes(named, space)

    def release(self, imdu):
        """Drop the partitions; the handle is dead afterwards."""
        for info in imdu.partitions:
            if info is None:
                continue
            try:
                space = self.du_manager.storage.get_space(info.space_id)
            except Exception:
                continue
            self.backend.remove(space, info.item_name)
        imdu.partitions = [None] * imdu.n_partitions
        imdu.origin_du_id = None

    # -- broadcast -----------------------------------------------------------------

    def broadcast(self, data: bytes) -> BroadcastRef:
        """Publish read-only bytes to every task; capped at 64 MB."""
        if len(data) > BROADCAST_LIMIT_MB * 1024 * 1024:
            raise BroadcastTooLargeError(
                f"{len(data)} bytes exceeds the {BROADCAST_LIMIT_MB} MB broadcast limit"
            )
        with self._lock:
            self._bcast_counter += 1
            ref = BroadcastRef(f"{self.engine_id}-b{self._bcast_counter:04d}", len(data))
            self._broadcasts[ref.broadcast_id] = bytes(data)
        return ref

    def get_broadcast(self, ref: BroadcastRef) -> bytes:
        with self._lock:
            data = self._broadcasts.get(ref.broadcast_id)
        if data is None:
            raise PilotError(f"broadcast {ref.broadcast_id} released or unknown")
        return data

    def release_broadcast(self, ref: BroadcastRef):
        with self._lock:
            self._broadcasts.pop(ref.broadcast_id, None)

    def close(self):
        with self._lock:
            spaces = list(self._pilot_spaces.values())
            self._pilot_spaces.clear()
            self._broadcasts.clear()
        for space in spaces:
            if space.alive:
                self.backend.dealloc(space)


def _u64_key(i: int) -> bytes:
    return i.to_bytes(8, "big")


def _apply_map(map_fn, keys, values, seqs):
    """Run the map function; returns flat (keys, values, seqs, emis)."""
    n = len(keys)
    if isinstance(map_fn, BatchMapFunction):
        ok, ov, counts = map_fn.process_batch(keys, values)
        if len(ok) != len(ov):
            raise PilotError("map emitted mismatched key/value counts")
        if counts is None:
            if len(ok) != n:
                raise PilotError(
                    f"map emitted {len(ok)} tuples for {n} records without counts"
                )
            return ok, ov, seqs, np.zeros(n, dtype=np.uint32)
        counts = np.asarray(counts, dtype=np.int64)
        if len(counts) != n or int(counts.sum()) != len(ok):
            raise PilotError("map emission counts do not cover the batch")
        oseq = np.repeat(seqs, counts)
        total = int(counts.sum())
        starts = np.repeat(np.cumsum(counts) - counts, counts)
        oemi = (np.arange(total, dtype=np.int64) - starts).astype(np.uint32)
        return ok, ov, oseq, oemi
    ok, ov, oseq, oemi = [], [], [], []
    for j in range(n):
        for i, (k2, v2) in enumerate(map_fn(keys[j], values[j])):
            ok.append(k2)
            ov.append(v2)
            oseq.append(seqs[j])
            oemi.append(i)
    return (
        ok, ov,
        np.asarray(oseq, dtype=np.uint64),
        np.asarray(oemi, dtype=np.uint32),
    )


def _combine(reduce_fn, ok, ov, oseq, oemi):
    """Pre-reduce within one map task. Groups arrive in emission order,
    which is already (seq, emission) order; combined tuples inherit the
    provenance of their group's first element."""
    groups: dict = {}
    for i, k in enumerate(ok):
        groups.setdefault(k, []).append(i)
    ck, cv, cs, ce = [], [], [], []
    for k in sorted(groups):
        idx = groups[k]
        vals = [ov[i] for i in idx]
        first_s = int(oseq[idx[0]])
        first_e = int(oemi[idx[0]])
        for j, (k2, v2) in enumerate(reduce_fn(k, vals)):
            ck.append(k2)
            cv.append(v2)
            cs.append(first_s)
            ce.append(first_e + j)
    return (
        ck, cv,
        np.asarray(cs, dtype=np.uint64),
        np.asarray(ce, dtype=np.uint32),
    )
