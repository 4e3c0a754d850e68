"""Data units: named file collections replicated across spaces.

A data unit becomes AVAILABLE once one space holds a full replica of every
item. Replicas carry 64-bit content checksums, verified on every copy, so
a corrupted replica is detected and dropped instead of propagating.
Partial imports and stagings roll back; readers never observe a replica
missing items.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from ..errors import (
    ChecksumMismatchError,
    DataUnitNotAvailableError,
    SourceNotFoundError,
)


def content_checksum(data: bytes) -> str:
    """64-bit content hash as 16 hex chars (blake2b, digest_size=8)."""
    return hashlib.blake2b(data, digest_size=8).hexdigest()


class DataUnitState(str, Enum):
    NEW = "NEW"
    PENDING = "PENDING"
    AVAILABLE = "AVAILABLE"
    FAILED = "FAILED"

    def is_terminal(self) -> bool:
        return self is DataUnitState.FAILED


@dataclass
class ItemInfo:
    logical_name: str
    size_bytes: int
    checksum: str


class DataUnit:
    """One replicated collection; items are fixed after import."""

    def __init__(self, du_id, description):
        self.du_id = du_id
        self.description = description
        self.state = DataUnitState.NEW
        self.items: dict[str, ItemInfo] = {}
        self._replicas: dict[str, object] = {}  # space_id -> Space, full replicas only
        self._lock = threading.RLock()

    @property
    def total_bytes(self) -> int:
        return sum(i.size_bytes for i in self.items.values())

    def replica_spaces(self) -> list:
        """Live spaces holding a full replica; dead ones are pruned."""
        with self._lock:
            dead = [sid for sid, s in self._replicas.items() if not s.alive]
            for sid in dead:
                del self._replicas[sid]
            return list(self._replicas.values())

    def resident_labels(self) -> dict[str, set]:
        """Label values covered by live replicas, per label name."""
        out = {"datacenter": set(), "machine": set()}
        for space in self.replica_spaces():
            for key in out:
                if space.labels.get(key) is not None:
                    out[key].add(space.labels[key])
        return out

    def has_replica_on(self, space) -> bool:
        return any(s is space for s in self.replica_spaces())


def _read_source(source_url: str) -> bytes:
    """Fetch item bytes; sources are local paths, with or without file://."""
    path = source_url
    if "://" in source_url:
        kind, _, rest = source_url.partition("://")
        if kind != "file":
            raise SourceNotFoundError(f"unsupported source scheme: {source_url!r}")
        path = rest
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise SourceNotFoundError(f"{source_url}: {exc}") from exc


class DataUnitManager:
    """Registry plus the copy machinery between sources, spaces and dirs."""

    def __init__(self, storage, event_log=None):
        self.storage = storage
        self.event_log = event_log
        self._lock = threading.Lock()
        self._units: dict[str, DataUnit] = {}
        self._counter = 0

    def _emit(self, kind, du, old, new, reason, **detail):
        if self.event_log is not None:
            self.event_log.emit(kind, f"du:{du.du_id}", old, new, reason, **detail)

    def _set_state(self, du, new, reason):
        old = du.state
        if old is new:
            return
        du.state = new
        self._emit("du-state", du, old.value, new.value, reason)

    def register(self, description, du_id=None) -> DataUnit:
        with self._lock:
            if du_id is None:
                self._counter += 1
                du_id = f"du-{self._counter:06d}"
            if du_id in self._units:
                raise DataUnitNotAvailableError(f"du id {du_id!r} already registered")
            du = DataUnit(du_id, description)
            self._units[du_id] = du
            return du

    def get(self, du_id) -> DataUnit:
        with self._lock:
            if du_id not in self._units:
                raise DataUnitNotAvailableError(f"no data unit {du_id!r}")
            return self._units[du_id]

    def units(self) -> list[DataUnit]:
        with self._lock:
            return list(self._units.values())

    def _add_replica(self, du, space, reason):
        with du._lock:
            du._replicas[space.space_id] = space
        self._emit(
            "replica-add", du, "-", space.space_id, reason,
            machine=str(space.labels.get("machine")),
            datacenter=str(space.labels.get("datacenter")),
            tier=space.tier.value,
        )

    def _drop_replica(self, du, space, reason):
        with du._lock:
            du._replicas.pop(space.space_id, None)
        self._emit("replica-drop", du, space.space_id, "-", reason)

    def import_data_unit(self, description, space, du_id=None) -> DataUnit:
        """Pull every item from its source into ``space``.

        All-or-nothing: on any failure the space is restored and the unit
        returns to NEW, so no partial replica is ever visible.
        """
        du = self.register(description, du_id=du_id)
        return self.import_into(du, space)

    def import_into(self, du, space) -> DataUnit:
        self._set_state(du, DataUnitState.PENDING, "import started")
        written = []
        try:
            items = {}
            for ref in du.description.item_refs:
                data = _read_source(ref.source_url)
                space.put(ref.logical_name, data)
                written.append(ref.logical_name)
                items[ref.logical_name] = ItemInfo(
                    ref.logical_name, len(data), content_checksum(data)
                )
        except Exception:
            for name in written:
                space.remove(name)
            self._set_state(du, DataUnitState.NEW, "import rolled back")
            raise
        du.items = items
        self._add_replica(du, space, "imported")
        self._set_state(du, DataUnitState.AVAILABLE, "import complete")
        return du

    def write_items(self, du, named_bytes, space) -> DataUnit:
        """Fill a registered, still-empty unit from in-process bytes."""
        self._set_state(du, DataUnitState.PENDING, "write started")
        written = []
        try:
            for name, data in named_bytes.items():
                space.put(name, data)
                written.append(name)
                du.items[name] = ItemInfo(name, len(data), content_checksum(data))
        except Exception:
            for name in written:
                space.remove(name)
            du.items = {}
            self._set_state(du, DataUnitState.NEW, "write rolled back")
            raise
        self._add_replica(du, space, "written")
        self._set_state(du, DataUnitState.AVAILABLE, "write complete")
        return du

    def create_from_bytes(self, named_bytes, space, description=None, du_id=None) -> DataUnit:
        """Materialize a new data unit directly from in-process bytes."""
        from ..descriptions import DataUnitDescription

        du = self.register(description or DataUnitDescription(), du_id=du_id)
        return self.write_items(du, named_bytes, space)

    def _read_item_from(self, du, space, name) -> bytes:
        """Read and verify one item; drops the replica on corruption."""
        info = du.items[name]
        data = space.get(name)
        if content_checksum(data) != info.checksum:
            self._drop_replica(du, space, "checksum mismatch")
            raise ChecksumMismatchError(
                f"{du.du_id}/{name} corrupt on space {space.space_id}"
            )
        return data

    def get_bytes(self, du, name) -> bytes:
        """Read one item from any live replica, falling back past corruption."""
        if name not in du.items:
            raise SourceNotFoundError(f"{du.du_id} has no item {name!r}")
        last = None
        for space in du.replica_spaces():
            try:
                return self._read_item_from(du, space, name)
            except (ChecksumMismatchError, SourceNotFoundError) as exc:
                last = exc
        if last is not None:
            raise last
        self._set_state(du, DataUnitState.FAILED, "no live replica")
        raise DataUnitNotAvailableError(f"{du.du_id}: no live replica holds {name!r}")

    def stage(self, du, to_space) -> bool:
        """Ensure ``to_space`` holds a full replica; returns False if it
        already did (stage is idempotent)."""
        if du.state is not DataUnitState.AVAILABLE:
            raise DataUnitNotAvailableError(f"{du.du_id} is {du.state.value}")
        if du.has_replica_on(to_space):
            return False
        written = []
        try:
            for name in sorted(du.items):
                data = self.get_bytes(du, name)
                to_space.put(name, data)
                written.append(name)
        except Exception:
            for name in written:
                to_space.remove(name)
            raise
        self._add_replica(du, to_space, "staged")
        return True

    def export_data_unit(self, du, dest_dir) -> list[Path]:
        """Copy every item into a plain directory, verifying checksums."""
        dest = self.storage.check_writable_dir(dest_dir)
        out = []
        for name in sorted(du.items):
            data = self.get_bytes(du, name)
            target = dest / name
            target.write_bytes(data)
            out.append(target)
        return out

    def drop(self, du):
        """Delete every replica's items and retire the unit."""
        for space in du.replica_spaces():
            for name in list(du.items):
                if space.has(name):
                    space.remove(name)
            self._drop_replica(du, space, "dropped")
        du.items = {}
        self._set_state(du, DataUnitState.FAILED, "dropped")

    def handle_dead_spaces(self, spaces) -> list[DataUnit]:
        """Drop replicas that lived on now-dead spaces; a unit left with no
        replica becomes FAILED. Returns the units that died."""
        dead_ids = {s.space_id for s in spaces}
        lost = []
        for du in self.units():
            with du._lock:
                hit = dead_ids & set(du._replicas)
            for sid in hit:
                self._drop_replica(du, self.storage.get_space(sid), "space died")
            if hit and du.state is DataUnitState.AVAILABLE and not du.replica_spaces():
                self._set_state(du, DataUnitState.FAILED, "all replicas lost")
                lost.append(du)
        return lost
