"""Storage tiers and reserved spaces.

A *space* is a chunk of one tier reserved up front (the storage analogue
of a placeholder compute allocation): items go in and out without further
negotiation with the tier. Accounting is in whole megabytes, rounding
every item up, so a reservation can never be silently oversubscribed.
"""

from __future__ import annotations

import os
import shutil
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from ..descriptions import parse_backend_url
from ..errors import (
    DestNotWritableError,
    InsufficientSpaceError,
    SourceNotFoundError,
    SpaceExhaustedError,
    UnknownBackendError,
)

MB = 1024 * 1024


def mb_ceil(n_bytes: int) -> int:
    """Megabytes an item occupies in the accounting: ceil, never zero-rated
    for non-empty data (a 1-byte item costs 1 MB)."""
    return -(-n_bytes // MB)


class Tier(str, Enum):
    MEMORY = "MEMORY"
    LOCAL_DISK = "LOCAL_DISK"
    SHARED_DISK = "SHARED_DISK"


# URL kind -> tiers it may address.
_KIND_TIERS = {
    "mem": (Tier.MEMORY,),
    "file": (Tier.LOCAL_DISK, Tier.SHARED_DISK),
}


@dataclass
class TierConfig:
    name: str
    tier: Tier
    capacity_mb: int
    root: Path | None = None


class Space:
    """A labeled reservation on one tier; items are named byte blobs."""

    def __init__(self, space_id, tier_config, reserved_mb, labels, owner_pilot_id=None):
        self.space_id = space_id
        self.tier_config = tier_config
        self.reserved_mb = reserved_mb
        self.labels = dict(labels)  # {"datacenter": ..., "machine": ...}, values may be None
        self.owner_pilot_id = owner_pilot_id
        self.alive = True
        self.used_mb = 0
        self.puts = 0
        self.gets = 0
        self.bytes_in = 0
        self.bytes_out = 0
        self._sizes: dict[str, int] = {}
        self._lock = threading.Lock()

    @property
    def tier(self) -> Tier:
        return self.tier_config.tier

    @property
    def free_mb(self) -> int:
        return self.reserved_mb - self.used_mb

    def names(self):
        with self._lock:
            return sorted(self._sizes)

    def has(self, name) -> bool:
        with self._lock:
            return name in self._sizes

    def size_bytes(self, name) -> int:
        with self._lock:
            if name not in self._sizes:
                raise SourceNotFoundError(f"{name!r} not in space {self.space_id}")
            return self._sizes[name]

    def _charge(self, name, n_bytes):
        # Caller holds the lock. Replacing an item re-prices it.
        new_used = self.used_mb - mb_ceil(self._sizes.get(name, 0)) + mb_ceil(n_bytes)
        if new_used > self.reserved_mb:
            raise SpaceExhaustedError(
                f"space {self.space_id}: {new_used} MB needed, {self.reserved_mb} reserved"
            )
        self.used_mb = new_used

    def put(self, name, data: bytes):
        self._check_name(name)
        with self._lock:
            self._check_alive()
            self._charge(name, len(data))
            self._write(name, data)
            self._sizes[name] = len(data)
            self.puts += 1
            self.bytes_in += len(data)

    def get(self, name) -> bytes:
        with self._lock:
            self._check_alive()
            if name not in self._sizes:
                raise SourceNotFoundError(f"{name!r} not in space {self.space_id}")
            data = self._read(name)
            self.gets += 1
            self.bytes_out += len(data)
            return data

    def remove(self, name):
        with self._lock:
            if name in self._sizes:
                self.used_mb -= mb_ceil(self._sizes.pop(name))
                self._delete(name)

    @staticmethod
    def _check_name(name):
        if not name or "/" in name or os.sep in name or name in (".", ".."):
            raise ValueError(f"bad item name: {name!r}")

    def _check_alive(self):
        if not self.alive:
            raise SourceNotFoundError(f"space {self.space_id} has been released")

    # Tier-specific byte movement.
    def _write(self, name, data):
        raise NotImplementedError

    def _read(self, name) -> bytes:
        raise NotImplementedError

    def _delete(self, name):
        raise NotImplementedError

    def destroy(self):
        with self._lock:
            self.alive = False


class MemorySpace(Space):
    """Memory-tier space; contents die with the space.

    Besides plain byte items it can hold live Python objects with a
    declared size, so in-process consumers skip serialization entirely
    while the accounting still sees the bytes.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._data: dict[str, bytes] = {}
        self._objects: dict[str, object] = {}

    def _write(self, name, data):
        self._objects.pop(name, None)
        self._data[name] = data

    def _read(self, name):
        if name in self._objects:
            raise SourceNotFoundError(f"{name!r} holds an object, use get_object")
        return self._data[name]

    def _delete(self, name):
        self._data.pop(name, None)
        self._objects.pop(name, None)

    def put_object(self, name, obj, nbytes: int):
        self._check_name(name)
        with self._lock:
            self._check_alive()
            self._charge(name, nbytes)
            self._data.pop(name, None)
            self._objects[name] = obj
            self._sizes[name] = nbytes
            self.puts += 1
            self.bytes_in += nbytes

    def get_object(self, name):
        with self._lock:
            self._check_alive()
            if name not in self._objects:
                raise SourceNotFoundError(f"{name!r} not an object in space {self.space_id}")
            self.gets += 1
            self.bytes_out += self._sizes[name]
            return self._objects[name]

    def destroy(self):
        super().destroy()
        self._data.clear()
        self._objects.clear()


class FileSpace(Space):
    """Disk-tier space backed by one directory per space."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.root = self.tier_config.root / self.space_id
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, name) -> Path:
        return self.root / name

    def _write(self, name, data):
        self._path(name).write_bytes(data)

    def _read(self, name):
        return self._path(name).read_bytes()

    def _delete(self, name):
        try:
            self._path(name).unlink()
        except FileNotFoundError:
            pass

    def destroy(self):
        super().destroy()
        shutil.rmtree(self.root, ignore_errors=True)


class StorageService:
    """Owns the tier configuration and every space reserved on it."""

    DEFAULT_TIERS = (
        ("mem", Tier.MEMORY, 8192),
        ("disk", Tier.LOCAL_DISK, 65536),
        ("shared", Tier.SHARED_DISK, 65536),
    )

    def __init__(self, root, tiers=None, event_log=None):
        self.root = Path(root)
        self.event_log = event_log
        self._lock = threading.Lock()
        self._spaces: dict[str, Space] = {}
        self._counter = 0
        self.tiers: dict[str, TierConfig] = {}
        for spec in tiers if tiers is not None else [
            TierConfig(name, tier, cap) for name, tier, cap in self.DEFAULT_TIERS
        ]:
            cfg = spec
            if cfg.tier is not Tier.MEMORY and cfg.root is None:
                cfg.root = self.root / "tiers" / cfg.name
            self.tiers[cfg.name] = cfg

    def _tier_used_mb(self, cfg) -> int:
        return sum(
            s.reserved_mb for s in self._spaces.values()
            if s.alive and s.tier_config is cfg
        )

    def _resolve_tier(self, storage_url) -> TierConfig:
        kind, target = parse_backend_url(storage_url)
        if kind not in _KIND_TIERS:
            raise UnknownBackendError(f"unknown storage kind {kind!r}")
        if target:
            cfg = self.tiers.get(target)
            if cfg is None or cfg.tier not in _KIND_TIERS[kind]:
                raise UnknownBackendError(f"no {kind!r} tier named {target!r}")
            return cfg
        for cfg in self.tiers.values():
            if cfg.tier in _KIND_TIERS[kind]:
                return cfg
        raise UnknownBackendError(f"no tier configured for kind {kind!r}")

    def create_space(self, storage_url, space_mb, labels=None, owner_pilot_id=None,
                     space_id=None) -> Space:
        """Reserve ``space_mb`` on the tier the URL addresses.

        Raises ``InsufficientSpaceError`` when the tier cannot cover the
        reservation on top of the existing ones.
        """
        cfg = self._resolve_tier(storage_url)
        labels = dict(labels or {})
        labels.setdefault("datacenter", None)
        labels.setdefault("machine", None)
        with self._lock:
            used = self._tier_used_mb(cfg)
            if used + space_mb > cfg.capacity_mb:
                raise InsufficientSpaceError(
                    f"tier {cfg.name}: {space_mb} MB requested, "
                    f"{cfg.capacity_mb - used} MB left"
                )
            if space_id is None:
                self._counter += 1
                space_id = f"space-{self._counter:06d}"
            if space_id in self._spaces:
                raise InsufficientSpaceError(f"space id {space_id!r} already exists")
            cls = MemorySpace if cfg.tier is Tier.MEMORY else FileSpace
            space = cls(space_id, cfg, space_mb, labels, owner_pilot_id)
            self._spaces[space_id] = space
        if self.event_log is not None:
            self.event_log.emit(
                "space", f"space:{space_id}", "-", "ALIVE",
                "reserved", tier=cfg.name, mb=str(space_mb),
                machine=str(labels.get("machine")), owner=str(owner_pilot_id),
            )
        return space

    def create_pilot_data(self, description, owner_pilot_id=None) -> Space:
        """Reserve the space a validated data-pilot description asks for."""
        labels = {
            "datacenter": description.affinity_datacenter_label,
            "machine": description.affinity_machine_label,
        }
        return self.create_space(
            description.storage_url, description.space_mb, labels, owner_pilot_id
        )

    def get_space(self, space_id) -> Space:
        with self._lock:
            if space_id not in self._spaces:
                raise SourceNotFoundError(f"no space {space_id!r}")
            return self._spaces[space_id]

    def spaces(self) -> list[Space]:
        with self._lock:
            return list(self._spaces.values())

    def release_space(self, space, reason="released"):
        space.destroy()
        if self.event_log is not None:
            self.event_log.emit("space", f"space:{space.space_id}", "ALIVE", "DEAD", reason)

    def invalidate_pilot_spaces(self, pilot_id) -> list[Space]:
        """Kill memory-tier spaces owned by a terminated pilot.

        Disk-tier spaces survive their owner. Returns the spaces that died.
        """
        with self._lock:
            doomed = [
                s for s in self._spaces.values()
                if s.alive and s.owner_pilot_id == pilot_id and s.tier is Tier.MEMORY
            ]
        for space in doomed:
            self.release_space(space, reason=f"pilot {pilot_id} terminated")
        return doomed

    @staticmethod
    def check_writable_dir(path):
        path = Path(path)
        try:
            path.mkdir(parents=True, exist_ok=True)
            probe = path / ".write-probe"
            probe.write_bytes(b"")
            probe.unlink()
        except OSError as exc:
            raise DestNotWritableError(f"{path}: {exc}") from exc
        return path
