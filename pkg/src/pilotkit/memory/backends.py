"""Pluggable stores the engine keeps partitions and shuffle blocks in.

Both adaptors move the same logical records through the same space
accounting; what differs is the cost model. The file adaptor serializes
every record to the wire form and reads it back on each access. The
in-process adaptor parks live object lists in memory-tier spaces, so
access is reference passing — the difference the engine's benchmarks are
designed to expose.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import AllocFailedError, InsufficientSpaceError, PartitionLostError, SourceNotFoundError
from .encoding import decode_tuples, encode_tuples

_PROV = struct.Struct("<QI")  # (global record seq, emission index)


def _sum_lengths(chunks) -> int:
    return sum(map(len, chunks))


class MemoryBackendAdaptor:
    """Contract: allocate space near a pilot, move partitions and blocks."""

    kind = "abstract"
    tier_url = ""

    def __init__(self, storage):
        self.storage = storage

    def alloc(self, space_mb, labels=None, owner_pilot_id=None):
        try:
            return self.storage.create_space(
                self.tier_url, space_mb, labels, owner_pilot_id
            )
        except InsufficientSpaceError as exc:
            raise AllocFailedError(str(exc)) from exc

    def dealloc(self, space):
        self.storage.release_space(space)

    def remove(self, space, name):
        if space.alive:
            space.remove(name)

    def _check(self, space, name):
        if not space.alive:
            raise PartitionLostError(f"{name}: space {space.space_id} is gone")

    # Partitions hold ordered (key, value) records; blocks additionally
    # carry (seq, emission) provenance for the reduce-side ordering.

    def store_partition(self, space, name, keys, values) -> int:
        raise NotImplementedError

    def fetch_partition(self, space, name):
        raise NotImplementedError

    def store_block(self, space, name, keys, values, seqs, emis) -> int:
        raise NotImplementedError

    def fetch_block(self, space, name):
        raise NotImplementedError


class InProcessStoreBackend(MemoryBackendAdaptor):
    """Live lists in memory-tier spaces; no serialization on either side."""

    kind = "memory"
    tier_url = "mem://"

    def store_partition(self, space, name, keys, values) -> int:
        self._check(space, name)
        nbytes = _sum_lengths(keys) + _sum_lengths(values)
        space.put_object(name, (list(keys), list(values)), nbytes)
        return nbytes

    def fetch_partition(self, space, name):
        self._check(space, name)
        try:
            keys, values = space.get_object(name)
        except SourceNotFoundError as exc:
            raise PartitionLostError(str(exc)) from exc
        return keys, values

    def store_block(self, space, name, keys, values, seqs, emis) -> int:
        self._check(space, name)
        nbytes = _sum_lengths(keys) + _sum_lengths(values) + 12 * len(keys)
        space.put_object(name, (keys, values, seqs, emis), nbytes)
        return nbytes

    def fetch_block(self, space, name):
        self._check(space, name)
        try:
            return space.get_object(name)
        except SourceNotFoundError as exc:
            raise PartitionLostError(str(exc)) from exc


class FileStoreBackend(MemoryBackendAdaptor):
    """Everything encoded to the wire form and written to disk-tier spaces."""

    kind = "file"
    tier_url = "file://"

    def store_partition(self, space, name, keys, values) -> int:
        self._check(space, name)
        data = encode_tuples(zip(keys, values))
        space.put(name, data)
        return len(data)

    def fetch_partition(self, space, name):
        self._check(space, name)
        try:
            data = space.get(name)
        except SourceNotFoundError as exc:
            raise PartitionLostError(str(exc)) from exc
        pairs = decode_tuples(data)
        keys = [k for k, _ in pairs]
        values = [v for _, v in pairs]
        return keys, values

    def store_block(self, space, name, keys, values, seqs, emis) -> int:
        self._check(space, name)
        pack = _PROV.pack
        seqs = [int(s) for s in seqs]
        emis = [int(e) for e in emis]
        data = encode_tuples(
            (k, pack(s, e) + v)
            for k, v, s, e in zip(keys, values, seqs, emis)
        )
        space.put(name, data)
        return len(data)

    def fetch_block(self, space, name):
        self._check(space, name)
        try:
            data = space.get(name)
        except SourceNotFoundError as exc:
            raise PartitionLostError(str(exc)) from exc
        unpack = _PROV.unpack_from
        keys = []
        values = []
        seqs = []
        emis = []
        for k, ext in decode_tuples(data):
            s, e = unpack(ext)
            keys.append(k)
            values.append(ext[12:])
            seqs.append(s)
            emis.append(e)
        return (
            keys, values,
            np.asarray(seqs, dtype=np.uint64),
            np.asarray(emis, dtype=np.uint32),
        )
