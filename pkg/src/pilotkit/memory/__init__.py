from .backends import FileStoreBackend, InProcessStoreBackend, MemoryBackendAdaptor
from .encoding import decode_tuples, encode_tuples
from .engine import BatchMapFunction, InMemoryDataUnit, MemoryEngine
from .hashing import fnv1a64, fnv1a64_many, reducer_for_keys

__all__ = [
    "FileStoreBackend",
    "InProcessStoreBackend",
    "MemoryBackendAdaptor",
    "decode_tuples",
    "encode_tuples",
    "BatchMapFunction",
    "InMemoryDataUnit",
    "MemoryEngine",
    "fnv1a64",
    "fnv1a64_many",
    "reducer_for_keys",
]
