"""Tests for shuffle hashing and the tuple wire format."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilotkit.memory.encoding import decode_tuples, encode_tuples
from pilotkit.memory.hashing import (
    FNV64_OFFSET,
    FNV64_PRIME,
    fnv1a64,
    fnv1a64_many,
    reducer_for_keys,
)


class TestFnv1a64:
    # Published FNV-1a 64-bit vectors; the shuffle partitioning function
    # must never drift from these.
    VECTORS = [
        (b"", 0xcbf29ce484222325),
        (b"a", 0xaf63dc4c8601ec8c),
        (b"b", 0xaf63df4c8601f1a5),
        (b"c", 0xaf63de4c8601eff2),
        (b"foobar", 0x85944171f73967e8),
    ]

    @pytest.mark.parametrize("data,expect", VECTORS)
    def test_known_vectors(self, data, expect):
        assert fnv1a64(data) == expect

    def test_constants(self):
        assert FNV64_OFFSET == 14695981039346656037
        assert FNV64_PRIME == 1099511628211
        assert fnv1a64(b"") == FNV64_OFFSET

    def test_seed_forks_key_space(self):
        assert fnv1a64(b"key", seed=1) != fnv1a64(b"key")

    @pytest.mark.parametrize("data,expect", VECTORS)
    def test_vectorized_matches_scalar_per_vector(self, data, expect):
        assert fnv1a64_many([data])[0] == expect

    def test_vectorized_equal_length_fast_path(self):
        keys = [b"aaaa", b"bbbb", b"cccc", b"zzzz"]
        got = fnv1a64_many(keys)
        assert got.dtype == np.uint64
        assert got.tolist() == [fnv1a64(k) for k in keys]

    def test_vectorized_mixed_lengths(self):
        keys = [b"", b"a", b"ab", b"abc", b"a" * 40, b"\x00", b"\x00\x00"]
        assert fnv1a64_many(keys).tolist() == [fnv1a64(k) for k in keys]

    def test_vectorized_empty_input(self):
        got = fnv1a64_many([])
        assert got.shape == (0,)
        assert got.dtype == np.uint64

    def test_nul_bytes_are_significant(self):
        # Padding in the mixed-length path must not hash the pad bytes.
        assert fnv1a64(b"x") != fnv1a64(b"x\x00")
        keys = [b"x", b"x\x00"]
        got = fnv1a64_many(keys)
        assert got[0] != got[1]
        assert got.tolist() == [fnv1a64(k) for k in keys]

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.binary(min_size=0, max_size=24), min_size=1, max_size=30))
    def test_vectorized_always_matches_scalar(self, keys):
        assert fnv1a64_many(keys).tolist() == [fnv1a64(k) for k in keys]


class TestReducerAssignment:
    def test_mod_reduction(self):
        keys = [b"alpha", b"beta", b"gamma"]
        got = reducer_for_keys(keys, 3)
        assert got.dtype == np.int64
        assert got.tolist() == [fnv1a64(k) % 3 for k in keys]

    def test_single_reducer_collapses(self):
        assert set(reducer_for_keys([b"a", b"b", b"c"], 1).tolist()) == {0}

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.binary(max_size=16), min_size=1, max_size=50),
        st.integers(1, 8),
    )
    def test_always_in_range(self, keys, n_reducers):
        got = reducer_for_keys(keys, n_reducers)
        assert ((got >= 0) & (got < n_reducers)).all()

    def test_stable_across_calls(self):
        keys = [f"key-{i}".encode() for i in range(100)]
        assert reducer_for_keys(keys, 4).tolist() == reducer_for_keys(keys, 4).tolist()


class TestTupleEncoding:
    def test_frozen_layout(self):
        # u32-LE key length | key | u32-LE value length | value.
        assert encode_tuples([(b"k", b"vv")]) == (
            struct.pack("<I", 1) + b"k" + struct.pack("<I", 2) + b"vv"
        )

    def test_empty_stream(self):
        assert encode_tuples([]) == b""
        assert decode_tuples(b"") == []

    def test_round_trip(self):
        pairs = [
            (b"", b""),
            (b"key", b"value"),
            (b"\x00\xff", bytes(range(256))),
            (b"k" * 1000, b""),
        ]
        assert decode_tuples(encode_tuples(pairs)) == pairs

    def test_concatenation_is_append(self):
        a = [(b"k1", b"v1")]
        b = [(b"k2", b"v2")]
        assert decode_tuples(encode_tuples(a) + encode_tuples(b)) == a + b

    @pytest.mark.parametrize("cut", [1, 3, 4, 5, 8, 9, 11])
    def test_truncation_raises(self, cut):
        buf = encode_tuples([(b"key", b"val")])  # 14 bytes total
        with pytest.raises(ValueError):
            decode_tuples(buf[:cut])

    def test_oversized_length_prefix_raises(self):
        buf = struct.pack("<I", 10) + b"short"
        with pytest.raises(ValueError):
            decode_tuples(buf)

    @settings(max_examples=150, deadline=None)
    @given(st.lists(
        st.tuples(st.binary(max_size=32), st.binary(max_size=64)),
        max_size=40,
    ))
    def test_round_trip_property(self, pairs):
        assert decode_tuples(encode_tuples(pairs)) == pairs
