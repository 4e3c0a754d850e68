"""Word count over the in-memory engine.

The reduce step sums ASCII integers, so it is associative and exact and
doubles as a combiner without changing any output byte.
"""

from __future__ import annotations

import numpy as np

from ..memory import BatchMapFunction
from .bench import rows_from_stats


def map_words(key, value):
    """One (word, b"1") per whitespace-separated token."""
    for word in value.split():
        yield word, b"1"


def reduce_counts(key, values):
    yield key, str(sum(int(v) for v in values)).encode("ascii")


class BatchWordCount(BatchMapFunction):
    """Whole-partition variant of map_words; same emissions, same order."""

    def process_batch(self, keys, values):
        out_keys = []
        counts = np.empty(len(values), dtype=np.int64)
        for j, value in enumerate(values):
            words = value.split()
            out_keys.extend(words)
            counts[j] = len(words)
        return out_keys, [b"1"] * len(out_keys), counts


def run_wordcount(engine, du, n_partitions, n_reducers,
                  combine=False, batch=False, scenario="wordcount"):
    """Count words in a text data unit; returns (output, bench rows)."""
    imdu = engine.load(du, n_partitions, "lines")
    rows = rows_from_stats(
        scenario, engine.backend.kind, n_partitions, n_reducers, 0, imdu.load_stats
    )
    map_fn = BatchWordCount() if batch else map_words
    out = engine.map_reduce(imdu, map_fn, reduce_counts, n_reducers, combine=combine)
    rows += rows_from_stats(
        scenario, engine.backend.kind, n_partitions, n_reducers, 1, out.job_stats
    )
    engine.release(imdu)
    return out, rows
