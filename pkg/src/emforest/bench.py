"""Desk-scale benchmarks mirroring the performance figures.

Every function returns ``BenchRecord`` rows; ``write_csv`` renders them with
header ``metric,param,value,reps,stddev``. Timings use ``time.perf_counter``
with the cyclic GC paused, discard one warm-up run and report the median of
``reps`` runs.
"""

from __future__ import annotations

import csv
import gc
import io
import random
import statistics
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TextIO

from .audit import Registry, VersionMetadata, batch_audit, make_challenge
from .crypto import BLOCK_SIZE, EncryptedBlock, FileKey, PlainBlock, chunk_file, decrypt_block, encrypt_block
from .forest import Forest, build_initial_tree, retrieve_version, update_block
from .store import open_store

MIB = 1024 * 1024
CSV_HEADER = ("metric", "param", "value", "reps", "stddev")
DEFAULT_SIZES = (8, 16, 32, 64)
DEFAULT_VERSION_COUNTS = (1, 2, 4, 8, 16)
DEFAULT_AUDIT_COUNTS = (400, 600, 800, 1000)


@dataclass(frozen=True)
class BenchRecord:
    metric: str
    param: float
    value: float
    reps: int
    stddev: float
    unit: str = "s"

    def row(self) -> tuple[str, str, str, str, str]:
        fmt = "{:.6f}" if self.unit == "s" else "{:.0f}"
        param = f"{self.param:g}"
        return (self.metric, param, fmt.format(self.value), str(self.reps), fmt.format(self.stddev))


def write_csv(records: Iterable[BenchRecord], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for rec in records:
        writer.writerow(rec.row())


def to_csv(records: Iterable[BenchRecord]) -> str:
    buf = io.StringIO()
    write_csv(records, buf)
    return buf.getvalue()


def synthetic_blocks(size_bytes: int, seed: int) -> list[EncryptedBlock]:
    """Seeded pseudo-random file content, chunked and encrypted."""
    rng = random.Random(seed)
    content = random.Random(seed ^ 0x5EED).randbytes(size_bytes)
    key = FileKey(rng.randbytes(32))
    return [encrypt_block(b, key, rng.randbytes) for b in chunk_file(content)]


@contextmanager
def _gc_paused():
    # Same policy as timeit: cyclic collections scale with the live heap and
    # would add size-dependent noise to every sample.
    enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


def _timed(fn: Callable[[], object], reps: int) -> tuple[float, float]:
    fn()  # warm-up, discarded
    samples = []
    for _ in range(reps):
        with _gc_paused():
            start = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - start)
    return statistics.median(samples), statistics.stdev(samples) if reps > 1 else 0.0


def _check(params: Sequence[float], reps: int) -> None:
    if list(params) != sorted(params):
        raise ValueError("benchmark parameters must be ascending")
    if reps < 3:
        raise ValueError("timing benchmarks need at least 3 repetitions")


def bench_tree_creation(sizes: Sequence[float] = DEFAULT_SIZES, seed: int = 0,
                        reps: int = 3) -> list[BenchRecord]:
    _check(sizes, reps)
    records = []
    for size in sizes:
        blocks = synthetic_blocks(int(size * MIB), seed)
        median, sd = _timed(lambda: build_initial_tree(Forest(), blocks), reps)
        records.append(BenchRecord("tree_creation", size, median, reps, sd))
    return records


def bench_retrieval(sizes: Sequence[float] = DEFAULT_SIZES, seed: int = 0,
                    reps: int = 3) -> list[BenchRecord]:
    """Traverse the version's tree, decrypt every leaf and reassemble the file."""
    _check(sizes, reps)
    key = FileKey(random.Random(seed).randbytes(32))
    records = []
    for size in sizes:
        forest = Forest()
        build_initial_tree(forest, synthetic_blocks(int(size * MIB), seed))

        def run() -> bytes:
            return b"".join(decrypt_block(b, key).data for b in retrieve_version(forest, 0))

        median, sd = _timed(run, reps)
        records.append(BenchRecord("retrieval", size, median, reps, sd))
    return records


def bench_block_update(sizes: Sequence[float] = DEFAULT_SIZES, seed: int = 0,
                       reps: int = 3, batch_fraction: float = 0.01) -> list[BenchRecord]:
    """Seconds per single-block update, timed over batches of 1% of the blocks.

    Batch indices are distinct, drawn uniformly; the metric name records that.
    """
    _check(sizes, reps)
    records = []
    rng = random.Random(seed)
    key = FileKey(rng.randbytes(32))
    for size in sizes:
        blocks = synthetic_blocks(int(size * MIB), seed)
        n = len(blocks)
        forest = Forest()
        build_initial_tree(forest, blocks)
        batch = max(1, round(n * batch_fraction))

        def run() -> float:
            picks = rng.sample(range(n), batch)
            new = [
                encrypt_block(PlainBlock(i, rng.randbytes(len(blocks[i].ciphertext)), i == n - 1),
                              key, rng.randbytes)
                for i in picks
            ]
            with _gc_paused():
                start = time.perf_counter()
                for i, b in zip(picks, new):
                    update_block(forest, forest.latest, i, b)
                return (time.perf_counter() - start) / batch

        run()  # warm-up
        samples = [run() for _ in range(reps)]
        records.append(BenchRecord("block_update_distinct", size, statistics.median(samples),
                                   reps, statistics.stdev(samples)))
    return records


def bench_storage_overhead(version_counts: Sequence[int] = DEFAULT_VERSION_COUNTS,
                           size_mib: float = 64, seed: int = 0) -> list[BenchRecord]:
    """Incremental on-disk bytes after k single-block updates, relative to version 0."""
    _check(version_counts, 3)
    rng = random.Random(seed)
    blocks = synthetic_blocks(int(size_mib * MIB), seed)
    n = len(blocks)
    key = FileKey(rng.randbytes(32))
    records = []
    with tempfile.TemporaryDirectory() as tmp, open_store(tmp) as store:
        forest = store.forest()
        store.commit(build_initial_tree(forest, blocks), sum(len(b.ciphertext) for b in blocks))
        baseline = store.disk_usage()
        done = 0
        for target in version_counts:
            while done < target:
                i = rng.randrange(n - 1)
                block = encrypt_block(PlainBlock(i, rng.randbytes(BLOCK_SIZE), False), key, rng.randbytes)
                store.commit(update_block(forest, forest.latest, i, block), store.records[-1].original_length)
                done += 1
            records.append(BenchRecord("storage_overhead", target, store.disk_usage() - baseline,
                                       1, 0.0, unit="bytes"))
    return records


def bench_audit(block_counts: Sequence[int] = DEFAULT_AUDIT_COUNTS, size_mib: float = 64,
                seed: int = 0, reps: int = 3) -> list[BenchRecord]:
    """Batch challenge-prove-verify time for a given number of challenged blocks."""
    _check(block_counts, reps)
    forest = Forest()
    root = build_initial_tree(forest, synthetic_blocks(int(size_mib * MIB), seed))
    registry = Registry()
    registry.register(VersionMetadata(0, root.root, root.leaf_count))
    rng = random.Random(seed)
    records = []
    for count in block_counts:
        challenges = [make_challenge(registry, rng) for _ in range(count)]
        median, sd = _timed(lambda: batch_audit(registry, forest, challenges), reps)
        records.append(BenchRecord("audit", count, median, reps, sd))
    return records
