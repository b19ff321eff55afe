"""Uncoded cache placement: file splitting and per-receiver cache contents."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .core import PURPOSE_FILES, SchemeParams, SubsetIndex, enumerate_subsets, substream


@dataclass
class FileLibrary:
    """``D`` equal-length random bit strings (uint8 arrays of 0/1), ids 1..D."""

    files: list[np.ndarray]

    @classmethod
    def random(cls, D: int, bits: int, seed: int) -> "FileLibrary":
        return cls([substream(seed, PURPOSE_FILES, d).integers(0, 2, bits, dtype=np.uint8) for d in range(1, D + 1)])

    def __post_init__(self) -> None:
        if len({len(f) for f in self.files}) > 1:
            raise ValueError("all files must have the same length")

    @property
    def D(self) -> int:
        return len(self.files)

    def file(self, d: int) -> np.ndarray:
        return self.files[d - 1]


class QueueStore:
    """The C(K,t) queues ``Q[d, G]`` of every file, with read cursors.

    A cursor is kept per (receiver, subset) so that two receivers demanding
    the same file each read the shared queue from the start.  With distinct
    demands this is the same as one cursor per queue.
    """

    def __init__(self, queues: dict[tuple[int, int], np.ndarray], subsets: list[SubsetIndex]):
        self.queues = queues
        self.subsets = subsets
        self._cursor: dict[tuple[int, int], int] = {}

    def bits(self, d: int, rank: int) -> np.ndarray:
        return self.queues[d, rank]

    def length(self, d: int, rank: int) -> int:
        return len(self.queues[d, rank])

    def cursor(self, k: int, rank: int) -> int:
        return self._cursor.get((k, rank), 0)

    def remaining(self, k: int, d: int, rank: int) -> int:
        return self.length(d, rank) - self.cursor(k, rank)

    def pop(self, k: int, d: int, rank: int, count: int) -> np.ndarray:
        """Next ``count`` bits of ``Q[d, rank]`` for receiver ``k`` (fewer at the end)."""
        start = self.cursor(k, rank)
        seg = self.queues[d, rank][start : start + max(count, 0)]
        self._cursor[k, rank] = start + len(seg)
        return seg


@dataclass
class CacheContent:
    """Bits stored at receiver ``k``: every queue whose subset contains ``k``."""

    k: int
    queues: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    @property
    def total_bits(self) -> int:
        return sum(len(v) for v in self.queues.values())

    def __contains__(self, key) -> bool:
        return key in self.queues


def split_files(library: FileLibrary, params: SchemeParams) -> QueueStore:
    """Cut every file into C(K,t) contiguous equal segments, in subset rank order."""
    subsets = enumerate_subsets(params.K, params.t)
    for f in library.files:
        if len(f) != params.nR_bits or len(f) % len(subsets):
            raise RuntimeError(f"file length {len(f)} does not split into {len(subsets)} equal queues")
    q = params.queue_bits
    queues = {
        (d, s.rank): library.file(d)[(s.rank - 1) * q : s.rank * q]
        for d in range(1, library.D + 1)
        for s in subsets
    }
    return QueueStore(queues, subsets)


def build_caches(store: QueueStore, params: SchemeParams) -> list[CacheContent]:
    """Receiver k stores (a copy of) Q[d, G] for every file d and every G containing k."""
    caches = [CacheContent(k) for k in range(1, params.K + 1)]
    for (d, rank), bits in store.queues.items():
        for k in store.subsets[rank - 1].members:
            caches[k - 1].queues[d, rank] = bits.copy()
    return caches


def dump_layout(params: SchemeParams) -> str:
    """Queue id -> holders and length, as YAML for debugging."""
    rows = [
        {"subset": list(s.members), "rank": s.rank, "holders": list(s.members), "bits_per_file": params.queue_bits}
        for s in enumerate_subsets(params.K, params.t)
    ]
    doc = {"K": params.K, "t": params.t, "D": params.D, "nR_bits": params.nR_bits, "queues": rows}
    return yaml.safe_dump(doc, sort_keys=False)
