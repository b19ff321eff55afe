import math

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from statecc.core import SchemeParams, enumerate_subsets, rank_of
from statecc.placement import FileLibrary, build_caches, dump_layout, split_files


def _params(K, t, D, nbits):
    return SchemeParams(K=K, t=t, D=D, R=1.0, M=0.0, T_s=nbits, B=1, nR_bits=nbits)


def test_split_k3_t1():
    f = np.array([1, 0, 1, 1, 1, 0, 0, 0, 1], dtype=np.uint8)
    store = split_files(FileLibrary([f]), _params(3, 1, 1, 9))
    assert [store.bits(1, r).tolist() for r in (1, 2, 3)] == [[1, 0, 1], [1, 1, 0], [0, 0, 1]]


def test_split_t0_whole_file():
    f = np.arange(8, dtype=np.uint8) % 2
    store = split_files(FileLibrary([f]), _params(3, 0, 1, 8))
    assert np.array_equal(store.bits(1, 1), f)


def test_split_k4_t2():
    store = split_files(FileLibrary.random(1, 60, 0), _params(4, 2, 1, 60))
    assert len(store.subsets) == 6
    assert all(store.length(1, s.rank) == 10 for s in store.subsets)


def test_split_rejects_bad_length():
    with pytest.raises(RuntimeError):
        split_files(FileLibrary.random(1, 10, 0), _params(3, 1, 1, 9))


@pytest.mark.parametrize(
    "t, cached",
    [(1, [(1,)]), (2, [(1, 2), (1, 3)])],
)
def test_receiver1_cache(t, cached):
    p = _params(3, t, 1, 3 * math.comb(3, t))
    caches = build_caches(split_files(FileLibrary.random(1, p.nR_bits, 0), p), p)
    got = sorted(enumerate_subsets(3, t)[rank - 1].members for (_, rank) in caches[0].queues)
    assert got == cached


def test_t0_caches_empty():
    p = _params(3, 0, 2, 12)
    caches = build_caches(split_files(FileLibrary.random(2, 12, 0), p), p)
    assert all(c.total_bits == 0 for c in caches)
    assert p.cached_bits == 0


@given(st.integers(1, 6).flatmap(lambda K: st.tuples(st.just(K), st.integers(0, K - 1), st.integers(1, 3),
                                                     st.integers(1, 5))))
@settings(max_examples=60, deadline=None)
def test_membership_and_size_identities(case):
    K, t, D, q = case
    C = math.comb(K, t)
    p = _params(K, t, D, C * q)
    lib = FileLibrary.random(D, p.nR_bits, 1)
    store = split_files(lib, p)
    caches = build_caches(store, p)
    for c in caches:
        for s in enumerate_subsets(K, t):
            for d in range(1, D + 1):
                assert ((d, s.rank) in c) == (c.k in s)
        # D * C(K-1, t-1) queues of q bits = M * n bits
        assert c.total_bits == D * (math.comb(K - 1, t - 1) if t else 0) * q == p.cached_bits
    for d in range(1, D + 1):
        assert np.array_equal(np.concatenate([store.bits(d, s.rank) for s in store.subsets]), lib.file(d))
        missing = sum(store.length(d, s.rank) for s in store.subsets if 1 not in s)
        assert missing == p.needed_bits


def test_queue_cursors_are_per_receiver():
    p = _params(2, 1, 1, 8)
    store = split_files(FileLibrary.random(1, 8, 2), p)
    a = store.pop(1, 1, 2, 3)
    b = store.pop(2, 1, 2, 3)
    assert np.array_equal(a, b)
    assert store.remaining(1, 1, 2) == 1
    assert len(store.pop(1, 1, 2, 10)) == 1
    assert len(store.pop(1, 1, 2, 10)) == 0


def test_library_random_deterministic():
    a = FileLibrary.random(2, 50, 7)
    b = FileLibrary.random(2, 50, 7)
    assert all(np.array_equal(x, y) for x, y in zip(a.files, b.files))
    assert not np.array_equal(a.file(1), a.file(2))
    with pytest.raises(ValueError):
        FileLibrary([np.zeros(3, np.uint8), np.zeros(4, np.uint8)])


def test_dump_layout():
    doc = yaml.safe_load(dump_layout(_params(3, 1, 2, 9)))
    assert [q["holders"] for q in doc["queues"]] == [[1], [2], [3]]
    assert doc["queues"][1]["rank"] == rank_of((2,), 3).rank
