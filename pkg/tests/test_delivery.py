import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from statecc.channel import BlockState
from statecc.core import SchemeParams, derive_params, rank_of
from statecc.delivery import (
    TRANSCRIPT_HEADER,
    block_budget,
    decode_block,
    encode_block,
    latency,
    run_delivery,
    validate_demands,
    write_transcript,
    xor_padded,
)
from statecc.placement import CacheContent, FileLibrary, build_caches, split_files

from conftest import single_state


def bits(s):
    return np.array([int(c) for c in s], dtype=np.uint8)


def _params(K, t, eps=0.0, T_s=100):
    return SchemeParams(K=K, t=t, D=K, R=1.0, M=0.0, T_s=T_s, B=10, eps=eps)


# -- budgets -----------------------------------------------------------------------


def test_budget_state_adaptive():
    ch = single_state([2.0, 2.0])
    G = rank_of((1, 2), 2)
    assert block_budget("state-adaptive", BlockState(1, state=0), 1, G, _params(2, 1), ch) == 200


def test_budget_blockwise_min():
    ch = single_state([2.0, 1.2])
    G = rank_of((1, 2), 2)
    for k in (1, 2):
        assert block_budget("blockwise", BlockState(1, state=0), k, G, _params(2, 1), ch) == 120


def test_budget_clamped_at_zero():
    ch = single_state([0.01, 0.01])
    G = rank_of((1,), 2)
    assert block_budget("state-adaptive", BlockState(1, state=0), 1, G, _params(2, 0, eps=1.0), ch) == 0


def test_budget_requires_scheduled_receiver():
    ch = single_state([1.0, 1.0])
    with pytest.raises(ValueError):
        block_budget("state-adaptive", BlockState(1, state=0), 2, rank_of((1,), 2), _params(2, 0), ch)


# -- XOR coding --------------------------------------------------------------------


def test_xor_right_padding():
    assert xor_padded([bits("101"), bits("11")]).tolist() == [0, 1, 1]
    assert xor_padded([bits("1011")]).tolist() == [1, 0, 1, 1]
    assert len(xor_padded([bits(""), bits("")])) == 0
    assert len(xor_padded([])) == 0


def _two_user_setup(w1, w2):
    """K=2, t=1: receiver k caches Q[d, {k}] and needs Q[d_k, {other}]."""
    K = 2
    q = max(len(w1), len(w2))
    p = SchemeParams(K=K, t=1, D=2, R=1.0, M=0.0, T_s=2 * q, B=1, nR_bits=2 * q)
    f1 = np.concatenate([np.zeros(q, np.uint8), np.pad(w1, (0, q - len(w1)))])
    f2 = np.concatenate([np.pad(w2, (0, q - len(w2))), np.zeros(q, np.uint8)])
    store = split_files(FileLibrary([f1, f2]), p)
    return p, store, build_caches(store, p)


def test_encode_decode_three_bit_example():
    p, store, caches = _two_user_setup(bits("101"), bits("11"))
    G = rank_of((1, 2), 2)
    demands = (1, 2)
    budgets = {1: 3, 2: 2}
    payload, segs = encode_block(store, demands, G, budgets, 2)
    assert payload.tolist() == [0, 1, 1]
    assert decode_block(1, payload, caches[0], G, demands, budgets, {}, p.queue_bits, 2).tolist() == [1, 0, 1]
    assert decode_block(2, payload, caches[1], G, demands, budgets, {}, p.queue_bits, 2).tolist() == [1, 1]


def test_t0_uncoded():
    p = SchemeParams(K=2, t=0, D=1, R=1.0, M=0.0, T_s=4, B=1, nR_bits=4)
    store = split_files(FileLibrary([bits("1011")]), p)
    G = rank_of((1,), 2)
    payload, _ = encode_block(store, (1, 1), G, {1: 4}, 2)
    assert payload.tolist() == [1, 0, 1, 1]
    got = decode_block(1, payload, CacheContent(1), G, (1, 1), {1: 4}, {}, 4, 2)
    assert got.tolist() == [1, 0, 1, 1]


def test_empty_queues_empty_payload():
    p, store, caches = _two_user_setup(bits("1"), bits("1"))
    G = rank_of((1, 2), 2)
    store.pop(1, 1, 2, 1)
    store.pop(2, 2, 1, 1)
    payload, segs = encode_block(store, (1, 2), G, {1: 5, 2: 5}, 2)
    assert len(payload) == 0 and all(len(s) == 0 for s in segs.values())


def test_unscheduled_receiver_gets_nothing():
    p, store, caches = _two_user_setup(bits("1"), bits("1"))
    G = rank_of((1,), 2)
    assert decode_block(2, np.zeros(1, np.uint8), caches[1], G, (1, 2), {1: 1}, {}, 1, 2) is None


@given(st.integers(2, 5).flatmap(lambda K: st.tuples(
    st.just(K), st.integers(1, K - 1), st.integers(1, 40), st.data())))
@settings(max_examples=60, deadline=None)
def test_xor_roundtrip_property(case):
    K, t, q, data = case
    D = K
    C = SchemeParams(K=K, t=t, D=D, R=1.0, M=0.0, T_s=10**6, B=1, nR_bits=q * math.comb(K, t))
    lib = FileLibrary.random(D, C.nR_bits, data.draw(st.integers(0, 2**32)))
    store = split_files(lib, C)
    caches = build_caches(store, C)
    members = tuple(sorted(data.draw(st.permutations(range(1, K + 1)))[: t + 1]))
    G = rank_of(members, K)
    demands = tuple(data.draw(st.integers(1, D)) for _ in range(K))
    budgets = {k: data.draw(st.integers(0, q + 3)) for k in members}
    payload, segs = encode_block(store, demands, G, budgets, K)
    for k in members:
        got = decode_block(k, payload, caches[k - 1], G, demands, budgets, {}, q, K)
        assert np.array_equal(got, segs[k])


# -- latency -----------------------------------------------------------------------


def test_latency_closed_form_equal_deliveries():
    ch = single_state([2.0, 2.0])
    params = derive_params(2, 1, 2, 100, 4, 0.0, ch)
    report, tr = run_delivery("state-adaptive", "opportunistic", ch, params, (1, 2), seed=0)
    assert (tr.credited == 200).all()
    assert report.L_bit == 100 * (4 + 1) / 2 == 250
    assert report.rho == pytest.approx(250 / 400)


def test_latency_function():
    m = np.array([[1, 1], [0, 2]])
    L, rho = latency(m, 10, 2)
    assert L == pytest.approx((1 * 1 + 1 * 2 + 2 * 2) * 10 / (2 * 2))
    assert rho == pytest.approx(L / 20)


@pytest.mark.parametrize("policy", ["opportunistic", "time-shared"])
def test_ergodic_rho_one(two_state, policy):
    params = derive_params(2, 1, 2, 100, 500, 0.01, two_state, scheme="ergodic", policy=policy, margin=0.03)
    report, tr = run_delivery("ergodic", policy, two_state, params, (1, 2), seed=4)
    assert report.rho == 1.0
    assert (tr.credited[:, :-1] == 0).all()


@pytest.mark.parametrize("scheme", ["state-adaptive", "blockwise", "ergodic"])
@pytest.mark.parametrize("demands", [(1, 2, 3), (2, 2, 1), (3, 3, 3)])
def test_end_to_end_reconstruction(fig1_model, fig1_solutions, scheme, demands):
    key = ("blockwise" if scheme == "blockwise" else "state-adaptive", "opportunistic", 1)
    sol = fig1_solutions[key]
    params = derive_params(3, 1, 3, 100, 2000, 0.01, fig1_model, scheme=scheme, margin=0.03, power=sol)
    lib = FileLibrary.random(3, params.nR_bits, 21)
    report, _ = run_delivery(scheme, "opportunistic", fig1_model, params, demands, seed=21, power=sol,
                             library=lib, collect=True)
    assert report.all_decoded
    for k, f in enumerate(report.files, start=1):
        want = lib.file(demands[k - 1])
        got = f >= 0
        assert np.array_equal(f[got], want[got])
        assert (~got).sum() <= 0.02 * params.needed_bits


def test_same_seed_same_transcript(two_state):
    params = derive_params(2, 1, 2, 100, 300, 0.01, two_state, margin=0.03)
    a = run_delivery("state-adaptive", "opportunistic", two_state, params, (1, 2), seed=3)[1]
    b = run_delivery("state-adaptive", "opportunistic", two_state, params, (1, 2), seed=3)[1]
    assert np.array_equal(a.budgets, b.budgets) and np.array_equal(a.states, b.states)


def test_schemes_share_state_sequence(two_state):
    params = derive_params(2, 1, 2, 100, 300, 0.01, two_state, margin=0.03)
    a = run_delivery("state-adaptive", "opportunistic", two_state, params, (1, 2), seed=3)[1]
    b = run_delivery("blockwise", "opportunistic", two_state, params, (1, 2), seed=3)[1]
    assert np.array_equal(a.states, b.states)
    assert (b.budgets <= a.budgets).all()


def test_validate_demands():
    assert validate_demands([1, 2], 2, 2) == (1, 2)
    with pytest.raises(ValueError):
        validate_demands([1], 2, 2)
    with pytest.raises(ValueError):
        validate_demands([1, 3], 2, 2)


def test_write_transcript(tmp_path, two_state):
    params = derive_params(2, 1, 2, 100, 5, 0.01, two_state, margin=0.03)
    _, tr = run_delivery("state-adaptive", "opportunistic", two_state, params, (1, 2), seed=0)
    path = tmp_path / "t.csv"
    write_transcript(path, [tr])
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == TRANSCRIPT_HEADER
    assert len(rows) == 1 + 5 * 2
    assert rows[1][TRANSCRIPT_HEADER.index("state")] in ("A", "B")
