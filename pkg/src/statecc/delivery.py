"""Block-by-block delivery for the state-adaptive, blockwise and ergodic schemes.

Each coherence block the transmitter picks the active set ``G`` (the t+1
strongest users, or every (t+1)-subset in turn under time sharing), pulls
``mu_k`` bits for each ``k in G`` from queue ``Q[d_k, G - {k}]``, and sends
the zero-padded XOR of those segments.  Receiver ``k`` holds every
``Q[d_i, G - {i}]`` with ``i != k`` in its cache, so it rebuilds the other
segments, XORs them out and keeps its own.

The physical layer is abstracted: a payload no longer than ``T_s * r(s_b)``
bits reaches every scheduled receiver without error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import analytics
from .kernels import waterfill_power
from .channel import BlockState, DiscreteStateChannel, FadingModel, sample_states, schedule_many
from .core import (
    PURPOSE_STATES,
    POLICIES,
    SCHEMES,
    SchemeParams,
    SubsetIndex,
    enumerate_subsets,
    rank_of,
    substream_key,
)
from .placement import CacheContent, FileLibrary, QueueStore, build_caches, split_files

# guards floor() against representation error, e.g. 100 * (2 - 0.01)
_FLOOR_GUARD = 1e-9


class DecodingError(RuntimeError):
    pass


@lru_cache(maxsize=None)
def _rank_without(members: tuple[int, ...], k: int, K: int) -> int:
    return rank_of(tuple(j for j in members if j != k), K).rank


def _floor_bits(x: float) -> int:
    return max(int(math.floor(x + _FLOOR_GUARD)), 0)


def _state_rates(state: BlockState, G: SubsetIndex, channel, power) -> dict[int, float]:
    if isinstance(channel, DiscreteStateChannel):
        return {k: float(channel.rates[state.state, k - 1]) for k in G.members}
    if power is None:
        raise ValueError("fading channels need a calibrated power rule")
    return power.user_rates(state.gains, G.members)


def block_budget(scheme: str, state: BlockState, k: int, G: SubsetIndex, params: SchemeParams,
                 channel, power=None, length: float | None = None) -> int:
    """Bits pulled for receiver ``k`` in a slot of ``length`` channel uses (default T_s).

    State-adaptive and ergodic use ``k``'s own rate, blockwise the weakest
    rate in ``G``; both minus the back-off ``eps (K-t)/(t+1)``, floored and
    clamped at zero.
    """
    if k not in G:
        raise ValueError(f"receiver {k} is not scheduled in {G.members}")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    rates = _state_rates(state, G, channel, power)
    rate = min(rates.values()) if scheme == "blockwise" else rates[k]
    L = params.T_s if length is None else length
    return _floor_bits(L * (rate - params.budget_backoff))


def xor_padded(segments: Sequence[np.ndarray]) -> np.ndarray:
    """XOR of bit arrays after right-padding with zeros to the longest."""
    out = np.zeros(max((len(s) for s in segments), default=0), dtype=np.uint8)
    for s in segments:
        out[: len(s)] ^= s
    return out


def encode_block(queues: QueueStore, demands: Sequence[int], G: SubsetIndex, budgets: dict[int, int], K: int):
    """Pop each scheduled receiver's segment and XOR them.

    Returns ``(payload, segments)``.  A queue that runs short yields a short
    (possibly empty) segment; the missing tail counts as zero padding.
    """
    segments = {}
    for k in G.members:
        rank = _rank_without(G.members, k, K)
        segments[k] = queues.pop(k, demands[k - 1], rank, budgets[k])
    return xor_padded(list(segments.values())), segments


def segment_lengths(G: SubsetIndex, budgets: dict[int, int], cursors: dict, queue_bits: int, K: int) -> dict[int, int]:
    """Useful length of every scheduled segment, from public information only."""
    out = {}
    for i in G.members:
        rank = _rank_without(G.members, i, K)
        out[i] = min(budgets[i], queue_bits - cursors.get((i, rank), 0))
    return out


def decode_block(k: int, payload: np.ndarray, cache: CacheContent, G: SubsetIndex, demands: Sequence[int],
                 budgets: dict[int, int], cursors: dict, queue_bits: int, K: int):
    """Recover receiver ``k``'s segment from the payload and its cache.

    ``cursors`` maps (receiver, subset rank) to the read position every
    terminal can track from past schedules and budgets.  Returns ``None`` if
    ``k`` is not scheduled.
    """
    if k not in G:
        return None
    lengths = segment_lengths(G, budgets, cursors, queue_bits, K)
    side = []
    for i in G.members:
        if i == k:
            continue
        rank = _rank_without(G.members, i, K)
        key = (demands[i - 1], rank)
        if key not in cache:
            raise DecodingError(f"receiver {k} lacks queue {key} needed to cancel receiver {i}")
        start = cursors.get((i, rank), 0)
        side.append(cache.queues[key][start : start + lengths[i]])
    interference = xor_padded(side)
    if len(payload) < max(lengths.values()):
        raise DecodingError("payload shorter than the scheduled segments")
    own = payload.copy()
    own[: len(interference)] ^= interference
    return own[: lengths[k]]


@dataclass
class Transcript:
    """Per-block record of one run; arrays are indexed [receiver-1, block-1]."""

    scheme: str
    policy: str
    trial: int
    T_s: int
    states: np.ndarray
    schedules: list
    budgets: np.ndarray
    retrieved: np.ndarray
    credited: np.ndarray
    transport_rate: np.ndarray
    payload_bits: np.ndarray
    state_names: tuple = ()
    t: int = 0
    demands: tuple = ()


@dataclass
class LatencyReport:
    scheme: str
    policy: str
    K: int
    t: int
    T_s: int
    B: int
    needed_bits: int
    credited: np.ndarray = field(repr=False)
    L_bit: float = 0.0
    rho: float = 0.0
    delivered: np.ndarray = field(default=None, repr=False)
    residual_fraction: np.ndarray = field(default=None, repr=False)
    slots: int = 0
    slots_decoded: int = 0
    offered_rate: float = 0.0
    offered_rate_se: float = 0.0
    useful_rate: float = 0.0
    files: list | None = field(default=None, repr=False)

    @property
    def all_decoded(self) -> bool:
        return self.slots == self.slots_decoded


def latency(credited: np.ndarray, T_s: int, needed_bits: int) -> tuple[float, float]:
    """(L_bit, rho) from credited bits ``m[k, b]``, normalised by the non-cached bits."""
    K, B = credited.shape
    if needed_bits <= 0:
        return 0.0, 0.0
    weights = np.arange(1, B + 1, dtype=np.int64)
    total = int(sum(int(np.dot(credited[k].astype(np.int64), weights)) for k in range(K)))
    L_bit = total * T_s / (K * needed_bits)
    return L_bit, L_bit / (B * T_s)


def _slot_plan(channel, power, states: np.ndarray, t: int, policy: str):
    """Members (0-based) and per-user rates for every slot type, over all blocks."""
    K = channel.K
    B = len(states)
    if policy == "opportunistic":
        subsets = enumerate_subsets(K, t + 1)
        ranks = schedule_many(channel, states, t)
        members = np.array([[k - 1 for k in s.members] for s in subsets], dtype=np.intp)[ranks]
        plans = [(ranks, members)]
    else:
        plans = []
        for i, s in enumerate(enumerate_subsets(K, t + 1)):
            plans.append((np.full(B, i), np.broadcast_to(np.array([k - 1 for k in s.members]), (B, t + 1))))
    out = []
    for ranks, members in plans:
        if isinstance(channel, DiscreteStateChannel):
            rates = channel.rates[states[:, None], members]
        else:
            g = np.take_along_axis(states, members, axis=1)
            inputs = analytics._slot_inputs(states, members, power.mode)
            p = waterfill_power(inputs, power.lam)
            rates = np.log2(1.0 + g * p[:, None])
        out.append((ranks, members, rates))
    return out


def validate_demands(demands: Sequence[int], K: int, D: int) -> tuple[int, ...]:
    demands = tuple(int(d) for d in demands)
    if len(demands) != K:
        raise ValueError(f"need one demand per receiver ({K}), got {len(demands)}")
    if any(d < 1 or d > D for d in demands):
        raise ValueError(f"demands must lie in 1..{D}, got {demands}")
    return demands


def run_delivery(scheme: str, policy: str, channel, params: SchemeParams, demands: Sequence[int], seed: int,
                 *, power=None, trial: int = 0, library: FileLibrary | None = None,
                 calibration_samples: int = 200_000, collect: bool = False):
    """Place, deliver over ``B`` blocks, decode, and account latency.

    Returns ``(LatencyReport, Transcript)``.  The state sequence depends only
    on ``(seed, trial)``, so runs of different schemes with the same seed see
    identical channel realisations.  With ``collect`` the report also carries
    every receiver's reconstructed file (see :func:`reconstruct`).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    K, t, T_s, B = params.K, params.t, params.T_s, params.B
    if channel.K != K:
        raise ValueError("channel and parameters disagree on K")
    demands = validate_demands(demands, K, params.D)
    if isinstance(channel, FadingModel) and power is None:
        power = analytics.calibrate_lambda(channel, t, calibration_samples, scheme=scheme, policy=policy, seed=seed)

    library = library or FileLibrary.random(params.D, params.nR_bits, seed)
    store = split_files(library, params)
    caches = build_caches(store, params)

    states = sample_states(channel, np.arange(1, B + 1), substream_key(seed, PURPOSE_STATES, trial))
    plan = _slot_plan(channel, power, states, t, policy)
    subsets = enumerate_subsets(K, t + 1)
    slot_len = T_s / len(plan)
    backoff = params.budget_backoff
    q = params.queue_bits

    budgets = np.zeros((K, B), dtype=np.int64)
    retrieved = np.zeros((K, B), dtype=np.int64)
    transport = np.zeros((len(plan), B))
    payload_bits = np.zeros((len(plan), B), dtype=np.int64)
    slot_budgets = []
    for ranks, members, rates in plan:
        if scheme == "blockwise":
            eff = np.repeat(rates.min(axis=1, keepdims=True), t + 1, axis=1)
        else:
            eff = rates
        slot_budgets.append(np.maximum(np.floor(slot_len * (eff - backoff) + _FLOOR_GUARD), 0).astype(np.int64))

    cursors: dict = {}
    recovered: dict = {}
    slots = decoded = 0
    for b in range(B):
        for j, (ranks, members, rates) in enumerate(plan):
            G = subsets[ranks[b]]
            mu = {int(k) + 1: int(x) for k, x in zip(members[b], slot_budgets[j][b])}
            lengths = segment_lengths(G, mu, cursors, q, K)
            payload, segments = encode_block(store, demands, G, mu, K)
            transport[j, b] = rates[b].max() - backoff
            payload_bits[j, b] = len(payload)
            if len(payload) > max(slot_len * transport[j, b], 0.0) + _FLOOR_GUARD:
                raise DecodingError("payload exceeds the block's transport budget")
            ok = True
            for k in G.members:
                w_hat = decode_block(k, payload, caches[k - 1], G, demands, mu, cursors, q, K)
                if len(w_hat) != len(segments[k]) or not np.array_equal(w_hat, segments[k]):
                    ok = False
                if collect and len(w_hat):
                    recovered.setdefault((k, _rank_without(G.members, k, K)), []).append(w_hat)
            slots += 1
            decoded += ok
            for k in G.members:
                rank = _rank_without(G.members, k, K)
                cursors[k, rank] = cursors.get((k, rank), 0) + lengths[k]
                if cursors[k, rank] != store.cursor(k, rank):
                    raise DecodingError("public cursor view diverged from the transmitter")
                budgets[k - 1, b] += mu[k]
                retrieved[k - 1, b] += lengths[k]

    if scheme == "ergodic":
        credited = np.zeros_like(retrieved)
        credited[:, -1] = retrieved.sum(axis=1)
    else:
        credited = retrieved
    needed = params.needed_bits
    L_bit, rho = latency(credited, T_s, needed)
    delivered = retrieved.sum(axis=1)
    per_block = budgets.mean(axis=0) / T_s
    report = LatencyReport(
        scheme=scheme, policy=policy, K=K, t=t, T_s=T_s, B=B, needed_bits=needed,
        credited=credited, L_bit=L_bit, rho=rho, delivered=delivered,
        residual_fraction=(needed - delivered) / needed if needed else np.zeros(K),
        slots=slots, slots_decoded=decoded,
        offered_rate=float(per_block.mean()),
        offered_rate_se=float(per_block.std(ddof=1) / math.sqrt(B)) if B > 1 else 0.0,
        useful_rate=float(delivered.mean() / params.n),
        files=reconstruct(recovered, caches, params, demands) if collect else None,
    )
    sched = [tuple(int(plan[j][0][b]) + 1 for j in range(len(plan))) for b in range(B)]
    names = channel.states if isinstance(channel, DiscreteStateChannel) else ()
    transcript = Transcript(scheme, policy, trial, T_s, states, sched, budgets, retrieved, credited,
                            transport, payload_bits, names, t, demands)
    return report, transcript


def reconstruct(recovered: dict, caches: list[CacheContent], params: SchemeParams, demands) -> list[np.ndarray]:
    """Each receiver's view of its file: cached queues plus the recovered segments.

    ``recovered`` maps (receiver, subset rank) to the list of decoded
    segments in delivery order.  Bits never delivered are left at -1.
    """
    q = params.queue_bits
    out = []
    for k in range(1, params.K + 1):
        d = demands[k - 1]
        f = np.full(params.nR_bits, -1, dtype=np.int16)
        for s in enumerate_subsets(params.K, params.t):
            lo = (s.rank - 1) * q
            if k in s:
                f[lo : lo + q] = caches[k - 1].queues[d, s.rank]
            else:
                parts = recovered.get((k, s.rank), [])
                got = np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8)
                f[lo : lo + len(got)] = got
        out.append(f)
    return out


TRANSCRIPT_HEADER = ("trial", "scheme", "policy", "t", "demands", "block", "receiver", "state",
                     "schedule", "budget", "retrieved", "credited")


def transcript_rows(tr: Transcript):
    K, B = tr.budgets.shape
    dem = "|".join(str(d) for d in tr.demands)
    for b in range(B):
        sched = "|".join(str(r) for r in tr.schedules[b])
        for k in range(K):
            if tr.states.ndim == 2:
                state = repr(float(tr.states[b, k]))
            else:
                state = tr.state_names[int(tr.states[b])]
            yield (tr.trial, tr.scheme, tr.policy, tr.t, dem, b + 1, k + 1, state, sched,
                   int(tr.budgets[k, b]), int(tr.retrieved[k, b]), int(tr.credited[k, b]))


def write_transcript(path, transcripts: Sequence[Transcript]) -> None:
    """CSV with one row per (trial, block, receiver); see TRANSCRIPT_HEADER."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRANSCRIPT_HEADER)
        for tr in transcripts:
            w.writerows(transcript_rows(tr))
