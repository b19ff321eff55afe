"""Channel-state processes and the active-set schedulers.

Two state models are supported.  A :class:`DiscreteStateChannel` is a finite
table of states with per-user rates ``I(X;Y_k|S=s)``; a :class:`FadingModel`
is Rayleigh block fading where each block draws ``K`` i.i.d. Exp(1) power
gains ``|h|^2``.

Block states are sampled with a counter-based generator so the state of block
``b`` depends only on ``(seed, b)``.  Trials can therefore be split or
replayed without sharing generator state.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .core import SubsetIndex, enumerate_subsets, rank_of

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniforms(key: int, index: np.ndarray) -> np.ndarray:
    """Uniforms in [0, 1) at positions ``index`` of the SplitMix64 stream for ``key``."""
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = _mix64(np.array([key], dtype=np.uint64))[0]
        z = _mix64(base + (index + np.uint64(1)) * _GAMMA)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


class ChannelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteStateChannel:
    """Finite-state broadcast channel described by its per-user rates.

    ``rates[s, k-1]`` is user k's rate in state s (bits per use) and
    ``order[s]`` lists the users from strongest to weakest.
    """

    states: tuple[str, ...]
    probs: np.ndarray
    rates: np.ndarray
    order: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        rates = np.atleast_2d(np.asarray(self.rates, dtype=float))
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "rates", rates)
        S = len(self.states)
        if probs.shape != (S,) or rates.shape[0] != S:
            raise ChannelError("probs and rates must have one entry per state")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ChannelError(f"state probabilities must be nonnegative and sum to 1, got {probs.sum()!r}")
        if np.any(rates < 0):
            raise ChannelError("rates must be nonnegative")
        K = rates.shape[1]
        if not self.order:
            order = tuple(tuple(int(k) + 1 for k in np.argsort(-row, kind="stable")) for row in rates)
            object.__setattr__(self, "order", order)
        else:
            order = tuple(tuple(int(k) for k in o) for o in self.order)
            object.__setattr__(self, "order", order)
        for s, o in enumerate(self.order):
            if sorted(o) != list(range(1, K + 1)):
                raise ChannelError(f"order of state {self.states[s]!r} is not a permutation of 1..{K}")
            seq = rates[s, [k - 1 for k in o]]
            if np.any(np.diff(seq) > 1e-12):
                raise ChannelError(f"rates of state {self.states[s]!r} increase along its degradation order")

    @property
    def K(self) -> int:
        return self.rates.shape[1]

    @property
    def num_states(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class FadingModel:
    """Rayleigh block fading with average power constraint ``P``."""

    K: int
    P: float
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ChannelError("K must be positive")
        if not self.P > 0:
            raise ChannelError("P must be positive")


@dataclass(frozen=True, eq=False)
class BlockState:
    """State of one coherence block: a discrete state index or per-user gains."""

    b: int
    state: int | None = None
    gains: np.ndarray | None = field(default=None)


@dataclass
class SymmetryReport:
    ok: bool
    witness: tuple[int, ...] | None = None
    state_maps: dict[tuple[int, ...], tuple[int, ...]] = field(default_factory=dict)


def _permute_row(row: np.ndarray, nu: Sequence[int]) -> np.ndarray:
    # out[nu(k)] = row[k]
    out = np.empty_like(row)
    out[[v - 1 for v in nu]] = row
    return out


def _state_map(ch: DiscreteStateChannel, nu: tuple[int, ...], decimals: int = 9) -> tuple[int, ...] | None:
    def key(p, row):
        return (round(float(p), decimals), tuple(np.round(row, decimals).tolist()))

    pool: dict = {}
    for s in range(ch.num_states):
        pool.setdefault(key(ch.probs[s], ch.rates[s]), []).append(s)
    pi = []
    for s in range(ch.num_states):
        candidates = pool.get(key(ch.probs[s], _permute_row(ch.rates[s], nu)))
        if not candidates:
            return None
        pi.append(candidates.pop())
    return tuple(pi)


def validate_symmetry(ch: DiscreteStateChannel) -> SymmetryReport:
    """Check that every user permutation is matched by a state permutation.

    Transpositions generate the symmetric group, and state maps compose, so
    checking all transpositions is enough.  For each one the state map is
    found by matching (probability, permuted rate row) multisets, which is
    exact and polynomial in the number of states.
    """
    K = ch.K
    report = SymmetryReport(ok=True)
    for i, j in itertools.combinations(range(1, K + 1), 2):
        nu = list(range(1, K + 1))
        nu[i - 1], nu[j - 1] = j, i
        nu = tuple(nu)
        pi = _state_map(ch, nu)
        if pi is None:
            return SymmetryReport(ok=False, witness=nu, state_maps=report.state_maps)
        report.state_maps[nu] = pi
    return report


def load_discrete_channel(path: str | Path) -> DiscreteStateChannel:
    """Read a discrete channel description (YAML).

    Layout::

        schema: 1
        kind: discrete
        states:
          - {name: A, prob: 0.5, rates: [2.0, 1.0], order: [1, 2]}
          - {name: B, prob: 0.5, rates: [1.0, 2.0]}
    """
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return discrete_channel_from_dict(doc)


def discrete_channel_from_dict(doc: dict) -> DiscreteStateChannel:
    if not isinstance(doc, dict):
        raise ChannelError("channel description must be a mapping")
    unknown = set(doc) - {"schema", "kind", "states"}
    if unknown:
        raise ChannelError(f"unknown keys in channel description: {sorted(unknown)}")
    if doc.get("schema") != 1 or doc.get("kind", "discrete") != "discrete":
        raise ChannelError("expected schema: 1 and kind: discrete")
    entries = doc.get("states") or []
    if not entries:
        raise ChannelError("channel needs at least one state")
    names, probs, rows, orders = [], [], [], []
    for e in entries:
        extra = set(e) - {"name", "prob", "rates", "order"}
        if extra:
            raise ChannelError(f"unknown keys in state entry: {sorted(extra)}")
        names.append(str(e["name"]))
        probs.append(float(e["prob"]))
        rows.append([float(r) for r in e["rates"]])
        orders.append(e.get("order"))
    if len({len(r) for r in rows}) != 1:
        raise ChannelError("all states need the same number of user rates")
    order: tuple = ()
    if any(o is not None for o in orders):
        if not all(o is not None for o in orders):
            raise ChannelError("give an order for every state or for none")
        order = tuple(tuple(o) for o in orders)
    return DiscreteStateChannel(tuple(names), np.array(probs), np.array(rows), order)


# -- sampling -----------------------------------------------------------------


def sample_states(model, blocks: np.ndarray | int, seed: int | None = None) -> np.ndarray:
    """Vectorised block states.

    Returns gains of shape ``(len(blocks), K)`` for fading models and state
    indices of shape ``(len(blocks),)`` for discrete channels.  Block ``b``
    only depends on ``(seed, b)``.
    """
    if isinstance(blocks, (int, np.integer)):
        blocks = np.arange(1, int(blocks) + 1)
    blocks = np.asarray(blocks, dtype=np.uint64)
    if isinstance(model, FadingModel):
        key = model.rng_seed if seed is None else seed
        K = model.K
        idx = blocks[:, None] * np.uint64(K) + np.arange(K, dtype=np.uint64)[None, :]
        return -np.log1p(-counter_uniforms(key, idx))
    if isinstance(model, DiscreteStateChannel):
        u = counter_uniforms(0 if seed is None else seed, blocks)
        cdf = np.cumsum(model.probs)
        return np.minimum(np.searchsorted(cdf, u, side="right"), model.num_states - 1)
    raise TypeError(f"unsupported channel model {type(model).__name__}")


def sample_block_state(model, b: int, seed: int | None = None) -> BlockState:
    drawn = sample_states(model, np.array([b]), seed)
    if isinstance(model, FadingModel):
        return BlockState(b=b, gains=drawn[0])
    return BlockState(b=b, state=int(drawn[0]))


# -- scheduling ---------------------------------------------------------------


def _num_users(state: BlockState, channel) -> int:
    if state.gains is not None:
        return len(state.gains)
    if channel is None:
        raise ValueError("a discrete block state needs its channel to be scheduled")
    return channel.K


def schedule(state: BlockState, t: int, channel: DiscreteStateChannel | None = None) -> SubsetIndex:
    """The t+1 strongest users of this block; ties go to the lowest index."""
    K = _num_users(state, channel)
    if t + 1 > K:
        raise ValueError(f"cannot schedule {t + 1} of {K} users")
    if state.gains is not None:
        chosen = np.argsort(-np.asarray(state.gains), kind="stable")[: t + 1] + 1
    else:
        chosen = channel.order[state.state][: t + 1]
    return rank_of(chosen, K)


def schedule_timeshared(state: BlockState, t: int, channel: DiscreteStateChannel | None = None):
    """Every (t+1)-subset with an equal share of the block."""
    K = _num_users(state, channel)
    if t + 1 > K:
        raise ValueError(f"cannot schedule {t + 1} of {K} users")
    subsets = enumerate_subsets(K, t + 1)
    share = Fraction(1, len(subsets))
    return [(s, share) for s in subsets]


def _mask_lookup(K: int, m: int) -> np.ndarray:
    table = np.full(1 << K, -1, dtype=np.intp)
    for i, s in enumerate(enumerate_subsets(K, m)):
        table[sum(1 << (k - 1) for k in s.members)] = i
    return table


def schedule_many(model, states: np.ndarray, t: int) -> np.ndarray:
    """0-based ranks of the scheduled subsets for a batch of block states."""
    K = model.K
    if t + 1 > K:
        raise ValueError(f"cannot schedule {t + 1} of {K} users")
    table = _mask_lookup(K, t + 1)
    if isinstance(model, FadingModel):
        top = np.argsort(-states, axis=1, kind="stable")[:, : t + 1]
        masks = np.bitwise_or.reduce(np.left_shift(1, top), axis=1)
        return table[masks]
    per_state = np.array([table[sum(1 << (k - 1) for k in o[: t + 1])] for o in model.order])
    return per_state[states]


def prob_scheduled(model: DiscreteStateChannel, t: int, k: int = 1) -> float:
    """Pr[k in G(S)] for a discrete channel."""
    return float(sum(p for s, p in enumerate(model.probs) if k in model.order[s][: t + 1]))

