"""Subset indexing, scheme parameters and seeded random substreams."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

# Practical cap: C(20, 10) ~ 184k subsets are enumerated eagerly.
MAX_USERS = 20

SCHEMES = ("state-adaptive", "blockwise", "ergodic")
POLICIES = ("opportunistic", "time-shared")

# Per-purpose substream tags mixed into the root seed.
PURPOSE_FILES = 1
PURPOSE_STATES = 2
PURPOSE_TRIALS = 3
PURPOSE_MONTE_CARLO = 4


@dataclass(frozen=True, order=True)
class SubsetIndex:
    """A subset of users {1..K} together with its 1-based lexicographic rank."""

    rank: int
    members: tuple[int, ...]

    def __contains__(self, k: int) -> bool:
        return k in self.members

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def without(self, k: int) -> tuple[int, ...]:
        return tuple(j for j in self.members if j != k)


def _check_counts(K: int, m: int) -> None:
    if K < 1 or K > MAX_USERS:
        raise ValueError(f"K must be in 1..{MAX_USERS}, got {K}")
    if m < 0 or m > K:
        raise ValueError(f"subset size must be in 0..{K}, got {m}")


def enumerate_subsets(K: int, m: int) -> list[SubsetIndex]:
    """All size-``m`` subsets of {1..K} in lexicographic order, ranks from 1."""
    _check_counts(K, m)
    return [
        SubsetIndex(rank=i, members=c)
        for i, c in enumerate(itertools.combinations(range(1, K + 1), m), start=1)
    ]


def rank_of(subset: Iterable[int], K: int) -> SubsetIndex:
    """Inverse of :func:`enumerate_subsets` via the combinatorial number system."""
    members = tuple(sorted(int(k) for k in subset))
    if len(set(members)) != len(members):
        raise ValueError(f"duplicate members in {members}")
    if members and (members[0] < 1 or members[-1] > K):
        raise ValueError(f"members must lie in 1..{K}, got {members}")
    _check_counts(K, len(members))
    m = len(members)
    # count the subsets that precede ``members`` lexicographically
    rank = 0
    prev = 0
    for pos, c in enumerate(members):
        for v in range(prev + 1, c):
            rank += math.comb(K - v, m - pos - 1)
        prev = c
    return SubsetIndex(rank=rank + 1, members=members)


@dataclass(frozen=True)
class SchemeParams:
    """Parameters of one coded-caching configuration.

    ``R`` and ``M`` are in bits per channel use.  ``nR_bits`` is the number of
    bits per file after rounding ``n*R`` down to a multiple of C(K, t);
    ``discarded_bits`` is what that rounding removed.
    """

    K: int
    t: int
    D: int
    R: float
    M: float
    T_s: int
    B: int
    eps: float = 0.0
    nR_bits: int = field(default=-1)
    discarded_bits: int = field(default=0)

    def __post_init__(self) -> None:
        _check_counts(self.K, self.t)
        if not 0 <= self.t <= self.K - 1:
            raise ValueError(f"t must be in 0..{self.K - 1}, got {self.t}")
        if self.D < 1 or self.T_s < 1 or self.B < 1:
            raise ValueError("D, T_s and B must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.R < 0 or self.M < 0:
            raise ValueError("R and M must be nonnegative")
        if self.n < self.num_queues:
            raise ValueError(f"blocklength n={self.n} is below C(K,t)={self.num_queues}")
        if self.nR_bits < 0:
            raw = math.floor(self.n * self.R)
            kept = raw - raw % self.num_queues
            object.__setattr__(self, "nR_bits", kept)
            object.__setattr__(self, "discarded_bits", raw - kept)
        elif self.nR_bits % self.num_queues:
            raise ValueError("nR_bits must be a multiple of C(K,t)")

    @property
    def n(self) -> int:
        return self.B * self.T_s

    @property
    def num_queues(self) -> int:
        return math.comb(self.K, self.t)

    @property
    def queue_bits(self) -> int:
        return self.nR_bits // self.num_queues

    @property
    def num_active_sets(self) -> int:
        return math.comb(self.K, self.t + 1)

    @property
    def cached_bits(self) -> int:
        """Bits held by one receiver: D * C(K-1, t-1) queues."""
        if self.t == 0:
            return 0
        return self.D * math.comb(self.K - 1, self.t - 1) * self.queue_bits

    @property
    def needed_bits(self) -> int:
        """Bits of the demanded file a receiver does not hold: C(K-1, t) queues."""
        return math.comb(self.K - 1, self.t) * self.queue_bits

    @property
    def budget_backoff(self) -> float:
        """Per-use rate back-off applied to block budgets, eps*(K-t)/(t+1)."""
        return self.eps * (self.K - self.t) / (self.t + 1)


def derive_params(
    K: int,
    t: int,
    D: int,
    T_s: int,
    B: int,
    eps: float,
    channel,
    *,
    scheme: str = "state-adaptive",
    policy: str = "opportunistic",
    margin: float = 0.0,
    power=None,
    samples: int = 200_000,
    seed: int = 0,
) -> SchemeParams:
    """Scheme parameters with ``R = R_t - eps`` and ``M = (t/K) R D``.

    ``R_t`` comes from :mod:`statecc.analytics` for the chosen scheme and
    policy.  ``margin`` scales R down further so that finite-length runs keep
    the message rate strictly below what the blocks can carry.
    """
    from . import analytics

    if not 0.0 <= margin < 1.0:
        raise ValueError("margin must be in [0, 1)")
    point = analytics.rate_point(channel, t, scheme, policy, power=power, samples=samples, seed=seed)
    R = max(point.R - eps, 0.0) * (1.0 - margin)
    M = t * R * D / K
    return SchemeParams(K=K, t=t, D=D, R=R, M=M, T_s=T_s, B=B, eps=eps)


def default_eps(K: int, t: int) -> float:
    """Back-off used by finite-length simulations."""
    return 0.01 * (t + 1) / (K - t)


def substream(root: int, purpose: int, *keys: int) -> np.random.Generator:
    """Independent generator for one purpose (files, states, trials, ...)."""
    return np.random.default_rng(np.random.SeedSequence([int(root), purpose, *map(int, keys)]))


def substream_key(root: int, purpose: int, *keys: int) -> int:
    """64-bit key for the counter-based sampler in :mod:`statecc.channel`."""
    ss = np.random.SeedSequence([int(root), purpose, *map(int, keys)])
    return int(ss.generate_state(1, np.uint64)[0])

