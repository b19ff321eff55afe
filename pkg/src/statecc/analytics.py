"""Achievable rate-memory-latency points, waterfilling, and frontiers.

Rates are in bits per channel use (base-2 logarithms).  For fading channels
the per-block input power follows a waterfilling rule with water level set
by a multiplier ``lam``:

* sum mode (state-adaptive, ergodic): ``lam = sum_{k in G} 1/(x + 1/g_k)``,
  the KKT condition for the sum of the scheduled users' rates;
* min mode (blockwise): ``lam = 1/(x + 1/g_min)``, single-user waterfilling on
  the weakest scheduled gain, which maximises the common rate of one shared
  codeword.

In both cases the block power is ``[x]^+`` and ``lam`` is calibrated so that
the average power over a fixed Monte Carlo sample equals ``P``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from . import kernels
from .channel import DiscreteStateChannel, FadingModel, prob_scheduled, validate_symmetry
from .core import PURPOSE_MONTE_CARLO, SCHEMES, POLICIES, substream

LAMBDA_BRACKET = (1e-8, 1e8)
POWER_RTOL = 1e-3
DEFAULT_SAMPLES = 1_000_000


class CalibrationError(RuntimeError):
    pass


class AsymmetricChannelError(ValueError):
    pass


@dataclass(frozen=True)
class RateMemoryPoint:
    scheme: str
    policy: str
    t: int
    R: float
    M_over_D: float
    rho: float
    stderr: float = 0.0

    @classmethod
    def from_rate(cls, scheme, policy, t, K, R, stderr=0.0):
        rho = 1.0 if scheme == "ergodic" else 0.5
        return cls(scheme, policy, t, R, t * R / K, rho, stderr)


def _mode(scheme: str) -> str:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    return "min" if scheme == "blockwise" else "sum"


def _check_policy(policy: str) -> None:
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")


# -- waterfilling --------------------------------------------------------------


def solve_waterfilling(gains, lam: float) -> float:
    """Root ``x`` of ``sum_k 1/(x + 1/g_k) = lam`` for the scheduled gains.

    May be negative; callers clamp with ``max(x, 0)``.
    """
    g = np.atleast_1d(np.asarray(gains, dtype=float))
    if not lam > 0:
        raise ValueError("lam must be positive")
    if np.any(g <= 0):
        raise ValueError("scheduled gains must be positive")
    return float(kernels.waterfill_levels(np.ascontiguousarray(1.0 / g[None, :]), lam)[0])


def _slot_members(gains: np.ndarray, t: int, policy: str) -> list[np.ndarray]:
    """0-based member indices (N x (t+1)) for every transmission slot."""
    N, K = gains.shape
    if policy == "opportunistic":
        top = np.argsort(-gains, axis=1, kind="stable")[:, : t + 1]
        return [np.sort(top, axis=1)]
    return [np.broadcast_to(np.array(c), (N, t + 1)) for c in itertools.combinations(range(K), t + 1)]


def _slot_inputs(gains: np.ndarray, members: np.ndarray, mode: str) -> np.ndarray:
    g = np.take_along_axis(gains, members, axis=1)
    if mode == "min":
        g = g.min(axis=1, keepdims=True)
    return np.ascontiguousarray(1.0 / g)


@dataclass
class WaterfillingSolution:
    """Calibrated power rule for one (K, t, mode, policy) combination."""

    K: int
    t: int
    P: float
    lam: float
    mode: str
    policy: str
    mean_power: float
    samples: int
    kkt_residual: float = 0.0
    gains: np.ndarray | None = field(default=None, repr=False)
    members: list = field(default_factory=list, repr=False)
    slot_power: list = field(default_factory=list, repr=False)

    def block_power(self, gains, members) -> float:
        """Power for one slot serving ``members`` (1-based) under ``gains``."""
        g = np.asarray(gains, dtype=float)[[k - 1 for k in members]]
        if self.mode == "min":
            g = g[[np.argmin(g)]]
        if g.sum() <= self.lam:
            return 0.0
        return max(solve_waterfilling(g, self.lam), 0.0)

    def user_rates(self, gains, members) -> dict[int, float]:
        p = self.block_power(gains, members)
        g = np.asarray(gains, dtype=float)
        return {k: math.log2(1.0 + g[k - 1] * p) for k in members}


def monte_carlo_gains(K: int, samples: int, seed: int) -> np.ndarray:
    """Common-random-number sample of i.i.d. Exp(1) power gains."""
    return substream(seed, PURPOSE_MONTE_CARLO, K).exponential(size=(samples, K))


def _mean_power(inputs: list[np.ndarray], lam: float) -> float:
    return float(np.mean([kernels.waterfill_power(a, lam).mean() for a in inputs]))


def calibrate_lambda(
    model: FadingModel,
    t: int,
    samples: int = DEFAULT_SAMPLES,
    *,
    scheme: str = "state-adaptive",
    policy: str = "opportunistic",
    seed: int | None = None,
    gains: np.ndarray | None = None,
) -> WaterfillingSolution:
    """Find ``lam`` with average waterfilling power equal to ``model.P``.

    Average power is decreasing in ``lam``, so the root is bracketed on a log
    scale over ``LAMBDA_BRACKET`` and refined with Brent's method.
    """
    mode = _mode(scheme)
    _check_policy(policy)
    if not 0 <= t <= model.K - 1:
        raise ValueError(f"t must be in 0..{model.K - 1}")
    if gains is None:
        gains = monte_carlo_gains(model.K, samples, model.rng_seed if seed is None else seed)
    members = _slot_members(gains, t, policy)
    inputs = [_slot_inputs(gains, m, mode) for m in members]

    def excess(log_lam):
        return _mean_power(inputs, math.exp(log_lam)) - model.P

    lo, hi = (math.log(v) for v in LAMBDA_BRACKET)
    f_lo, f_hi = excess(lo), excess(hi)
    if not (f_lo > 0 > f_hi):
        raise CalibrationError(f"no lambda in {LAMBDA_BRACKET} meets power {model.P}")
    log_lam = optimize.brentq(excess, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    lam = math.exp(log_lam)
    powers = [kernels.waterfill_power(a, lam) for a in inputs]
    mean_power = float(np.mean([p.mean() for p in powers]))
    if abs(mean_power - model.P) > POWER_RTOL * model.P:
        raise CalibrationError(f"calibrated power {mean_power} misses target {model.P}")
    residual = max(_kkt_residual(a, p, lam) for a, p in zip(inputs, powers))
    sol = WaterfillingSolution(
        K=model.K, t=t, P=model.P, lam=lam, mode=mode, policy=policy,
        mean_power=mean_power, samples=gains.shape[0], kkt_residual=residual,
        gains=gains, members=members, slot_power=powers,
    )
    return sol


def _kkt_residual(inv_gains: np.ndarray, power: np.ndarray, lam: float) -> float:
    on = power > 0
    if not on.any():
        return 0.0
    x = power[on]
    total = (1.0 / (x[:, None] + inv_gains[on])).sum(axis=1)
    return float(np.max(np.abs(total - lam)))


def kkt_residual(sol: WaterfillingSolution) -> float:
    """Largest ``|lam - sum 1/(x + 1/g)|`` over samples with positive power."""
    return max(
        _kkt_residual(_slot_inputs(sol.gains, m, sol.mode), p, sol.lam)
        for m, p in zip(sol.members, sol.slot_power)
    )


def _fading_rate(sol: WaterfillingSolution) -> tuple[float, float]:
    """Rate and standard error from a calibrated solution's own sample."""
    K, t = sol.K, sol.t
    gains = sol.gains
    per_sample = np.zeros(gains.shape[0])
    for members, p in zip(sol.members, sol.slot_power):
        g = np.take_along_axis(gains, members, axis=1)
        if sol.mode == "min":
            per_sample += (t + 1) * np.log2(1.0 + g.min(axis=1) * p)
        else:
            per_sample += np.log2(1.0 + g * p[:, None]).sum(axis=1)
    per_sample /= len(sol.members) * (K - t)
    return float(per_sample.mean()), float(per_sample.std(ddof=1) / math.sqrt(len(per_sample)))


# -- discrete channels --------------------------------------------------------------


def _require_symmetric(ch: DiscreteStateChannel) -> None:
    report = validate_symmetry(ch)
    if not report.ok:
        raise AsymmetricChannelError(f"channel is not state-symmetric; violating user permutation {report.witness}")


def _discrete_rate(ch: DiscreteStateChannel, t: int, mode: str, policy: str, check_symmetry: bool = True) -> float:
    if check_symmetry:
        _require_symmetric(ch)
    K = ch.K
    if not 0 <= t <= K - 1:
        raise ValueError(f"t must be in 0..{K - 1}")
    if policy == "opportunistic":
        # conditioned on user 1 being scheduled; Pr[1 in G] = (t+1)/K unless ties are broken by index
        active = [ch.order[s][: t + 1] for s in range(ch.num_states)]
        pr = prob_scheduled(ch, t, 1)
        if pr == 0:
            return 0.0
        if mode == "sum":
            acc = sum(p * ch.rates[s, 0] for s, p in enumerate(ch.probs) if 1 in active[s])
        else:
            acc = sum(
                p * min(ch.rates[s, j - 1] for j in active[s])
                for s, p in enumerate(ch.probs) if 1 in active[s]
            )
        return (t + 1) / (K - t) * acc / pr
    subsets = [c for c in itertools.combinations(range(1, K + 1), t + 1) if 1 in c]
    C = math.comb(K, t + 1)
    acc = 0.0
    for s, p in enumerate(ch.probs):
        for c in subsets:
            acc += p * (ch.rates[s, 0] if mode == "sum" else min(ch.rates[s, j - 1] for j in c)) / C
    return K / (K - t) * acc


# -- public rate functions ---------------------------------------------------------------


def rate_point(channel, t: int, scheme: str, policy: str = "opportunistic", *,
               samples: int = DEFAULT_SAMPLES, seed: int | None = None, power: WaterfillingSolution | None = None,
               check_symmetry: bool = True):
    """Rate-memory point ``(M_t/D, R_t)`` of a scheme under a scheduling policy.

    Discrete channels must be state-symmetric; ``check_symmetry=False``
    evaluates the user-1 formula regardless (only meaningful when every
    user is scheduled in every state, e.g. t = K-1).
    """
    mode = _mode(scheme)
    _check_policy(policy)
    if isinstance(channel, DiscreteStateChannel):
        R = _discrete_rate(channel, t, mode, policy, check_symmetry)
        return RateMemoryPoint.from_rate(scheme, policy, t, channel.K, R)
    if isinstance(channel, FadingModel):
        sol = power or calibrate_lambda(channel, t, samples, scheme=scheme, policy=policy, seed=seed)
        R, se = _fading_rate(sol)
        return RateMemoryPoint.from_rate(scheme, policy, t, channel.K, R, se)
    raise TypeError(f"unsupported channel {type(channel).__name__}")


def rate_state_adaptive(channel, t, **kw) -> RateMemoryPoint:
    return rate_point(channel, t, "state-adaptive", kw.pop("policy", "opportunistic"), **kw)


def rate_blockwise(channel, t, **kw) -> RateMemoryPoint:
    return rate_point(channel, t, "blockwise", kw.pop("policy", "opportunistic"), **kw)


def rate_ergodic(channel, t, **kw) -> RateMemoryPoint:
    """Same rate as the state-adaptive scheme, decoded only at the end (rho = 1)."""
    return rate_point(channel, t, "ergodic", kw.pop("policy", "opportunistic"), **kw)


def rate_nonopportunistic(channel, t, scheme="state-adaptive", **kw) -> RateMemoryPoint:
    return rate_point(channel, t, scheme, "time-shared", **kw)


# -- independent quadrature route for t = 0 -------------------------------------------


def _single_user_waterfilling(pdf, P: float, lower: float = 0.0) -> tuple[float, float]:
    """(lam, E[log2(g/lam)^+]) for single-user waterfilling over gain density ``pdf``."""

    def power(lam):
        val, _ = integrate.quad(lambda g: (1.0 / lam - 1.0 / g) * pdf(g), lam, np.inf, limit=200)
        return val - P

    lam = optimize.brentq(power, 1e-6, 1e3, xtol=1e-15, rtol=1e-14)
    rate, _ = integrate.quad(lambda g: math.log2(g / lam) * pdf(g), lam, np.inf, limit=200)
    return lam, rate


def rate_t0_quadrature(K: int, P: float, policy: str = "opportunistic") -> tuple[float, float]:
    """(lam, R_0) by 1-D quadrature over the served user's gain density.

    Opportunistic service sees the maximum of K Exp(1) gains, with density
    ``K e^-g (1 - e^-g)^(K-1)``; time sharing sees a plain Exp(1) gain.
    """
    _check_policy(policy)
    if policy == "opportunistic":
        def pdf(g):
            return K * math.exp(-g) * (-math.expm1(-g)) ** (K - 1)
    else:
        def pdf(g):
            return math.exp(-g)
    lam, rate = _single_user_waterfilling(pdf, P)
    return lam, rate / K


# -- frontier -------------------------------------------------------------------------


@dataclass(frozen=True)
class Frontier:
    """Upper concave envelope in (M/D, R) plus an optional slope-1 ray."""

    vertices: tuple[tuple[float, float], ...]
    extended: bool = True
    ray_slope: float = 1.0

    def rate_at(self, m_over_d: float) -> float:
        xs = [v[0] for v in self.vertices]
        if m_over_d < xs[0]:
            raise ValueError("cache size left of the first vertex")
        if m_over_d > xs[-1]:
            if not self.extended:
                return self.vertices[-1][1]
            return self.vertices[-1][1] + self.ray_slope * (m_over_d - xs[-1])
        return float(np.interp(m_over_d, xs, [v[1] for v in self.vertices]))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def build_frontier(points, extend: bool = True) -> Frontier:
    """Upper concave envelope of ``(M/D, R)`` points (monotone chain)."""
    pts = []
    for p in points:
        pts.append((float(p.M_over_D), float(p.R)) if isinstance(p, RateMemoryPoint) else (float(p[0]), float(p[1])))
    if not pts:
        raise ValueError("need at least one point")
    best: dict[float, float] = {}
    for x, r in pts:
        best[x] = max(r, best.get(x, -math.inf))
    hull: list[tuple[float, float]] = []
    for q in sorted(best.items()):
        while len(hull) >= 2 and _cross(hull[-2], hull[-1], q) >= 0:
            hull.pop()
        hull.append(q)
    # more memory never hurts: stop at the highest rate
    top = max(range(len(hull)), key=lambda i: (hull[i][1], -i))
    return Frontier(vertices=tuple(hull[: top + 1]), extended=extend)
