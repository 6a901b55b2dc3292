"""Idle-time characterization of the frame-synchronized capacity region.

Busy-slot distributions are computed exactly: adding one flow to a subset is
a linear map on the pmf of ``min(sum of geometric transmission counts, h)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .control import max_dropout_rate
from .model import ConfigError, StabilityVerdict, SystemConfig

MAX_SUBSET_FLOWS = 20


class TooLargeError(ValueError):
    pass


class WrongSpecializationError(ValueError):
    pass


@dataclass(frozen=True)
class BusySlotPmf:
    probs: np.ndarray
    subset: tuple[int, ...]

    @property
    def h(self) -> int:
        return len(self.probs) - 1

    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.probs)), self.probs))


def add_flow_matrix(p: float, h: int) -> np.ndarray:
    """Transition matrix mapping the busy-slot pmf of S to that of S + {flow}."""
    T = np.zeros((h + 1, h + 1))
    q = 1.0 - p
    for t in range(h):
        k = np.arange(1, h - t)
        T[t, t + k] = q ** (k - 1) * p
        T[t, h] = q ** (h - t - 1)
    T[h, h] = 1.0
    return T


def busy_pmf(subset: Iterable[int], channel: Sequence[float], h: int) -> BusySlotPmf:
    subset = tuple(sorted(set(subset)))
    probs = np.zeros(h + 1)
    probs[0] = 1.0
    for i in subset:
        probs = probs @ add_flow_matrix(channel[i], h)
    return BusySlotPmf(probs, subset)


def expected_idle(subset: Iterable[int], channel: Sequence[float], h: int) -> float:
    return h - busy_pmf(subset, channel, h).mean()


def all_subset_busy_means(channel: Sequence[float], h: int) -> np.ndarray:
    """E[min(sum_{i in S} Θ_i, h)] for every subset S, indexed by bitmask.

    The pmf of mask ``m`` extends the pmf of ``m`` without its highest flow, so
    masks sharing a highest flow are processed as one block.
    """
    n = len(channel)
    if n > MAX_SUBSET_FLOWS:
        raise TooLargeError(
            f"{n} sub-systems exceeds the subset enumeration cap {MAX_SUBSET_FLOWS}")
    pmfs = np.zeros((1 << n, h + 1))
    pmfs[0, 0] = 1.0
    for j, p in enumerate(channel):
        lo = 1 << j
        pmfs[lo:2 * lo] = pmfs[:lo] @ add_flow_matrix(p, h)
    return pmfs @ np.arange(h + 1)


def subset_slacks(config: SystemConfig) -> np.ndarray:
    """h - sum_{i in S} (1 - q_max^i)/p_i - E[I_S] for every nonempty subset."""
    h = config.h
    demand = np.array([
        (1.0 - max_dropout_rate(pl.a, h, config.slot_length)) / p
        for pl, p in zip(config.plants, config.channel)
    ])
    return region_slacks(demand * np.array(config.channel), config.channel, h)


def region_slacks(rates: Sequence[float], channel: Sequence[float], h: int) -> np.ndarray:
    """Slack of every subset inequality sum R_i/p_i + E[I_S] <= h, by bitmask.

    Entry 0 (empty subset) is +inf so it never binds.
    """
    n = len(channel)
    busy = all_subset_busy_means(channel, h)
    load = np.asarray(rates, dtype=float) / np.asarray(channel, dtype=float)
    masks = np.arange(1 << n)
    bits = (masks[:, None] >> np.arange(n)) & 1
    slack = busy - bits @ load
    slack[0] = np.inf
    return slack


def _mask_subset(mask: int, n: int) -> tuple[int, ...]:
    return tuple(i for i in range(n) if mask >> i & 1)


def check_stability_general(config: SystemConfig) -> StabilityVerdict:
    if not config.homogeneous:
        raise ConfigError(["sampling_periods: homogeneous periods required"])
    slack = subset_slacks(config)
    mask = int(np.argmin(slack))
    subset = _mask_subset(mask, config.n)
    value = float(slack[mask])
    label = "".join(str(i + 1) for i in subset)
    return StabilityVerdict(
        stabilizable=value > config.feasibility_margin,
        slack=value,
        binding_constraint=f"subset {{{label}}}",
        binding_subset=subset,
        margin=config.feasibility_margin,
    )


def check_stability_perfect(config: SystemConfig) -> StabilityVerdict:
    if any(p != 1 for p in config.channel):
        raise WrongSpecializationError("perfect-channel test needs every p_i = 1")
    h = config.h
    load = sum(1.0 - max_dropout_rate(pl.a, h, config.slot_length)
               for pl in config.plants)
    value = h - load
    return StabilityVerdict(
        stabilizable=value > config.feasibility_margin,
        slack=value,
        binding_constraint="sum_i (1 - q_max^i) < h",
        binding_subset=tuple(range(config.n)),
        margin=config.feasibility_margin,
    )


def perfect_channel_slack(a_values: Sequence[float], h: int, delta: float) -> float:
    return h - sum(1.0 - max_dropout_rate(a, h, delta) for a in a_values)


def min_sampling_period_perfect(config: SystemConfig) -> int:
    """Smallest m such that the perfect-channel test passes for every h >= m.

    Beyond h = N the test always passes, so only [1, N] is scanned.
    """
    if any(p != 1 for p in config.channel):
        raise WrongSpecializationError("perfect-channel test needs every p_i = 1")
    a_values = [pl.a for pl in config.plants]
    eps = config.feasibility_margin
    m = config.n
    while m > 1 and perfect_channel_slack(a_values, m - 1, config.slot_length) > eps:
        m -= 1
    return m


def symmetric_busy_mean(n: int, p: float, h: int) -> float:
    """E[X] for X = min(sum of n i.i.d. geometric(p) counts, h), in closed form."""
    if h <= n:
        return float(h)
    q = 1.0 - p
    total = n * p ** n
    total += sum((n + k) * math.comb(n + k - 1, k) * q ** k * p ** n
                 for k in range(1, h - n))
    p_full = sum(math.comb(h, i) * q ** (h - i) * p ** i for i in range(n))
    p_full += math.comb(h - 1, h - n) * q ** (h - n) * p ** n
    return total + h * p_full


def check_stability_symmetric(n: int, a: float, p: float, h: int, delta: float,
                              margin: float = 1e-6) -> StabilityVerdict:
    """One-inequality test for N identical plants on identical channels.

    Slack is reported in slots, ``E[X] - N (1 - q_max)/p``, the same units as
    the whole-set inequality of the general test.
    """
    demand = (1.0 - max_dropout_rate(a, h, delta)) / p
    value = symmetric_busy_mean(n, p, h) - n * demand
    return StabilityVerdict(
        stabilizable=value > margin,
        slack=value,
        binding_constraint="(1 - q_max)/p < E[X]/N",
        binding_subset=tuple(range(n)),
        margin=margin,
    )


def min_channel_quality_symmetric(n: int, a: float, h: int, delta: float,
                                  tol: float = 1e-4,
                                  margin: float = 1e-6) -> Optional[float]:
    """Smallest stabilizing common success probability, by bisection.

    Returns None when even a perfect channel cannot stabilize the instance.
    """
    stable = lambda p: check_stability_symmetric(n, a, p, h, delta, margin).stabilizable
    if not stable(1.0):
        return None
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if stable(mid):
            hi = mid
        else:
            lo = mid
    return hi


def sweep_rows(config: SystemConfig, h_values: Sequence[int],
               p_values: Optional[Sequence[float]] = None) -> list[dict]:
    """Verdict rows for every (h, p) grid point, sorted by (h, p)."""
    grid = sorted((h, p) for h in h_values for p in (p_values or [None])) \
        if p_values else [(h, None) for h in sorted(h_values)]

    def one(point):
        h, p = point
        cfg = config.with_period(h)
        if p is not None:
            cfg = cfg.with_channel((p,) * config.n)
        v = check_stability_general(cfg)
        p_label = (f"{cfg.channel[0]:g}" if len(set(cfg.channel)) == 1
                   else ";".join(f"{x:g}" for x in cfg.channel))
        return {"h": h, "p": p_label, "stabilizable": v.stabilizable,
                "slack": v.slack, "binding_subset": v.subset_label()}

    with ThreadPoolExecutor() as pool:
        return list(pool.map(one, grid))

