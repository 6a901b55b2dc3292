"""Occupancy-measure capacity region, randomized scheduler extraction and co-design.

States are bitmasks over sub-systems (bit ``i`` set = sub-system ``i`` still
has an undelivered packet in its current period); actions are sub-system
indices.  Slot ``t`` of a (big) frame is 0-based internally.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import lp
from .capacity_idle import TooLargeError, check_stability_general
from .control import DareSolution, max_dropout_rate, solve_dare
from .model import DiscretePlant, StabilityVerdict, SystemConfig, discretize

MAX_STATES = 64
MAX_HORIZON = 120
MAX_VARIABLES = 20_000
ZERO_MASS = 1e-14
AUTO_FRACTION = 0.9


class NotStabilizableError(Exception):
    def __init__(self, verdict: StabilityVerdict, reason: str = ""):
        self.verdict = verdict
        super().__init__(reason or f"not stabilizable: {verdict.binding_constraint} "
                                   f"slack {verdict.slack:.6g}")


class SufficientConditionNotMet(Exception):
    """The heterogeneous-period LP has no strictly feasible point.

    This does not mean the system is unstable: the LP condition is only
    sufficient.
    """

    def __init__(self, margin: float, eps: float):
        self.margin = margin
        self.eps = eps
        super().__init__(f"sufficient condition not met: best margin {margin:.6g} "
                         f"<= {eps:.3g}")


@dataclass(frozen=True)
class MdpModel:
    n: int
    horizon: int
    channel: np.ndarray
    periods: tuple[int, ...]
    rewards: np.ndarray = field(repr=False)   # [s, a, i]
    kernels: np.ndarray = field(repr=False)   # [t, s, a, s']

    @property
    def states(self) -> int:
        return 1 << self.n

    @property
    def full(self) -> int:
        return self.states - 1

    def reset_mask(self, t: int) -> int:
        """Flows whose packet flag is re-armed on entering slot ``t + 1``."""
        nxt = t + 1
        return sum(1 << i for i, h in enumerate(self.periods) if nxt % h == 0)

    def reset_slots(self, i: int) -> list[int]:
        return list(range(0, self.horizon, self.periods[i]))


def big_frame(periods: Sequence[int]) -> int:
    return math.lcm(*periods)


def build_mdp(config: SystemConfig, max_states: int = MAX_STATES,
              max_horizon: int = MAX_HORIZON) -> MdpModel:
    n = config.n
    n_states = 1 << n
    if n_states > max_states:
        raise TooLargeError(f"2^{n} = {n_states} states exceeds cap {max_states}")
    periods = tuple(config.sampling_periods)
    horizon = big_frame(periods)
    if horizon > max_horizon:
        raise TooLargeError(f"big frame of {horizon} slots exceeds cap {max_horizon}")
    p = np.asarray(config.channel, float)

    rewards = np.zeros((n_states, n, n))
    for s in range(n_states):
        for i in range(n):
            if s >> i & 1:
                rewards[s, i, i] = p[i]

    kernels = np.zeros((horizon, n_states, n, n_states))
    model = MdpModel(n, horizon, p, periods, rewards, kernels)
    for t in range(horizon):
        rearm = model.reset_mask(t)
        for s in range(n_states):
            for a in range(n):
                if s >> a & 1:
                    kernels[t, s, a, (s & ~(1 << a)) | rearm] += p[a]
                    kernels[t, s, a, s | rearm] += 1.0 - p[a]
                else:
                    kernels[t, s, a, s | rearm] = 1.0
    return model


def _var_count(mdp: MdpModel) -> int:
    return mdp.horizon * mdp.states * mdp.n


def _flow_rows(mdp: MdpModel) -> tuple[np.ndarray, np.ndarray]:
    """Flow balance (with the end-of-frame wrap) plus per-slot normalization."""
    H, S, N = mdp.horizon, mdp.states, mdp.n
    nv = _var_count(mdp)
    if nv > MAX_VARIABLES:
        raise TooLargeError(f"{nv} LP variables exceeds cap {MAX_VARIABLES}")
    a_eq = np.zeros((H * S + H, nv))
    for t in range(H):
        nxt = (t + 1) % H
        block = a_eq[t * S:(t + 1) * S]
        for s2 in range(S):
            base = (nxt * S + s2) * N
            block[s2, base:base + N] += 1.0
        # kernels[t] is [s, a, s']; outflow from x_t(s, a) into s'
        block[:, t * S * N:(t + 1) * S * N] -= mdp.kernels[t].reshape(S * N, S).T
        a_eq[H * S + t, t * S * N:(t + 1) * S * N] = 1.0
    b_eq = np.concatenate([np.zeros(H * S), np.ones(H)])
    return a_eq, b_eq


def _throughput_row(mdp: MdpModel, i: int, t_lo: int, t_hi: int) -> np.ndarray:
    row = np.zeros((mdp.horizon, mdp.states, mdp.n))
    row[t_lo:t_hi, :, i] = mdp.rewards[:, i, i]
    return row.ravel()


def build_capacity_lp(mdp: MdpModel, targets: Sequence[float]) -> lp.LpProblem:
    """Occupancy LP whose feasibility means ``targets`` lies in the capacity region."""
    a_eq, b_eq = _flow_rows(mdp)
    a_in = np.array([_throughput_row(mdp, i, 0, mdp.horizon) for i in range(mdp.n)])
    return lp.LpProblem(a_eq.shape[1], a_eq, b_eq, a_in, np.asarray(targets, float),
                        (">=",) * mdp.n)


@dataclass(frozen=True)
class HeterogeneousPlan:
    periods: tuple[int, ...]
    big_frame: int
    repetitions: tuple[int, ...]
    delivery: Optional[tuple[tuple[float, ...], ...]] = None

    @property
    def dropout(self) -> Optional[tuple[tuple[float, ...], ...]]:
        if self.delivery is None:
            return None
        return tuple(tuple(1.0 - d for d in row) for row in self.delivery)

    def windows(self):
        """(flow, window index, first slot, end slot) for every period window."""
        for i, (h, n_i) in enumerate(zip(self.periods, self.repetitions)):
            for j in range(n_i):
                yield i, j, j * h, (j + 1) * h


def plan_heterogeneous(config: SystemConfig) -> HeterogeneousPlan:
    periods = tuple(config.sampling_periods)
    H = big_frame(periods)
    return HeterogeneousPlan(periods, H, tuple(H // h for h in periods))


def build_heterogeneous_lp(config: SystemConfig, plan: HeterogeneousPlan,
                           mdp: Optional[MdpModel] = None,
                           extra: float = 0.0) -> lp.LpProblem:
    """Big-frame occupancy LP with one throughput row per sub-system period.

    Row for window ``j`` of sub-system ``i`` reads
    ``sum over the window of x r_i >= 1 - q_max^i + extra``; strictness is
    imposed by the caller through :func:`lp.solve_with_margin`.
    """
    mdp = mdp or build_mdp(config)
    a_eq, b_eq = _flow_rows(mdp)
    rows, rhs = [], []
    for i, j, lo, hi in plan.windows():
        pl = config.plants[i]
        rows.append(_throughput_row(mdp, i, lo, hi))
        rhs.append(1.0 - max_dropout_rate(pl.a, plan.periods[i], config.slot_length) + extra)
    return lp.LpProblem(a_eq.shape[1], a_eq, b_eq, np.array(rows), np.array(rhs),
                        (">=",) * len(rows))


@dataclass(frozen=True)
class OccupancyMeasure:
    x: np.ndarray  # [t, s, a]

    @classmethod
    def from_values(cls, mdp: MdpModel, values: np.ndarray) -> "OccupancyMeasure":
        x = np.maximum(np.asarray(values, float), 0.0)
        return cls(x.reshape(mdp.horizon, mdp.states, mdp.n))

    def marginals(self) -> np.ndarray:
        return self.x.sum(axis=2)


@dataclass(frozen=True)
class SchedulingPolicy:
    """Per-slot conditional transmit distributions, repeated every frame."""
    tables: np.ndarray  # [t, s, a], rows sum to 1

    @property
    def horizon(self) -> int:
        return self.tables.shape[0]

    def conditional(self, slot: int, state: int) -> np.ndarray:
        return self.tables[slot % self.horizon, state]

    def to_json(self) -> dict:
        H, S, N = self.tables.shape
        out = {}
        for t in range(H):
            per_state = {}
            for s in range(S):
                bits = "".join("1" if s >> i & 1 else "0" for i in range(N))
                per_state[bits] = {str(a + 1): f"{self.tables[t, s, a]:.12g}"
                                   for a in range(N) if self.tables[t, s, a] > 0}
            out[str(t + 1)] = per_state
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "SchedulingPolicy":
        H = len(doc)
        first = doc["1"]
        N = len(next(iter(first)))
        tables = np.zeros((H, 1 << N, N))
        for t, per_state in doc.items():
            for bits, dist in per_state.items():
                s = sum(1 << i for i, c in enumerate(bits) if c == "1")
                for a, prob in dist.items():
                    tables[int(t) - 1, s, int(a) - 1] = float(prob)
        return cls(tables)


def default_action(state: int, n: int) -> np.ndarray:
    pending = [i for i in range(n) if state >> i & 1]
    dist = np.zeros(n)
    if pending:
        dist[pending] = 1.0 / len(pending)
    else:
        dist[0] = 1.0
    return dist


def extract_policy(mdp: MdpModel, occupancy: OccupancyMeasure) -> SchedulingPolicy:
    x = occupancy.x
    mass = x.sum(axis=2, keepdims=True)
    tables = np.divide(x, mass, out=np.zeros_like(x), where=mass > ZERO_MASS)
    for t, s in zip(*np.nonzero(mass[:, :, 0] <= ZERO_MASS)):
        tables[t, s] = default_action(int(s), mdp.n)
    return SchedulingPolicy(tables)


def work_conserving(mdp: MdpModel, policy: SchedulingPolicy) -> SchedulingPolicy:
    """Move mass on already-delivered flows to the pending ones, uniformly."""
    tables = policy.tables.copy()
    for s in range(1, mdp.states):
        idle = [i for i in range(mdp.n) if not s >> i & 1]
        if not idle:
            continue
        wasted = tables[:, s, idle].sum(axis=1, keepdims=True)
        tables[:, s, idle] = 0.0
        tables[:, s] += wasted * default_action(s, mdp.n)
    return SchedulingPolicy(tables)


def constant_policy(mdp: MdpModel, action: int) -> SchedulingPolicy:
    """Scheduler that always transmits ``action`` (0-based); for experiments."""
    tables = np.zeros((mdp.horizon, mdp.states, mdp.n))
    tables[:, :, action] = 1.0
    return SchedulingPolicy(tables)


def propagate(mdp: MdpModel, policy: SchedulingPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Exact state marginals ``[t, s]`` and per-slot delivery probabilities ``[t, i]``.

    The frame starts with every flag set.
    """
    H, S, N = mdp.horizon, mdp.states, mdp.n
    dist = np.zeros(S)
    dist[mdp.full] = 1.0
    marg = np.zeros((H, S))
    deliv = np.zeros((H, N))
    diag = np.einsum("sii->si", mdp.rewards)
    for t in range(H):
        marg[t] = dist
        joint = dist[:, None] * policy.tables[t]
        deliv[t] = (joint * diag).sum(axis=0)
        dist = np.einsum("sa,sab->b", joint, mdp.kernels[t])
    return marg, deliv


def window_delivery(mdp: MdpModel, per_slot: np.ndarray) -> list[np.ndarray]:
    """Delivery probability of each sub-system in each of its period windows."""
    out = []
    for i, h in enumerate(mdp.periods):
        out.append(per_slot[:, i].reshape(-1, h).sum(axis=1))
    return out


@dataclass(frozen=True)
class MembershipResult:
    feasible: bool
    slack: float
    occupancy: Optional[OccupancyMeasure] = None


def region_membership(config: SystemConfig, targets: Sequence[float],
                      strict: bool = False, tol: float = 1e-9) -> MembershipResult:
    """Is ``targets`` in the capacity region at the config's (common) period?

    ``slack`` is the largest common amount by which every throughput row can
    be exceeded (negative outside the region).  With ``strict`` the point must
    clear the boundary by more than the config margin.
    """
    mdp = build_mdp(config)
    prob = build_capacity_lp(mdp, targets)
    res = lp.solve_with_margin(prob, range(mdp.n), config.feasibility_margin)
    if res.solution.status == "failed":
        raise ArithmeticError(f"LP solver failure: {res.solution.message}")
    feasible = res.strict if strict else res.margin >= -tol
    occ = OccupancyMeasure.from_values(mdp, res.values) if res.values is not None else None
    return MembershipResult(feasible, res.margin, occ)


@dataclass(frozen=True)
class ControllerDesign:
    plant: DiscretePlant
    q: float
    dare: DareSolution

    @property
    def gain(self) -> float:
        return self.dare.gain


@dataclass(frozen=True)
class CoDesign:
    config: SystemConfig
    mdp: MdpModel
    policy: SchedulingPolicy
    occupancy: OccupancyMeasure
    controllers: tuple[ControllerDesign, ...]
    design_margin: float
    max_margin: float
    targets: tuple[tuple[float, ...], ...]
    delivery: tuple[tuple[float, ...], ...]
    plan: Optional[HeterogeneousPlan] = None
    verdict: Optional[StabilityVerdict] = None

    @property
    def heterogeneous(self) -> bool:
        return self.plan is not None

    def to_json(self) -> dict:
        return {
            "design_margin": self.design_margin,
            "max_margin": self.max_margin,
            "controllers": [
                {"subsystem": i + 1, "a_bar": c.plant.a_bar, "b_bar": c.plant.b_bar,
                 "q": c.q, "P": c.dare.p_val, "upsilon": c.dare.upsilon,
                 "M": c.dare.m_val, "gain": c.gain}
                for i, c in enumerate(self.controllers)],
            "targets": [list(t) for t in self.targets],
            "delivery": [list(d) for d in self.delivery],
            "policy": self.policy.to_json(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)


Margin = Union[str, float, None]


def _pick_margin(margin: Margin, best: float, config: SystemConfig) -> float:
    if margin is None:
        return config.feasibility_margin
    if margin == "auto":
        # close to the region boundary for fast decay, but not on it
        return max(AUTO_FRACTION * best, config.feasibility_margin)
    return float(margin)


def _solve_targets(prob: lp.LpProblem) -> Optional[np.ndarray]:
    sol = lp.solve(prob)
    if sol.status == "failed":
        raise ArithmeticError(f"LP solver failure: {sol.message}")
    return sol.values if sol.feasible else None


def _finish_policy(mdp, occupancy, need):
    """Prefer the work-conserving variant when it still meets every window target.

    The returned occupancy is the one the returned policy actually induces.
    """
    raw = extract_policy(mdp, occupancy)
    for cand in (work_conserving(mdp, raw), raw):
        marg, per_slot = propagate(mdp, cand)
        delivery = window_delivery(mdp, per_slot)
        if all(np.all(d >= t - 1e-12) for d, t in zip(delivery, need)):
            break
    return cand, OccupancyMeasure(marg[:, :, None] * cand.tables), delivery


def synthesize(config: SystemConfig, margin: Margin = "auto") -> CoDesign:
    """Build a stabilizing randomized scheduler and per-plant control laws.

    ``margin`` is the throughput margin over ``1 - q_max`` that the scheduler
    is asked to deliver, and the amount by which each controller's design
    dropout rate sits below ``q_max``.  ``"auto"`` uses 90% of the largest
    margin the capacity region allows; ``None`` uses the config's
    ``feasibility_margin``; a number is used as given.
    """
    mdp = build_mdp(config)
    if config.homogeneous:
        return _synthesize_homogeneous(config, mdp, margin)
    return _synthesize_heterogeneous(config, mdp, margin)


def _synthesize_homogeneous(config, mdp, margin):
    h = config.h
    verdict = check_stability_general(config)
    if not verdict.stabilizable:
        raise NotStabilizableError(verdict)
    q_max = np.array([max_dropout_rate(pl.a, h, config.slot_length) for pl in config.plants])
    base = build_capacity_lp(mdp, 1.0 - q_max)
    best = lp.solve_with_margin(base, range(mdp.n), config.feasibility_margin).margin
    eps = _pick_margin(margin, best, config)
    targets = np.minimum(1.0 - q_max + eps, 1.0)
    values = _solve_targets(build_capacity_lp(mdp, targets))
    need = [np.array([t]) for t in targets]
    if values is None:
        raise NotStabilizableError(
            verdict, f"throughput targets 1 - q_max + {eps:.3g} are outside the "
                     f"capacity region (largest margin {best:.6g})")
    policy, occ, delivery = _finish_policy(
        mdp, OccupancyMeasure.from_values(mdp, values), need)
    controllers = []
    for pl, qm in zip(config.plants, q_max):
        plant = discretize(pl, h, config.slot_length)
        q = max(qm - eps, 0.0)
        controllers.append(ControllerDesign(plant, q, solve_dare(plant, q)))
    return CoDesign(config, mdp, policy, occ, tuple(controllers), eps, best,
                    tuple((float(t),) for t in targets),
                    tuple(tuple(map(float, d)) for d in delivery),
                    None, verdict)


def _synthesize_heterogeneous(config, mdp, margin):
    plan = plan_heterogeneous(config)
    base = build_heterogeneous_lp(config, plan, mdp)
    res = lp.solve_with_margin(base, range(len(base.b_in)), config.feasibility_margin)
    if res.solution.status == "failed":
        raise ArithmeticError(f"LP solver failure: {res.solution.message}")
    if not res.strict:
        raise SufficientConditionNotMet(res.margin, config.feasibility_margin)
    eps = _pick_margin(margin, res.margin, config)
    prob = build_heterogeneous_lp(config, plan, mdp, extra=eps)
    values = _solve_targets(prob)
    need = [np.zeros(r) for r in plan.repetitions]
    for (i, j, _, _), t in zip(plan.windows(), prob.b_in):
        need[i][j] = t
    if values is None:
        raise SufficientConditionNotMet(res.margin, eps)
    policy, occ, delivery = _finish_policy(
        mdp, OccupancyMeasure.from_values(mdp, values), need)

    targets, controllers = [], []
    for i, pl in enumerate(config.plants):
        h_i = plan.periods[i]
        qm = max_dropout_rate(pl.a, h_i, config.slot_length)
        targets.append((min(1.0 - qm + eps, 1.0),) * plan.repetitions[i])
        # one gain for all windows, designed for the worst window
        q = float(np.clip(np.max(1.0 - delivery[i]), 0.0, None))
        plant = discretize(pl, h_i, config.slot_length)
        controllers.append(ControllerDesign(plant, q, solve_dare(plant, q)))
    plan = replace(plan, delivery=tuple(tuple(map(float, d)) for d in delivery))
    return CoDesign(config, mdp, policy, occ, tuple(controllers), eps, res.margin,
                    tuple(targets), plan.delivery, plan, None)
