"""Seeded slot-level Monte-Carlo co-simulation and empirical diagnostics.

The scheduler never looks at plant states, so delivery indicators for all
runs are drawn first (vectorized over runs, one slot at a time) and the
plant recursion is applied afterwards.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .capacity_mdp import CoDesign
from .model import SystemConfig

FLOOR = 1e-300
MIN_DIAGNOSTIC_FRAMES = 50
MIN_DROPOUT_SAMPLES = 100


@dataclass(frozen=True)
class TraceEnsemble:
    """Arrays are indexed ``[run, subsystem, frame]``.

    ``x`` holds x_1 .. x_{K+1}; ``u`` and ``gamma`` hold frames 1 .. K.
    ``frame`` means the sub-system's own sampling period.
    """
    x: np.ndarray
    u: np.ndarray
    gamma: np.ndarray
    seed: int
    run_keys: tuple[tuple[int, int], ...] = field(repr=False)
    repetitions: tuple[int, ...] = ()

    @property
    def runs(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def frames(self) -> int:
        return self.gamma.shape[2]


def _run_uniforms(seed: int, run: int, slots: int) -> np.ndarray:
    # Philox keyed by (seed, run); the slot index is the stream position
    gen = np.random.Generator(np.random.Philox(key=[seed, run]))
    return gen.random((slots, 2))


def sample_deliveries(codesign: CoDesign, frames: int, runs: int,
                      seed: int) -> np.ndarray:
    """Delivery indicators ``[run, subsystem, frame]`` under the co-design's scheduler."""
    mdp, policy = codesign.mdp, codesign.policy
    n, H = mdp.n, mdp.horizon
    reps = [H // h for h in mdp.periods]
    big = max((math.ceil(frames / r) for r in reps), default=0)
    slots = big * H
    gamma = np.zeros((runs, n, frames), dtype=np.int8)
    if slots == 0 or runs == 0:
        return gamma
    u = np.stack([_run_uniforms(seed, r, slots) for r in range(runs)], axis=1)

    cum = np.cumsum(policy.tables, axis=2)
    cum[:, :, -1] = 1.0
    p = mdp.channel
    bit = 1 << np.arange(n)
    ends = [[i for i, h in enumerate(mdp.periods) if (t + 1) % h == 0] for t in range(H)]
    rearm = [mdp.reset_mask(t) for t in range(H)]
    done = [0] * n

    state = np.full(runs, mdp.full, dtype=np.int64)
    for slot in range(slots):
        t = slot % H
        draw = u[slot]
        action = (draw[:, 0:1] >= cum[t, state]).sum(axis=1)
        action = np.minimum(action, n - 1)
        pending = (state >> action) & 1
        ok = pending.astype(bool) & (draw[:, 1] < p[action])
        state = np.where(ok, state & ~bit[action], state)
        for i in ends[t]:
            k = done[i]
            if k < frames:
                gamma[:, i, k] = 1 - ((state >> i) & 1)
            done[i] = k + 1
        state = state | rearm[t]
    return gamma


def simulate(config: SystemConfig, codesign: CoDesign, frames: int, runs: int,
             seed: int, x0: Optional[Sequence[float]] = None) -> TraceEnsemble:
    """Simulate ``runs`` trajectories of ``frames`` sampling periods each.

    Initial conditions: x_1 = ``x0`` (default all ones), u_0 = 0, γ_0 = 0.
    """
    if config != codesign.config:
        raise ValueError("co-design was synthesized for a different config")
    if frames < 0 or runs < 0:
        raise ValueError("frames and runs must be non-negative")
    n = codesign.mdp.n
    gamma = sample_deliveries(codesign, frames, runs, seed)
    a = np.array([c.plant.a_bar for c in codesign.controllers])
    b = np.array([c.plant.b_bar for c in codesign.controllers])
    k_gain = np.array([c.gain for c in codesign.controllers])
    q = np.array([c.q for c in codesign.controllers])

    x = np.zeros((runs, n, frames + 1))
    u = np.zeros((runs, n, frames))
    x[:, :, 0] = np.ones(n) if x0 is None else np.asarray(x0, float)
    u_prev = np.zeros((runs, n))
    g_prev = np.zeros((runs, n))
    for k in range(frames):
        xk = x[:, :, k]
        u[:, :, k] = -k_gain * (a * xk + (1.0 - q) * b * u_prev)
        x[:, :, k + 1] = a * xk + g_prev * b * u_prev
        u_prev = u[:, :, k]
        g_prev = gamma[:, :, k]
    H = codesign.mdp.horizon
    return TraceEnsemble(x, u, gamma, seed, tuple((seed, r) for r in range(runs)),
                         tuple(H // h for h in codesign.mdp.periods))


def replay(a_bar: float, b_bar: float, x1: float, u: np.ndarray,
           gamma: np.ndarray) -> np.ndarray:
    """Regenerate x_1 .. x_{K+1} of one trajectory from its inputs and deliveries."""
    x = np.empty(len(u) + 1)
    x[0] = x1
    for k in range(len(u)):
        applied = gamma[k - 1] * b_bar * u[k - 1] if k > 0 else 0.0
        x[k + 1] = a_bar * x[k] + applied
    return x


def exact_mean_square(codesign: CoDesign, frames: int,
                      x0: Optional[Sequence[float]] = None) -> np.ndarray:
    """E[x_k^2] for k = 1 .. K+1, per sub-system, from the second-moment recursion.

    With z_k = (x_k, u_{k-1}) the loop is z_{k+1} = (F0 + γ_{k-1} F1) z_k, and
    γ_{k-1} is independent of z_k, so E[z z'] evolves linearly.
    """
    n = codesign.mdp.n
    x0 = np.ones(n) if x0 is None else np.asarray(x0, float)
    out = np.zeros((n, frames + 1))
    for i, c in enumerate(codesign.controllers):
        a, b, kg, q = c.plant.a_bar, c.plant.b_bar, c.gain, c.q
        f0 = np.array([[a, 0.0], [-kg * a, -kg * (1.0 - q) * b]])
        f1 = np.array([[0.0, b], [0.0, 0.0]])
        deliver = np.asarray(codesign.delivery[i], float)
        ops = [d * np.kron(f0 + f1, f0 + f1) + (1.0 - d) * np.kron(f0, f0)
               for d in deliver]
        z = np.array([x0[i], 0.0])
        m = np.outer(z, z).ravel()
        out[i, 0] = m[0]
        for k in range(frames):
            # γ_0 = 0; γ_{k-1} belongs to window (k-2) mod n_i
            m = np.kron(f0, f0) @ m if k == 0 else ops[(k - 1) % len(ops)] @ m
            out[i, k + 1] = m[0]
    return out


@dataclass(frozen=True)
class DropoutEstimate:
    subsystem: int
    window: Optional[int]
    estimate: float
    std_error: float
    samples: int
    inconclusive: bool


def empirical_dropout(traces: TraceEnsemble) -> list[DropoutEstimate]:
    """1 - mean delivery per sub-system, and per period window when n_i > 1."""
    out = []
    for i in range(traces.n):
        g = traces.gamma[:, i, :]
        n_i = traces.repetitions[i] if traces.repetitions else 1
        groups = [(None, g)] if n_i == 1 else \
            [(j, g[:, j::n_i]) for j in range(n_i)]
        for j, sub in groups:
            m = sub.size
            est = 1.0 - float(sub.mean()) if m else float("nan")
            se = math.sqrt(est * (1.0 - est) / m) if m else float("nan")
            out.append(DropoutEstimate(i, j, est, se, m, m < MIN_DROPOUT_SAMPLES))
    return out


def lag1_autocorrelation(traces: TraceEnsemble, subsystem: int) -> tuple[float, int]:
    """Pooled lag-1 sample autocorrelation of γ and the number of pairs used.

    Each period window is centred on its own mean, since windows of a
    heterogeneous design need not share a delivery probability.
    """
    g = traces.gamma[:, subsystem, :].astype(float)
    n_i = traces.repetitions[subsystem] if traces.repetitions else 1
    c = g.copy()
    for j in range(n_i):
        c[:, j::n_i] -= g[:, j::n_i].mean()
    pairs = c.shape[0] * max(c.shape[1] - 1, 0)
    denom = float((c * c).sum())
    if pairs == 0 or denom == 0.0:
        return 0.0, pairs
    num = float((c[:, 1:] * c[:, :-1]).sum())
    return num * c.size / (denom * pairs), pairs


@dataclass(frozen=True)
class StabilityDiagnostic:
    subsystem: int
    mean_square: np.ndarray = field(repr=False)
    slope: float
    p_value: float
    verdict: str  # decaying | not-decaying | inconclusive
    confidence: float
    note: str = ""


def mean_square(traces: TraceEnsemble) -> np.ndarray:
    """Cross-run average of x_k^2, shape ``[subsystem, frame]``."""
    return np.mean(traces.x ** 2, axis=0)


def stability_diagnostic(traces: TraceEnsemble,
                         confidence: float = 0.99) -> list[StabilityDiagnostic]:
    """Slope test on log mean-square over the second half of the horizon."""
    ms_all = mean_square(traces)
    out = []
    for i in range(traces.n):
        ms = ms_all[i]
        if not np.any(ms):
            out.append(StabilityDiagnostic(i, ms, -math.inf, 0.0, "decaying", confidence,
                                           "state identically zero"))
            continue
        if traces.frames < MIN_DIAGNOSTIC_FRAMES:
            out.append(StabilityDiagnostic(i, ms, math.nan, math.nan, "inconclusive",
                                           confidence,
                                           f"need at least {MIN_DIAGNOSTIC_FRAMES} frames"))
            continue
        k = np.arange(1, len(ms) + 1)
        half = len(ms) // 2
        fit = stats.linregress(k[half:], np.log(ms[half:] + FLOOR))
        slope = float(fit.slope)
        # one-sided test in the direction of the fitted slope
        p_one = float(fit.pvalue) / 2.0 if np.isfinite(fit.pvalue) else 0.0
        alpha = 1.0 - confidence
        if slope < 0 and p_one < alpha:
            verdict = "decaying"
        elif slope > 0 and p_one < alpha:
            verdict = "not-decaying"
        else:
            verdict = "inconclusive"
        out.append(StabilityDiagnostic(i, ms, slope, p_one, verdict, confidence))
    return out


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_trace_csv(traces: TraceEnsemble, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "frame", "subsystem", "x", "u", "gamma"])
        K = traces.frames
        for r in range(traces.runs):
            for k in range(K + 1):
                for i in range(traces.n):
                    if k < K:
                        w.writerow([r, k + 1, i + 1, _fmt(traces.x[r, i, k]),
                                    _fmt(traces.u[r, i, k]), int(traces.gamma[r, i, k])])
                    else:
                        w.writerow([r, k + 1, i + 1, _fmt(traces.x[r, i, k]), "", ""])


def write_diagnostic_csv(diagnostics: Sequence[StabilityDiagnostic], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "subsystem", "mean_square"])
        if not diagnostics:
            return
        for k in range(len(diagnostics[0].mean_square)):
            for d in diagnostics:
                w.writerow([k + 1, d.subsystem + 1, _fmt(d.mean_square[k])])
