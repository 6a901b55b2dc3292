"""Dropout tolerance, the delay-dependent Riccati equation and the predictive control law."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .model import DiscretePlant


class NoStabilizingSolutionError(ValueError):
    pass


class RiccatiNumericError(ArithmeticError):
    pass


def max_dropout_rate(a: float, h: int, delta: float) -> float:
    """Largest i.i.d. dropout rate a plant with growth rate ``a`` tolerates.

    1 / (e^{4ahΔ} - e^{2ahΔ} + 1); equals 1 exactly when ``a == 0``.
    """
    e2 = math.exp(2.0 * a * h * delta)
    # e2 * (e2 - 1) + 1 avoids cancellation for small a
    return 1.0 / (e2 * math.expm1(2.0 * a * h * delta) + 1.0)


def max_dropout_rate_discrete(a_bar: float) -> float:
    a2 = a_bar * a_bar
    return 1.0 / (a2 * (a2 - 1.0) + 1.0)


@dataclass(frozen=True)
class DareSolution:
    p_val: float
    upsilon: float
    m_val: float
    q: float
    residual: float  # |P - map(P)|, evaluated exactly at the returned float P

    @property
    def gain(self) -> float:
        return self.m_val / self.upsilon


def _coefficients(plant: DiscretePlant, q: float, p_val: float) -> tuple[float, float]:
    a, b = plant.a_bar, plant.b_bar
    upsilon = ((1 - q) ** 2 * b * b * p_val + q * (1 - q) * b * b * a * a * p_val
               + q * (1 - q) * b * b + 1.0)
    m_val = (1 - q) * b * p_val * a
    return upsilon, m_val


def riccati_map(plant: DiscretePlant, q: float, p_val: float) -> float:
    upsilon, m_val = _coefficients(plant, q, p_val)
    return plant.a_bar ** 2 * p_val + 1.0 - m_val * m_val / upsilon


def exact_residual(plant: DiscretePlant, q: float, p_val: float) -> float:
    """map(P) - P in rational arithmetic, rounded once at the end.

    Evaluating the map in floats cancels large terms, so the float residual
    can read zero while the true one is far from it.
    """
    a, b, q, p = (Fraction(v) for v in (plant.a_bar, plant.b_bar, q, p_val))
    upsilon = (1 - q) ** 2 * b * b * p + q * (1 - q) * b * b * a * a * p + q * (1 - q) * b * b + 1
    m = (1 - q) * b * p * a
    return float(a * a * p + 1 - m * m / upsilon - p)


def _polish(plant: DiscretePlant, q: float, p_val: float) -> tuple[float, float]:
    """Newton steps on the exactly evaluated residual; returns (P, |residual|)."""
    a2, b = plant.a_bar ** 2, plant.b_bar
    alpha = (1 - q) ** 2 * b * b + q * (1 - q) * b * b * a2
    beta = q * (1 - q) * b * b + 1.0
    k2 = (1 - q) ** 2 * b * b * a2
    best = (abs(exact_residual(plant, q, p_val)), p_val)
    for _ in range(8):
        r = exact_residual(plant, q, p_val)
        ups = alpha * p_val + beta
        slope = a2 - 1.0 - k2 * p_val * (alpha * p_val + 2 * beta) / (ups * ups)
        if r == 0 or slope == 0:
            break
        nxt = p_val - r / slope
        if not (nxt > 0 and math.isfinite(nxt)) or nxt == p_val:
            break
        p_val = nxt
        best = min(best, (abs(exact_residual(plant, q, p_val)), p_val))
    # the float grid near the root; Newton may stop one spacing away
    centre = best[1]
    for direction in (-math.inf, math.inf):
        cand = centre
        for _ in range(2):
            cand = math.nextafter(cand, direction)
            best = min(best, (abs(exact_residual(plant, q, cand)), cand))
    return best[1], best[0]


def _bisect(plant, q, lo, hi):
    f = lambda x: riccati_map(plant, q, x) - x
    flo = f(lo)
    while f(hi) > 0:
        lo, hi = hi, 2.0 * hi
        if not math.isfinite(hi):
            raise RiccatiNumericError("could not bracket the Riccati root")
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return lo if abs(f(lo)) <= abs(f(hi)) else hi


def solve_dare(plant: DiscretePlant, q: float, tol: float = 1e-12,
               max_iter: int = 100_000) -> DareSolution:
    """Unique positive solution of the scalar delay-dependent Riccati equation.

    Fixed-point iteration from P = 1; falls back to bisection on the residual
    when the iteration stalls (it slows down as ``q`` nears the dropout limit).
    """
    if not 0 <= q < 1:
        raise NoStabilizingSolutionError(f"dropout rate {q} outside [0, 1)")
    q_lim = max_dropout_rate_discrete(plant.a_bar)
    if q >= q_lim:
        raise NoStabilizingSolutionError(
            f"dropout rate {q} >= maximum tolerable rate {q_lim}")

    p_val = 1.0
    converged = False
    last_step = math.inf
    for it in range(max_iter):
        nxt = riccati_map(plant, q, p_val)
        if not math.isfinite(nxt):
            break
        step = abs(nxt - p_val)
        p_val = nxt
        if step <= tol:
            converged = True
            break
        # steps shrink geometrically until rounding noise takes over
        if it > 10 and step >= last_step:
            break
        last_step = step
    if not converged:
        p_val = _bisect(plant, q, 1.0, 2.0)

    p_val, residual = _polish(plant, q, p_val)
    upsilon, m_val = _coefficients(plant, q, p_val)
    if not (p_val > 0 and math.isfinite(residual)):
        raise RiccatiNumericError(f"Riccati solve failed (P={p_val})")
    return DareSolution(p_val, upsilon, m_val, q, residual)


@dataclass(frozen=True)
class ControllerState:
    gain: float
    q: float
    u_prev: float = 0.0
    x_hat: float = 0.0

    @classmethod
    def from_solution(cls, sol: DareSolution) -> "ControllerState":
        return cls(gain=sol.gain, q=sol.q)


def control_input(ctrl: ControllerState, plant: DiscretePlant,
                  x_k: float) -> tuple[float, ControllerState]:
    """Return ``u_k`` and the controller state to use in the next frame.

    ``x_hat`` is the prediction of the next frame's state from ``x_k`` and the
    previously issued input, weighted by the design delivery rate.
    """
    x_hat = plant.a_bar * x_k + (1.0 - ctrl.q) * plant.b_bar * ctrl.u_prev
    u = -ctrl.gain * x_hat
    return u, ControllerState(ctrl.gain, ctrl.q, u, x_hat)
