"""Dense two-phase primal simplex with Bland's anti-cycling rule.

Problems are small (a few thousand columns at most), so the full tableau is
kept in memory and every pivot is a rank-one numpy update.  Pivoting is fully
deterministic: the same problem always follows the same pivot sequence.
If floating-point pivoting breaks down, the problem is re-solved in exact
rational arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-9
TIE_PIVOT_FRACTION = 1e-2
COST_TOL = 1e-10
MAX_PIVOTS = 200_000
REFRESH_EVERY = 50


@dataclass
class LpProblem:
    """maximize ``objective @ x`` s.t. equality and inequality rows, ``x >= lower``.

    A lower bound of ``-inf`` marks a free variable.
    """
    n: int
    a_eq: np.ndarray = None
    b_eq: np.ndarray = None
    a_in: np.ndarray = None
    b_in: np.ndarray = None
    senses: tuple[str, ...] = ()
    lower: np.ndarray = None
    objective: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.n
        self.a_eq = np.zeros((0, n)) if self.a_eq is None else np.atleast_2d(np.asarray(self.a_eq, float))
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).ravel()
        self.a_in = np.zeros((0, n)) if self.a_in is None else np.atleast_2d(np.asarray(self.a_in, float))
        self.b_in = np.zeros(0) if self.b_in is None else np.asarray(self.b_in, float).ravel()
        self.senses = tuple(self.senses or ()) or ("<=",) * len(self.b_in)
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, float)
        if self.objective is not None:
            self.objective = np.asarray(self.objective, float)
        if self.a_eq.shape != (len(self.b_eq), n) or self.a_in.shape != (len(self.b_in), n):
            raise ValueError("constraint rows must have length n")
        if len(self.senses) != len(self.b_in) or set(self.senses) - {"<=", ">="}:
            raise ValueError("one sense ('<=' or '>=') per inequality row")
        if not (np.all(np.isfinite(self.b_eq)) and np.all(np.isfinite(self.b_in))):
            raise ValueError("right-hand sides must be finite")

    def violation(self, x: np.ndarray) -> float:
        worst = 0.0
        if len(self.b_eq):
            worst = max(worst, float(np.max(np.abs(self.a_eq @ x - self.b_eq))))
        if len(self.b_in):
            r = self.a_in @ x - self.b_in
            sign = np.array([1.0 if s == "<=" else -1.0 for s in self.senses])
            worst = max(worst, float(np.max(np.maximum(sign * r, 0.0))))
        finite = np.isfinite(self.lower)
        if finite.any():
            worst = max(worst, float(np.max(np.maximum(self.lower[finite] - x[finite], 0.0))))
        return worst


@dataclass
class LpSolution:
    status: str  # feasible | infeasible | unbounded | failed
    values: Optional[np.ndarray] = None
    objective: float = float("nan")
    max_violation: float = float("nan")
    pivots: int = 0
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


class _Tableau:
    def __init__(self, a: np.ndarray, b: np.ndarray, basis: list[int], rule: str = "bland"):
        m, n = a.shape
        self.a0, self.b0 = a, b
        self.t = np.zeros((m + 1, n + 1))
        self.t[:m, :n] = a
        self.t[:m, n] = b
        self.basis = list(basis)
        self.cost = np.zeros(n)
        self.rule = rule
        self.pivots = 0

    @property
    def m(self):
        return self.t.shape[0] - 1

    def set_cost(self, c: np.ndarray):
        """Install minimization costs ``c`` as reduced costs w.r.t. the basis."""
        n = self.t.shape[1] - 1
        self.cost = np.zeros(n)
        self.cost[:len(c)] = c
        row = np.zeros(n + 1)
        row[:len(c)] = c
        for r, j in enumerate(self.basis):
            if row[j] != 0.0:
                row -= row[j] * self.t[r]
        self.t[-1] = row

    def pivot(self, r: int, j: int):
        t = self.t
        t[r] /= t[r, j]
        col = t[:, j].copy()
        col[r] = 0.0
        t -= np.outer(col, t[r])
        t[:, j] = 0.0
        t[r, j] = 1.0
        self.basis[r] = j
        self.pivots += 1

    def refresh(self):
        """Recompute the tableau from the original rows to shed rounding drift."""
        m = self.m
        try:
            lu = np.linalg.solve(self.a0[:, self.basis],
                                 np.hstack([self.a0, self.b0[:, None]]))
        except np.linalg.LinAlgError:
            return
        self.t[:m] = lu
        self.t[:m, -1] = np.maximum(self.t[:m, -1], 0.0)
        for r, j in enumerate(self.basis):
            self.t[:m, j] = 0.0
            self.t[r, j] = 1.0
        self.set_cost(self.cost)

    def run(self, allowed: np.ndarray) -> str:
        """Minimize over the columns flagged in ``allowed``.

        The entering column is always the lowest-index improving one.  The
        leaving row follows Bland (lowest basis index among tied rows) or, with
        ``rule == "stable"``, takes the largest tied pivot element.
        """
        t = self.t
        while True:
            if self.pivots > MAX_PIVOTS:
                return "failed"
            if self.pivots and self.pivots % REFRESH_EVERY == 0:
                self.refresh()
            cost = t[-1, :-1]
            cand = np.flatnonzero((cost < -COST_TOL) & allowed)
            if cand.size == 0:
                return "optimal"
            j = int(cand[0])
            col = t[:-1, j]
            rows = np.flatnonzero(col > PIVOT_TOL)
            if rows.size == 0:
                return "unbounded"
            # rounding can leave tiny negative values; treat them as zero
            rhs = np.maximum(t[rows, -1], 0.0)
            ratios = rhs / col[rows]
            # Harris bound: rows whose ratio is within the feasibility tolerance
            # of the minimum count as tied
            bound = np.min((rhs + FEAS_TOL) / col[rows])
            tied = rows[ratios <= bound]
            # Bland's choice among tied rows, skipping tiny pivots when possible
            if self.rule == "stable":
                r = int(tied[np.argmax(col[tied])])
            else:
                sturdy = tied[col[tied] >= TIE_PIVOT_FRACTION * col[tied].max()]
                r = int(min(sturdy, key=lambda k: self.basis[k]))
            self.pivot(r, j)
            np.maximum(t[:-1, -1], 0.0, out=t[:-1, -1])


def _farkas_holds(a: np.ndarray, b: np.ndarray, cost: np.ndarray, basis: list[int],
                  n_std: int) -> bool:
    """Check the phase-1 duals prove ``a[:, :n_std] y = b, y >= 0`` infeasible.

    A valid certificate ``w`` has ``w @ A <= 0`` on every structural column
    and ``w @ b > 0``; it is recomputed from the original rows.
    """
    try:
        w = np.linalg.solve(a[:, basis].T, cost[basis])
    except np.linalg.LinAlgError:
        return False
    # phase-1 duals give w @ A_j <= c_j = 0 and w @ b = residual > 0
    scale = float(np.max(np.abs(w), initial=0.0))
    if scale == 0.0:
        return False
    w = w / scale
    return bool(np.all(w @ a[:, :n_std] <= FEAS_TOL) and w @ b > FEAS_TOL)


def _standard_form(problem: LpProblem):
    """Return (A, b, c, back) with A y = b, y >= 0, minimize c @ y.

    ``back(y)`` maps a standard-form point to the original variables.
    """
    n = problem.n
    lower = problem.lower
    free = ~np.isfinite(lower)
    shift = np.where(free, 0.0, lower)

    a_rows = np.vstack([problem.a_eq, problem.a_in]) if n else np.zeros((0, 0))
    b = np.concatenate([problem.b_eq, problem.b_in]) - a_rows @ shift
    m_eq, m_in = len(problem.b_eq), len(problem.b_in)
    neg_cols = a_rows[:, free] * -1.0
    slack = np.zeros((m_eq + m_in, m_in))
    for k, s in enumerate(problem.senses):
        slack[m_eq + k, k] = 1.0 if s == "<=" else -1.0
    a = np.hstack([a_rows, neg_cols, slack])
    n_free = int(free.sum())

    c = np.zeros(a.shape[1])
    if problem.objective is not None:
        c[:n] = -problem.objective
        c[n:n + n_free] = problem.objective[free]

    free_idx = np.flatnonzero(free)

    def back(y):
        x = y[:n] + shift
        x[free_idx] -= y[n:n + n_free]
        return x

    return a, b, c, back


def solve(problem: LpProblem) -> LpSolution:
    """Two-phase simplex with a certificate check on the returned point.

    Bland's rule runs first.  If rounding breaks it down (pivot limit or a
    failed certificate), the solve is repeated once with largest-pivot row
    selection, which avoids ill-conditioned bases at the price of the
    anti-cycling guarantee.  If that fails too, an exact rational solve
    settles the problem.  All passes are deterministic.
    """
    sol = _solve(problem, "bland")
    if sol.status != "failed":
        return sol
    retry = _solve(problem, "stable")
    if retry.status != "failed":
        retry.pivots += sol.pivots
        return retry
    exact = _solve_exact(problem)
    if exact.status == "failed":
        exact.message = f"{sol.message}; retry: {retry.message}; exact: {exact.message}"
    exact.pivots += sol.pivots + retry.pivots
    return exact


def _solve(problem: LpProblem, rule: str) -> LpSolution:
    a, b, c, back = _standard_form(problem)
    m, n_std = a.shape

    flip = b < 0
    a = np.where(flip[:, None], -a, a)
    b = np.abs(b)

    # a slack column with +1 in its row (after the flip) can start in the basis
    basis = [-1] * m
    for j in range(n_std):
        col = a[:, j]
        nz = np.flatnonzero(col)
        if len(nz) == 1 and col[nz[0]] == 1.0 and basis[nz[0]] < 0:
            basis[nz[0]] = j
    need = [r for r in range(m) if basis[r] < 0]
    art = np.zeros((m, len(need)))
    for k, r in enumerate(need):
        art[r, k] = 1.0
        basis[r] = n_std + k
    tab = _Tableau(np.hstack([a, art]), b, basis, rule)
    n_all = n_std + len(need)

    if need:
        phase1 = np.zeros(n_all)
        phase1[n_std:] = 1.0
        tab.set_cost(phase1)
        status = tab.run(np.ones(n_all, bool))
        if status == "failed":
            return LpSolution("failed", pivots=tab.pivots, message="pivot limit in phase 1")
        infeas = -tab.t[-1, -1]
        if infeas > FEAS_TOL:
            if _farkas_holds(tab.a0, b, phase1, tab.basis, n_std):
                return LpSolution("infeasible", pivots=tab.pivots,
                                  message=f"phase-1 residual {infeas:.3e}")
            return LpSolution("failed", pivots=tab.pivots,
                              message="phase 1 ended without a valid infeasibility certificate")
        # drive zero-level artificials out; rows with no usable column are redundant
        keep = []
        for r in range(tab.m):
            if tab.basis[r] >= n_std:
                row = tab.t[r, :n_std]
                cols = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                if cols.size:
                    tab.pivot(r, int(cols[np.argmax(np.abs(row[cols]))]))
                    keep.append(r)
            else:
                keep.append(r)
        rows = keep + [tab.m]
        tab.t = np.hstack([tab.t[rows, :n_std], tab.t[rows, -1:]])
        tab.basis = [tab.basis[r] for r in keep]
        if len(keep) < m:
            # tableau rows mix original rows, so pick an independent subset of
            # the originals instead of reusing the tableau row indices
            _, _, perm = scipy.linalg.qr(a.T, mode="economic", pivoting=True)
            rows_kept = np.sort(perm[:len(keep)])
            a, b = a[rows_kept], b[rows_kept]
        tab.a0, tab.b0 = a, b

    tab.set_cost(c)
    status = tab.run(np.ones(n_std, bool))
    if status == "failed":
        return LpSolution("failed", pivots=tab.pivots, message="pivot limit in phase 2")
    if status == "unbounded":
        return LpSolution("unbounded", pivots=tab.pivots)

    # the tableau's basic values, and the same basis re-solved against the
    # untouched rows; keep whichever satisfies the original problem better
    candidates = [tab.t[:-1, -1]]
    try:
        candidates.append(np.linalg.solve(a[:, tab.basis], b))
    except np.linalg.LinAlgError:
        pass
    best = None
    for values in candidates:
        y = np.zeros(n_std)
        y[tab.basis] = np.maximum(values, 0.0)
        x = back(y)
        v = problem.violation(x)
        if best is None or v < best[1]:
            best = (x, v)
    x, viol = best
    obj = float(problem.objective @ x) if problem.objective is not None else 0.0
    if viol > FEAS_TOL:
        return LpSolution("failed", x, obj, viol, tab.pivots,
                          message=f"certificate check failed: violation {viol:.3e}")
    return LpSolution("feasible", x, obj, viol, tab.pivots)


def _exact_run(t: list, basis: list, allowed: int) -> str:
    """Bland's rule on a rational tableau; the last row holds reduced costs."""
    m = len(t) - 1
    pivots = 0
    while True:
        cost = t[-1]
        j = next((k for k in range(allowed) if cost[k] < 0), None)
        if j is None:
            return "optimal", pivots
        best = None
        for r in range(m):
            if t[r][j] > 0:
                ratio = t[r][-1] / t[r][j]
                if best is None or ratio < best[0] or (ratio == best[0] and basis[r] < basis[best[1]]):
                    best = (ratio, r)
        if best is None:
            return "unbounded", pivots
        _exact_pivot(t, basis, best[1], j)
        pivots += 1


def _exact_pivot(t: list, basis: list, r: int, j: int) -> None:
    piv = t[r][j]
    row = [v / piv for v in t[r]]
    t[r] = row
    nz = [k for k, v in enumerate(row) if v]
    for i, other in enumerate(t):
        f = other[j]
        if i != r and f:
            for k in nz:
                other[k] -= f * row[k]
    basis[r] = j


def _solve_exact(problem: LpProblem) -> LpSolution:
    """Two-phase Bland simplex in rational arithmetic.

    Float inputs convert to fractions without loss, so the verdict is exact
    for the problem as stored; only the final values are rounded.
    """
    a, b, c, back = _standard_form(problem)
    m, n_std = a.shape
    rows = []
    for r in range(m):
        sign = -1 if b[r] < 0 else 1
        rows.append([Fraction(float(v)) * sign for v in a[r]]
                    + [Fraction(int(k == r)) for k in range(m)]
                    + [Fraction(float(b[r])) * sign])
    n_all = n_std + m
    basis = list(range(n_std, n_all))
    # phase 1: minimize the sum of artificials
    obj = [Fraction(0)] * (n_all + 1)
    for row in rows:
        for k in range(n_std):
            obj[k] -= row[k]
        obj[-1] -= row[-1]
    t = rows + [obj]
    _, p1 = _exact_run(t, basis, n_all)
    if t[-1][-1] != 0:
        return LpSolution("infeasible", pivots=p1, message="exact phase-1 residual > 0")
    keep = []
    for r in range(m):
        if basis[r] >= n_std:
            j = next((k for k in range(n_std) if t[r][k]), None)
            if j is None:
                continue
            _exact_pivot(t, basis, r, j)
        keep.append(r)
    t = [t[r][:n_std] + [t[r][-1]] for r in keep]
    basis = [basis[r] for r in keep]
    cost = [Fraction(float(v)) for v in c] + [Fraction(0)]
    for r, j in enumerate(basis):
        f = cost[j]
        if f:
            cost = [u - f * v for u, v in zip(cost, t[r])]
    t.append(cost)
    status, p2 = _exact_run(t, basis, n_std)
    if status == "unbounded":
        return LpSolution("unbounded", pivots=p1 + p2)
    y = np.zeros(n_std)
    for r, j in enumerate(basis):
        y[j] = float(t[r][-1])
    x = back(y)
    viol = problem.violation(x)
    obj_val = float(problem.objective @ x) if problem.objective is not None else 0.0
    if viol > FEAS_TOL:
        return LpSolution("failed", x, obj_val, viol, p1 + p2,
                          message=f"rounded exact point violates by {viol:.3e}")
    return LpSolution("feasible", x, obj_val, viol, p1 + p2)


@dataclass
class MarginResult:
    margin: float
    solution: LpSolution
    strict: bool
    values: Optional[np.ndarray] = field(default=None)


def solve_with_margin(problem: LpProblem, strict_rows: Sequence[int], eps: float,
                      cap: Optional[float] = None) -> MarginResult:
    """Maximize a common slack ``s`` on the designated inequality rows.

    Each designated row ``a x >= b`` becomes ``a x - s >= b`` (``<=`` rows get
    ``+ s``).  The rows hold strictly, with room to spare, iff the optimal
    ``s`` exceeds ``eps``.  ``s`` is free, so the returned margin is signed and
    negative when the rows cannot even hold weakly.  ``s`` is capped at ``cap``
    (default ``1 + max |rhs|``) so the problem stays bounded.
    """
    n = problem.n
    if cap is None:
        # keeps the tableau well scaled; margins beyond the rhs scale are never needed
        cap = 1.0 + float(np.max(np.abs(np.concatenate([problem.b_eq, problem.b_in])),
                                 initial=0.0))
    col = np.zeros(len(problem.b_in))
    for r in strict_rows:
        col[r] = -1.0 if problem.senses[r] == ">=" else 1.0
    a_in = np.vstack([np.hstack([problem.a_in, col[:, None]]),
                      np.eye(1, n + 1, n)])
    b_in = np.append(problem.b_in, cap)
    obj = np.zeros(n + 1)
    obj[n] = 1.0
    ext = LpProblem(
        n + 1,
        np.hstack([problem.a_eq, np.zeros((len(problem.b_eq), 1))]),
        problem.b_eq,
        a_in, b_in, problem.senses + ("<=",),
        np.append(problem.lower, -np.inf),
        obj,
    )
    sol = solve(ext)
    if not sol.feasible:
        return MarginResult(float("-inf"), sol, False)
    s = float(sol.values[n])
    return MarginResult(s, sol, s > eps, sol.values[:n])


def dump(problem: LpProblem) -> str:
    """Plain-text row listing for cross-checking with external solvers."""
    fmt = lambda v: " ".join(repr(float(x)) for x in v)
    out = [f"variables {problem.n}"]
    if problem.objective is not None:
        out.append(f"maximize {fmt(problem.objective)}")
    out.append(f"lower {fmt(problem.lower)}")
    for row, rhs in zip(problem.a_eq, problem.b_eq):
        out.append(f"eq {fmt(row)} = {float(rhs)!r}")
    for row, rhs, s in zip(problem.a_in, problem.b_in, problem.senses):
        out.append(f"in {fmt(row)} {s} {float(rhs)!r}")
    return "\n".join(out) + "\n"
