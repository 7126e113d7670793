"""Savings/investment bookkeeping for Banker-OMD.

Every round t opens a saving entry worth ``sigma_t`` (its ``v_remaining``).
Once round t's feedback arrives the entry becomes spendable; later rounds pay
for their own scale by spending arrived savings and, on shortfall, by
investing ``b_t`` in the default action.  The running total of investments
always equals the total remaining savings.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingDualError, OrderError, StateError
from .geometry import Regularizer, bregman, mirror_simplex


class Status(enum.Enum):
    MISSING = "missing"
    ARRIVED = "arrived"
    SKIPPED = "skipped"


@dataclass
class SavingEntry:
    round: int
    sigma: float
    v_remaining: float
    status: Status = Status.MISSING
    dual_grad: np.ndarray | None = None
    point: np.ndarray | None = None
    resolved_at: int | None = None  # first round that could use the resolution


@dataclass(frozen=True)
class Allocation:
    round: int
    sigma: float
    investment: float
    spends: tuple = ()
    # proportional strategy only: sum_s v_s grad(z_s) / sum_s v_s over the pool
    pooled_dual: np.ndarray | None = None
    spent: float = 0.0


def _two_sum(a, b):
    s = a + b
    bp = s - a
    return s, (a - (s - bp)) + (b - bp)


class LedgerState:
    """Savings ledger owned by a single run.

    ``strategy`` is ``"greedy"`` (spend earliest arrived savings first) or
    ``"proportional"`` (spend every arrived saving in proportion to what is
    left of it, tracking a single pooled dual vector).
    """

    STRATEGIES = ("greedy", "proportional")

    def __init__(self, strategy: str = "greedy", record_trace: bool = False, check_invariants: bool = False):
        if strategy not in self.STRATEGIES:
            raise ValueError(f"unknown allocation strategy {strategy!r}")
        self.strategy = strategy
        self.entries: dict[int, SavingEntry] = {}
        self.total_investment = 0.0
        self._investment_lo = 0.0
        self.last_round = 0
        self.scan_steps = 0
        self.record_trace = record_trace
        self.check_invariants = check_invariants
        self.trace: list[dict] = []
        self._transitions: list[tuple[int, str]] = []
        self._heap: list[int] = []  # greedy: arrived rounds with v > 0
        self._pool: dict[int, None] = {}  # proportional: same, insertion ordered
        self._pool_dual: np.ndarray | None = None  # sum_s v_s grad(z_s)

    @property
    def cursor(self) -> int | None:
        """Lowest round with unexhausted arrived savings."""
        if self.strategy == "greedy":
            return self._heap[0] if self._heap else None
        return min(self._pool) if self._pool else None

    def available_savings(self) -> float:
        rounds = self._heap if self.strategy == "greedy" else self._pool
        return math.fsum(self.entries[s].v_remaining for s in rounds)

    def remaining_total(self) -> float:
        return math.fsum(e.v_remaining for e in self.entries.values())

    def stranded_savings(self) -> float:
        """Savings frozen on skipped rounds; never spendable."""
        return math.fsum(e.v_remaining for e in self.entries.values() if e.status is Status.SKIPPED)

    def open_round(self, t: int, sigma_t: float) -> Allocation:
        if t <= self.last_round:
            raise OrderError(f"round {t} opened after round {self.last_round}")
        if not sigma_t > 0:
            raise ValueError(f"sigma_t must be positive, got {sigma_t}")
        sigma_t = float(sigma_t)
        if self.strategy == "greedy":
            alloc = self._allocate_greedy(t, sigma_t)
        else:
            alloc = self._allocate_proportional(t, sigma_t)
        self.last_round = t
        self.entries[t] = SavingEntry(t, sigma_t, sigma_t)
        self.total_investment, lo = _two_sum(self.total_investment, alloc.investment)
        self._investment_lo += lo
        if self.record_trace:
            self.trace.append({
                "t": t,
                "sigma": sigma_t,
                "investment": alloc.investment,
                "total_investment": self.total_investment,
                "spends": list(alloc.spends),
                "transitions": self._transitions,
            })
        self._transitions = []
        if self.check_invariants:
            self.assert_balanced()
        return alloc

    def _allocate_greedy(self, t, sigma_t):
        hi, lo = sigma_t, 0.0  # need remaining, compensated
        spends = []
        heap = self._heap
        while heap and hi + lo > 0:
            s = heap[0]
            self.scan_steps += 1
            entry = self.entries[s]
            need = hi + lo
            if entry.v_remaining >= need:
                amount = need
                entry.v_remaining -= amount
                hi, lo = 0.0, 0.0
                if entry.v_remaining <= 0:
                    entry.v_remaining = 0.0
                    heapq.heappop(heap)
            else:
                amount = entry.v_remaining
                hi, err = _two_sum(hi, -amount)
                lo += err
                entry.v_remaining = 0.0
                heapq.heappop(heap)
            spends.append((s, amount))
        investment = max(hi + lo, 0.0)
        return Allocation(t, sigma_t, investment, tuple(spends), spent=math.fsum(a for _, a in spends))

    def _allocate_proportional(self, t, sigma_t):
        if not self._pool:
            return Allocation(t, sigma_t, sigma_t)
        rounds = list(self._pool)
        self.scan_steps += len(rounds)
        v = math.fsum(self.entries[s].v_remaining for s in rounds)
        pooled = self._pool_dual / v
        if v <= sigma_t:
            spends = tuple((s, self.entries[s].v_remaining) for s in rounds)
            for s in rounds:
                self.entries[s].v_remaining = 0.0
            self._pool.clear()
            self._pool_dual = None
            return Allocation(t, sigma_t, sigma_t - v, spends, pooled, v)
        frac = sigma_t / v
        spends = []
        for s in rounds:
            entry = self.entries[s]
            amount = entry.v_remaining * frac
            entry.v_remaining -= amount
            spends.append((s, amount))
        self._pool_dual = self._pool_dual * (1.0 - frac)
        return Allocation(t, sigma_t, 0.0, tuple(spends), pooled, sigma_t)

    def _pending(self, s) -> SavingEntry:
        entry = self.entries.get(s)
        if entry is None:
            raise StateError(f"no ledger entry for round {s}")
        if entry.status is not Status.MISSING:
            raise StateError(f"round {s} already {entry.status.value}")
        return entry

    def settle_feedback(self, s: int, dual_grad, point=None) -> None:
        """Mark round s arrived; its saving becomes spendable from the next round."""
        entry = self._pending(s)
        entry.status = Status.ARRIVED
        entry.resolved_at = self.last_round + 1
        dual_grad = np.asarray(dual_grad, dtype=float)
        self._transitions.append((s, Status.ARRIVED.value))
        if self.strategy == "greedy":
            entry.dual_grad = dual_grad
            entry.point = None if point is None else np.asarray(point, dtype=float)
            heapq.heappush(self._heap, s)
        else:
            contrib = entry.v_remaining * dual_grad
            self._pool_dual = contrib if self._pool_dual is None else self._pool_dual + contrib
            self._pool[s] = None

    def mark_skipped(self, s: int) -> None:
        """Mark round s skipped; its saving is frozen forever."""
        entry = self._pending(s)
        entry.status = Status.SKIPPED
        entry.resolved_at = self.last_round + 1
        self._transitions.append((s, Status.SKIPPED.value))

    def assert_balanced(self, rtol: float = 1e-9) -> None:
        total = self.remaining_total()
        invest = self.total_investment + self._investment_lo
        if abs(invest - total) > rtol * max(1.0, total):
            raise AssertionError(f"ledger out of balance: B={invest!r}, sum v={total!r}")


def compose_action(reg: Regularizer, ledger: LedgerState, alloc: Allocation, x0) -> np.ndarray:
    """Form x_t from the savings spent by ``alloc`` plus its investment in x0."""
    x0 = np.asarray(x0, dtype=float)
    if not alloc.spends:
        return x0.copy()
    sigma = alloc.sigma
    if alloc.pooled_dual is not None:
        theta = (alloc.spent / sigma) * alloc.pooled_dual
    else:
        if alloc.investment == 0.0 and len(alloc.spends) == 1:
            entry = ledger.entries[alloc.spends[0][0]]
            if entry.point is not None:
                return entry.point.copy()
        theta = np.zeros(reg.dim)
        for s, amount in alloc.spends:
            g = ledger.entries[s].dual_grad
            if g is None:
                raise MissingDualError(f"round {alloc.round} spends from round {s} which has no dual point")
            theta = theta + (amount / sigma) * g
    if alloc.investment > 0:
        theta = theta + (alloc.investment / sigma) * reg.grad(x0)
    if reg.on_simplex:
        return mirror_simplex(reg, theta)
    return reg.conj_grad(theta)


@dataclass
class AuditRecord:
    lhs: float
    investment_cost: float
    immediate_cost: float
    remaining_savings: float

    @property
    def rhs(self) -> float:
        return self.investment_cost + self.immediate_cost - self.remaining_savings

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


@dataclass
class RoundHistory:
    """What the audit needs from one round.  Unresolved rounds carry a zero
    estimator with z = ztilde = x."""

    x: np.ndarray
    ltilde: np.ndarray
    sigma: float
    z: np.ndarray
    ztilde: np.ndarray
    v_remaining: float = field(default=0.0)


class RegretBoundAuditor:
    """Both sides of the Banker-OMD regret identity for many comparators.

    Everything except the comparator is fixed by the trace, and
    ``sum_s v_s D(y, z_s)`` is ``V psi(y) - c - <g, y>`` with aggregates
    ``V, c, g`` over the savings, so each comparator costs O(K).
    """

    def __init__(self, reg: Regularizer, total_investment: float, history, x0):
        self.reg = reg
        self.x0 = np.asarray(x0, dtype=float)
        self.total_investment = float(total_investment)
        ltilde_sum = np.zeros(reg.dim)
        lx, imm, c = [], [], []
        vol, g = 0.0, np.zeros(reg.dim)
        for h in history:
            if np.any(h.ltilde):
                lx.append(float(h.ltilde @ h.x))
                ltilde_sum += h.ltilde
                imm.append(h.sigma * bregman(reg, h.x, h.ztilde))
            if h.v_remaining > 0:
                gz = reg.grad(h.z)
                vol += h.v_remaining
                c.append(h.v_remaining * (reg.value(h.z) - float(gz @ h.z)))
                g += h.v_remaining * gz
        self._lx = math.fsum(lx)
        self._ltilde_sum = ltilde_sum
        self.immediate_cost = math.fsum(imm)
        self._vol, self._c, self._g = vol, math.fsum(c), g

    def audit(self, y) -> AuditRecord:
        y = np.asarray(y, dtype=float)
        lhs = self._lx - float(self._ltilde_sum @ y)
        rem = self._vol * self.reg.value(y) - self._c - float(self._g @ y) if self._vol > 0 else 0.0
        inv = self.total_investment * bregman(self.reg, y, self.x0) if self.total_investment > 0 else 0.0
        return AuditRecord(lhs, inv, self.immediate_cost, rem)


def regret_bound_audit(reg: Regularizer, total_investment: float, history, y, x0) -> AuditRecord:
    """Evaluate both sides of the regret identity against comparator y.

    ``history`` is a sequence of :class:`RoundHistory`.
    """
    return RegretBoundAuditor(reg, total_investment, history, x0).audit(y)


def investment_decomposition(sigmas, investments, release_rounds, skipped) -> tuple[float, float]:
    """Return ``(B_T, sigma_T0 + sum of sigma_s unavailable at T0)``.

    Arrays are indexed by round - 1.  A round s < T0 is unavailable at T0 when
    its feedback had not been released by then (``release_rounds[s] > T0``) or
    when it was skipped.  T0 is the last round with positive investment.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    investments = np.asarray(investments, dtype=float)
    total = math.fsum(investments)
    pos = np.flatnonzero(investments > 0)
    if pos.size == 0:
        return total, 0.0
    t0 = int(pos[-1]) + 1
    release = np.asarray(release_rounds)[: t0 - 1]
    skip = np.asarray(skipped, dtype=bool)[: t0 - 1]
    held = (release > t0) | skip
    return total, sigmas[t0 - 1] + math.fsum(sigmas[: t0 - 1][held])
