"""Banker-OMD policies and the vanilla OMD reference.

Every policy is a decide/ingest state machine: at the start of round t the
harness hands it the feedback events released so far (``ingest``), then asks
for an action (``decide``).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment
from .errors import ConfigError, DomainError, StateError
from .geometry import (
    HypercubeBarrier,
    LogBarrierSimplex,
    Regularizer,
    TsallisHalf,
    barrier_hessian_eigensystem,
    bregman,
    omd_step,
)
from .ledger import LedgerState, RoundHistory, compose_action

# ---------------------------------------------------------------------------
# action scales


def tinf_scale(t: int, backlog: int, experienced: float, prefactor: float = 1.0) -> float:
    """(1/sqrt(t) + d_t sqrt(ln(D_t + 1) / D_t))^-1; the delay term is 0 when d_t = 0."""
    inv = 1.0 / math.sqrt(t)
    if backlog > 0:
        inv += backlog * math.sqrt(math.log(experienced + 1.0) / experienced)
    return prefactor / inv


def sftinf_scale(backlog: int, weighted_delay: float, range_est: float) -> float:
    return 1.0 / ((backlog + 1) * math.sqrt(math.log(3.0 + weighted_delay / range_est ** 2) / (3.0 + weighted_delay)))


def sflbinf_scale(backlog: int, weighted_delay: float, experienced: float, range_est: float, n_arms: int, horizon: int) -> float:
    base = 1.0 / (
        (backlog + 1)
        * math.sqrt(math.log(3.0 + weighted_delay / range_est ** 2) / (3.0 + weighted_delay))
        * math.sqrt(n_arms * math.log(horizon))
    )
    if backlog <= math.sqrt(experienced / n_arms):
        return max(base, 2.0 * range_est)
    return base


def bolo_scale(t: int, backlog: int, experienced: float, dim: int, horizon: int) -> float:
    log_t = math.log(horizon)
    inv = math.sqrt(log_t / (dim * t))
    if backlog > 0:
        inv += backlog * math.sqrt(math.log(experienced + 1.0) * log_t / (dim * experienced))
    return max(1.0 / inv, 8.0 * dim)


# ---------------------------------------------------------------------------
# helpers


def sample_arm(x: np.ndarray, u: float) -> int:
    """Inverse-CDF sampling in ascending arm order."""
    idx = int(np.searchsorted(np.cumsum(x), u, side="right"))
    return min(idx, x.size - 1)


def importance_estimate(loss: float, x: np.ndarray, arm: int) -> np.ndarray:
    est = np.zeros(x.size)
    est[arm] = loss / x[arm]
    return est


def point_hash(x) -> str:
    return hashlib.blake2b(np.ascontiguousarray(x, dtype=float).tobytes(), digest_size=8).hexdigest()


@dataclass
class PendingRound:
    """Decision-time values of a round whose feedback is still out."""

    x: np.ndarray
    sigma: float
    action: object
    backlog: int
    range_est: float = 1.0
    # linear bandits: sampled direction index, sign, eigenvalue and eigenvector
    direction: int = -1
    sign: float = 0.0
    eigval: float = 0.0
    eigvec: np.ndarray | None = None


@dataclass
class PolicyLog:
    sigmas: list = field(default_factory=list)
    investments: list = field(default_factory=list)
    total_investment: list = field(default_factory=list)
    backlogs: list = field(default_factory=list)
    x_hashes: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    range_estimates: list = field(default_factory=list)
    points: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# policies


class BankerPolicy:
    """Banker-OMD over the simplex with a variant-specific scale rule.

    Subclasses override :meth:`scale` and, for skip logic, :meth:`_resolve`.
    """

    kind = "banker"
    default_regularizer = TsallisHalf

    def __init__(self, n_arms: int, horizon: int, rng: np.random.Generator, reg: Regularizer | None = None,
                 strategy: str = "greedy", keep_history: bool = False, check_invariants: bool = False,
                 dump_points: bool = False):
        self.n_arms = int(n_arms)
        self.horizon = int(horizon)
        self.reg = reg if reg is not None else self.default_regularizer(n_arms)
        if self.reg.dim != self.n_arms:
            raise ConfigError(f"regularizer dimension {self.reg.dim} != {self.n_arms}")
        self.x0 = self.reg.default_point()
        self.rng = rng
        self.ledger = LedgerState(strategy, check_invariants=check_invariants)
        self.check_invariants = check_invariants
        self.keep_history = keep_history
        self.dump_points = dump_points
        self.t = 0
        self.backlog = 0
        self.experienced_delay = self._initial_experienced_delay()
        self.pending: dict[int, PendingRound] = {}
        self.history: dict[int, RoundHistory] = {}
        self.log = PolicyLog()
        self.skip_count = 0

    def _initial_experienced_delay(self) -> float:
        return 0.0

    # -- scale --------------------------------------------------------------
    def scale(self, t: int) -> float:
        raise NotImplementedError

    def _before_scale(self, t: int) -> None:
        """Hook for running statistics that include round t."""

    # -- decide -------------------------------------------------------------
    def decide(self, t: int):
        if t != self.t + 1:
            raise StateError(f"decide({t}) after round {self.t}")
        self.t = t
        self.experienced_delay += self.backlog
        self._before_scale(t)
        sigma = float(self.scale(t))
        alloc = self.ledger.open_round(t, sigma)
        x = compose_action(self.reg, self.ledger, alloc, self.x0)
        action, pending = self._play(x, sigma)
        self.pending[t] = pending
        log = self.log
        log.sigmas.append(sigma)
        log.investments.append(alloc.investment)
        log.total_investment.append(self.ledger.total_investment)
        log.backlogs.append(self.backlog)
        log.x_hashes.append(point_hash(x))
        log.actions.append(action)
        log.skipped.append(False)
        if self.dump_points:
            log.points.append(x)
        if self.keep_history:
            zero = np.zeros(self.reg.dim)
            self.history[t] = RoundHistory(x, zero, sigma, x, x)
        self.backlog += 1
        return x, action

    def _play(self, x, sigma):
        arm = sample_arm(x, self.rng.random())
        return arm, PendingRound(x, sigma, arm, self.backlog)

    # -- ingest -------------------------------------------------------------
    def ingest(self, events) -> None:
        for ev in sorted(events, key=lambda e: e.round):
            rec = self.pending.pop(ev.round, None)
            if rec is None:
                raise StateError(f"feedback for unknown or resolved round {ev.round}")
            self.backlog -= 1
            self._resolve(ev.round, rec, float(ev.observed_loss))

    def _resolve(self, s: int, rec: PendingRound, loss: float) -> None:
        self._settle(s, rec, importance_estimate(loss, rec.x, rec.action))

    def _settle(self, s, rec, ltilde):
        z, ztilde = omd_step(self.reg, rec.x, ltilde, rec.sigma)
        self.ledger.settle_feedback(s, self.reg.grad(z), point=z)
        if self.keep_history:
            self.history[s] = RoundHistory(rec.x, ltilde, rec.sigma, z, ztilde)
        return z, ztilde

    def _skip(self, s, rec):
        self.ledger.mark_skipped(s)
        self.skip_count += 1
        self.log.skipped[s - 1] = True

    # -- diagnostics --------------------------------------------------------
    def audit_history(self) -> list[RoundHistory]:
        """Per-round history with the ledger's current remaining savings attached."""
        if not self.keep_history:
            raise StateError("policy was built without keep_history")
        out = []
        for t in range(1, self.t + 1):
            h = self.history[t]
            out.append(RoundHistory(h.x, h.ltilde, h.sigma, h.z, h.ztilde, self.ledger.entries[t].v_remaining))
        return out


class ConstantScalePolicy(BankerPolicy):
    """Banker-OMD with a fixed action scale."""

    kind = "constant"

    def __init__(self, n_arms, horizon, rng, sigma: float = 1.0, **kw):
        super().__init__(n_arms, horizon, rng, **kw)
        self.sigma = float(sigma)

    def scale(self, t):
        return self.sigma


class BankerTINF(BankerPolicy):
    """Tsallis-1/2 regularizer with the delay-adaptive scale; no skipping."""

    kind = "tinf"

    def __init__(self, n_arms, horizon, rng, prefactor: float = 1.0, **kw):
        super().__init__(n_arms, horizon, rng, **kw)
        self.prefactor = float(prefactor)

    def scale(self, t):
        return tinf_scale(t, self.backlog, self.experienced_delay, self.prefactor)


class BankerSFTINF(BankerPolicy):
    """Scale-free Tsallis variant for nonnegative losses of unknown range."""

    kind = "sftinf"

    def __init__(self, n_arms, horizon, rng, **kw):
        super().__init__(n_arms, horizon, rng, **kw)
        self.range_est = 1.0
        self.weighted_delay = 0.0
        self.worst_slack = math.inf

    def _before_scale(self, t):
        self.weighted_delay += (self.backlog + 1) * self.range_est ** 2

    def scale(self, t):
        return sftinf_scale(self.backlog, self.weighted_delay, self.range_est)

    def _play(self, x, sigma):
        arm, rec = super()._play(x, sigma)
        rec.range_est = self.range_est
        self.log.range_estimates.append(self.range_est)
        return arm, rec

    def _resolve(self, s, rec, loss):
        self.range_est = max(self.range_est, 2.0 * loss)
        if loss > rec.range_est:
            self._skip(s, rec)
            return
        ltilde = importance_estimate(loss, rec.x, rec.action)
        z, ztilde = self._settle(s, rec, ltilde)
        if self.check_invariants:
            cost = rec.sigma * bregman(self.reg, rec.x, ztilde)
            bound = loss ** 2 / (math.sqrt(rec.x[rec.action]) * rec.sigma)
            slack = bound * (1 + 1e-9) + 1e-12 - cost
            self.worst_slack = min(self.worst_slack, slack)
            if slack < 0:
                raise AssertionError(f"round {s}: immediate cost {cost} exceeds {bound}")


class BankerSFLBINF(BankerPolicy):
    """Scale-free log-barrier variant for signed losses of unknown range."""

    kind = "sflbinf"
    default_regularizer = LogBarrierSimplex

    def __init__(self, n_arms, horizon, rng, **kw):
        if int(horizon) < 2:
            raise ConfigError("sflbinf needs a horizon of at least 2 (its scale uses ln T)")
        super().__init__(n_arms, horizon, rng, **kw)
        self.range_est = 1.0
        self.missing_weight = 0.0
        self.arrived_weight = 0.0
        self.safety_violations = 0
        self.worst_slack = math.inf  # min of l + sigma/2 and 2x - ztilde on the played arm

    def _initial_experienced_delay(self):
        return 1.0

    @property
    def weighted_delay(self) -> float:
        return self.missing_weight + self.arrived_weight

    def _before_scale(self, t):
        self.missing_weight += (self.backlog + 1) * self.range_est ** 2

    def scale(self, t):
        return sflbinf_scale(self.backlog, self.weighted_delay, self.experienced_delay,
                             self.range_est, self.n_arms, self.horizon)

    def _play(self, x, sigma):
        arm, rec = super()._play(x, sigma)
        rec.range_est = self.range_est
        self.log.range_estimates.append(self.range_est)
        return arm, rec

    def _resolve(self, s, rec, loss):
        self.range_est = max(self.range_est, 2.0 * abs(loss))
        self.missing_weight -= (rec.backlog + 1) * rec.range_est ** 2
        if abs(loss) > rec.range_est or loss < -0.5 * rec.sigma:
            self._skip(s, rec)
            return
        self.arrived_weight += (rec.backlog + 1) * loss ** 2
        ltilde = importance_estimate(loss, rec.x, rec.action)
        z, ztilde = self._settle(s, rec, ltilde)
        a = rec.action
        self.worst_slack = min(self.worst_slack, loss + 0.5 * rec.sigma, 2.0 * rec.x[a] - ztilde[a])
        if ztilde[a] > 2.0 * rec.x[a] * (1 + 1e-12):
            self.safety_violations += 1
            if self.check_invariants:
                raise AssertionError(f"round {s}: ztilde exceeds 2x on the played arm")


class BankerBOLO(BankerPolicy):
    """Linear bandit over a barrier domain with Dikin-ellipsoid sampling."""

    kind = "bolo"
    default_regularizer = HypercubeBarrier

    def __init__(self, dim, horizon, rng, **kw):
        if int(horizon) < 2:
            raise ConfigError("bolo needs a horizon of at least 2 (its scale uses ln T)")
        super().__init__(dim, horizon, rng, **kw)
        if self.reg.on_simplex:
            raise ConfigError("bolo needs a barrier regularizer")

    @property
    def dim(self):
        return self.n_arms

    def scale(self, t):
        return bolo_scale(t, self.backlog, self.experienced_delay, self.n_arms, self.horizon)

    def _play(self, x, sigma):
        try:
            vals, vecs = barrier_hessian_eigensystem(self.reg, x)
        except DomainError as exc:
            raise DomainError(f"round {self.t}: action left the interior ({exc})") from exc
        i = int(self.rng.integers(self.n_arms))
        sign = 1.0 if self.rng.integers(2) else -1.0
        e = vecs[:, i]
        action = x + sign * vals[i] ** -0.5 * e
        return action, PendingRound(x, sigma, action, self.backlog, direction=i, sign=sign, eigval=vals[i], eigvec=e)

    def _resolve(self, s, rec, loss):
        ltilde = bolo_estimate(loss, rec.sign, rec.eigval, rec.eigvec, self.n_arms)
        self._settle(s, rec, ltilde)


def bolo_estimate(observed: float, sign: float, eigval: float, eigvec, dim: int) -> np.ndarray:
    """One-point estimator l_hat * n * eps * lam^(1/2) * e."""
    return observed * dim * sign * math.sqrt(eigval) * np.asarray(eigvec, dtype=float)


class UniformPolicy:
    """Uniform-random baseline: a uniform arm, or a uniform point of the action set."""

    kind = "uniform"

    def __init__(self, n_arms, horizon, rng, action_set: str | None = None, **kw):
        self.n_arms = int(n_arms)
        self.horizon = int(horizon)
        self.rng = rng
        self.action_set = action_set
        self.t = 0
        self.log = PolicyLog()
        self.skip_count = 0
        self.x = np.full(self.n_arms, 1.0 / self.n_arms)

    def decide(self, t):
        self.t = t
        if self.action_set is None:
            action = sample_arm(self.x, self.rng.random())
            x = self.x
        elif self.action_set == "hypercube":
            action = self.rng.uniform(-1.0, 1.0, self.n_arms)
            x = np.zeros(self.n_arms)
        else:
            g = self.rng.standard_normal(self.n_arms)
            action = g / np.linalg.norm(g) * self.rng.random() ** (1.0 / self.n_arms)
            x = np.zeros(self.n_arms)
        log = self.log
        log.sigmas.append(0.0)
        log.investments.append(0.0)
        log.total_investment.append(0.0)
        log.backlogs.append(0)
        log.x_hashes.append(point_hash(x))
        log.actions.append(action)
        log.skipped.append(False)
        return x, action

    def ingest(self, events):
        pass


POLICIES = {cls.kind: cls for cls in (ConstantScalePolicy, BankerTINF, BankerSFTINF, BankerSFLBINF, BankerBOLO, UniformPolicy)}


def mab_decide(state: BankerPolicy, t: int):
    return state.decide(t)


def mab_ingest(state: BankerPolicy, events) -> None:
    state.ingest(events)


bolo_decide = mab_decide
bolo_ingest = mab_ingest


@dataclass
class VanillaRun:
    points: list
    actions: list
    losses: list


def vanilla_omd_run(reg: Regularizer, x0, sigma: float, env: Environment, rng: np.random.Generator) -> VanillaRun:
    """Straight-line OMD with importance-weighted estimators and fixed scale."""
    if not env.has_zero_delays:
        raise ConfigError("vanilla OMD needs an environment without delays")
    x = np.array(x0, dtype=float)
    out = VanillaRun([], [], [])
    for t in range(1, env.horizon + 1):
        arm = sample_arm(x, rng.random())
        loss = env.play(t, arm)
        env.release(t + 1)
        out.points.append(x)
        out.actions.append(arm)
        out.losses.append(loss)
        x, _ = omd_step(reg, x, importance_estimate(loss, x, arm), sigma)
    return out

