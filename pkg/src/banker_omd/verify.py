"""Property suite behind ``banker verify``.

Each property runs on fixed seeds and returns its worst observed slack;
a property passes when that slack is nonnegative (tolerances are folded
into the slack).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .algorithms import (
    BankerBOLO,
    BankerSFLBINF,
    BankerSFTINF,
    BankerTINF,
    bolo_estimate,
    importance_estimate,
)
from .environment import DelaySchedule, Environment, LossModel, summation_lemma_gap
from .geometry import (
    BallBarrier,
    HypercubeBarrier,
    LogBarrierSimplex,
    NegEntropy,
    TsallisHalf,
    bregman,
    bregman_conjugate,
    mirror_simplex,
    mirror_unconstrained,
    psi_grad,
    psi_value,
)
from .harness import ExperimentConfig, run_single
from .ledger import LedgerState, RegretBoundAuditor, compose_action, investment_decomposition

PROPERTIES: dict = {}


def prop(name):
    def deco(fn):
        PROPERTIES[name] = fn
        return fn
    return deco


@dataclass
class PropertyResult:
    name: str
    passed: bool
    worst_slack: float
    seconds: float
    error: str | None = None


# ---------------------------------------------------------------------------
# random points


def simplex_point(rng, k, alpha=1.0, floor=1e-6):
    x = rng.dirichlet(np.full(k, alpha))
    x = np.maximum(x, floor)
    return x / x.sum()


def interior_point(rng, reg, margin=0.1):
    n = reg.dim
    if isinstance(reg, HypercubeBarrier):
        return rng.uniform(-1 + margin, 1 - margin, n)
    if isinstance(reg, BallBarrier):
        g = rng.standard_normal(n)
        return g / np.linalg.norm(g) * (1 - margin) * rng.random() ** (1.0 / n)
    return simplex_point(rng, n, floor=1e-3)


def _regs(rng, simplex_only=False):
    out = []
    for _ in range(4):
        k = int(rng.integers(2, 9))
        out += [TsallisHalf(k), LogBarrierSimplex(k), NegEntropy(k)]
        if not simplex_only:
            out += [HypercubeBarrier(k), BallBarrier(k)]
    return out


# ---------------------------------------------------------------------------
# geometry


@prop("bregman_nonnegative")
def bregman_nonnegative():
    rng = np.random.default_rng(101)
    worst = math.inf
    for reg in _regs(rng):
        for _ in range(200):
            y, x = interior_point(rng, reg, 0.01), interior_point(rng, reg, 0.01)
            worst = min(worst, bregman(reg, y, x) + 1e-12)
    return worst


@prop("mirror_round_trip")
def mirror_round_trip():
    rng = np.random.default_rng(102)
    worst = math.inf
    for reg in _regs(rng):
        for _ in range(200):
            x = interior_point(rng, reg, 0.01)
            g = psi_grad(reg, x)
            worst = min(worst, 1e-9 - float(np.max(np.abs(mirror_unconstrained(reg, g) - x))))
            if reg.on_simplex:
                # the restricted map must ignore a constant shift of the dual point
                back = mirror_simplex(reg, g + rng.normal())
                worst = min(worst, 1e-9 - float(np.max(np.abs(back - x))))
    return worst


@prop("bregman_duality")
def bregman_duality():
    rng = np.random.default_rng(103)
    worst = math.inf
    for reg in _regs(rng):
        for _ in range(100):
            y, x = interior_point(rng, reg), interior_point(rng, reg)
            d = bregman(reg, y, x)
            dc = bregman_conjugate(reg, psi_grad(reg, x), psi_grad(reg, y))
            worst = min(worst, 1e-8 * max(1.0, abs(d)) - abs(d - dc))
    return worst


@prop("gradient_finite_difference")
def gradient_finite_difference():
    rng = np.random.default_rng(104)
    h = 1e-6
    worst = math.inf
    for reg in _regs(rng):
        for _ in range(50):
            x = interior_point(rng, reg, 0.2)
            if reg.on_simplex:
                x = np.maximum(x, 0.02)
            g = psi_grad(reg, x)
            fd = np.empty(reg.dim)
            for i in range(reg.dim):
                e = np.zeros(reg.dim)
                e[i] = h
                fd[i] = (psi_value(reg, x + e) - psi_value(reg, x - e)) / (2 * h)
            rel = np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1.0)
            worst = min(worst, 1e-5 - rel)
    return worst


def _random_composition(rng, reg, strategy):
    """A ledger with h <= 5 arrived savings and one freshly composed round."""
    ledger = LedgerState(strategy)
    h = int(rng.integers(1, 6))
    zs = {}
    for s in range(1, h + 1):
        ledger.open_round(s, float(rng.uniform(0.1, 5.0)))
    for s in range(1, h + 1):
        z = simplex_point(rng, reg.dim, floor=1e-4)
        zs[s] = z
        ledger.settle_feedback(s, psi_grad(reg, z))
    total = sum(e.sigma for e in ledger.entries.values())
    alloc = ledger.open_round(h + 1, float(rng.uniform(0.2, 1.5)) * total)
    x0 = reg.default_point()
    return alloc, compose_action(reg, ledger, alloc, x0), zs, x0


@prop("composition_inequality")
def composition_inequality():
    rng = np.random.default_rng(105)
    worst = math.inf
    for i in range(200):
        k = int(rng.integers(2, 9))
        reg = TsallisHalf(k) if i % 2 == 0 else LogBarrierSimplex(k)
        alloc, x, zs, x0 = _random_composition(rng, reg, "greedy" if i % 4 < 2 else "proportional")
        for _ in range(20):
            y = simplex_point(rng, k, alpha=0.5, floor=1e-8)
            lhs = alloc.sigma * bregman(reg, y, x)
            rhs = math.fsum(a * bregman(reg, y, zs[s]) for s, a in alloc.spends)
            if alloc.investment > 0:
                rhs += alloc.investment * bregman(reg, y, x0)
            worst = min(worst, rhs - lhs + 1e-8 * max(1.0, rhs))
    return worst


@prop("tsallis_immediate_cost")
def tsallis_immediate_cost():
    rng = np.random.default_rng(106)
    worst = math.inf
    for _ in range(500):
        k = int(rng.integers(2, 11))
        reg = TsallisHalf(k)
        x = simplex_point(rng, k, alpha=0.5, floor=1e-6)
        loss = rng.random(k)
        sigma = float(rng.uniform(0.1, 50.0))
        expected = 0.0
        for a in range(k):
            ztilde = mirror_unconstrained(reg, psi_grad(reg, x) - importance_estimate(loss[a], x, a) / sigma)
            expected += x[a] * sigma * bregman(reg, x, ztilde)
        bound = math.sqrt(k) * float(np.max(loss)) ** 2 / sigma
        worst = min(worst, bound - expected + 1e-12)
    return worst


@prop("log_barrier_immediate_cost")
def log_barrier_immediate_cost():
    rng = np.random.default_rng(107)
    worst = math.inf
    for _ in range(1000):
        k = int(rng.integers(2, 11))
        reg = LogBarrierSimplex(k)
        x = simplex_point(rng, k, alpha=0.5, floor=1e-6)
        a = int(rng.integers(k))
        sigma = float(rng.uniform(0.5, 50.0))
        loss = float(rng.uniform(-0.5 * sigma, 1.0))
        theta = psi_grad(reg, x) - importance_estimate(loss, x, a) / sigma
        ztilde = mirror_unconstrained(reg, theta)
        if np.all(ztilde <= 2 * x):
            cost = sigma * bregman(reg, x, ztilde)
            worst = min(worst, 2 * loss ** 2 / sigma - cost + 1e-12)
    return worst


# ---------------------------------------------------------------------------
# ledger


def ledger_stream(seed, strategy, rounds, skip_p=0.1, max_delay=30, balance_every=1):
    """Drive a bare ledger with random scales, delays and skips.

    Returns the ledger plus the per-round trace arrays needed by the checks.
    """
    rng = np.random.default_rng(seed)
    ledger = LedgerState(strategy)
    due: dict[int, list[int]] = {}
    sigmas, invest, release, skipped = [], [], [], []
    exact_worst = greedy_worst = balance_worst = math.inf
    dual = np.zeros(2)
    for t in range(1, rounds + 1):
        for s in due.pop(t, []):
            if rng.random() < skip_p:
                ledger.mark_skipped(s)
                skipped[s - 1] = True
            else:
                ledger.settle_feedback(s, dual)
        sigma = float(rng.uniform(0.5, 2.0)) * math.sqrt(t)
        alloc = ledger.open_round(t, sigma)
        paid = alloc.investment + math.fsum(a for _, a in alloc.spends)
        exact_worst = min(exact_worst, 1e-12 - abs(paid - sigma))
        if alloc.investment > 0:
            greedy_worst = min(greedy_worst, 0.0 - ledger.available_savings())
        if t % balance_every == 0 or t == rounds:
            b = ledger.total_investment + ledger._investment_lo
            rem = ledger.remaining_total()
            balance_worst = min(balance_worst, 1e-9 * max(1.0, rem) - abs(b - rem))
        d = int(rng.integers(0, max_delay + 1))
        due.setdefault(t + d + 1, []).append(t)
        sigmas.append(sigma)
        invest.append(alloc.investment)
        release.append(t + d + 1)
        skipped.append(False)
    return ledger, sigmas, invest, release, skipped, (exact_worst, greedy_worst, balance_worst)


@prop("allocation_exactness")
def allocation_exactness():
    worst = math.inf
    for i, (strategy, rounds) in enumerate((("greedy", 50000), ("proportional", 5000))):
        *_, checks = ledger_stream(200 + i, strategy, rounds, balance_every=1000)
        worst = min(worst, checks[0])
    return worst


@prop("greedy_optimality")
def greedy_optimality():
    worst = math.inf
    for seed in range(210, 215):
        *_, checks = ledger_stream(seed, "greedy", 5000, balance_every=1000)
        worst = min(worst, checks[1])
    return 0.0 if worst == math.inf else worst


@prop("balance_identity")
def balance_identity():
    worst = math.inf
    for i, strategy in enumerate(("greedy", "proportional")):
        *_, checks = ledger_stream(220 + i, strategy, 2000)
        worst = min(worst, checks[2])
    return worst


@prop("investment_decomposition")
def investment_decomposition_check():
    worst = math.inf
    for seed in range(230, 250):
        strategy = "greedy" if seed % 2 == 0 else "proportional"
        rounds = 200 + 50 * (seed % 7)
        _, sigmas, invest, release, skipped, _ = ledger_stream(seed, strategy, rounds, skip_p=0.2, max_delay=15)
        total, decomposed = investment_decomposition(sigmas, invest, release, skipped)
        worst = min(worst, 1e-9 * max(1.0, total) - abs(total - decomposed))
    return worst


@prop("amortized_scan")
def amortized_scan():
    worst = math.inf
    for seed in range(260, 265):
        ledger, *_ = ledger_stream(seed, "greedy", 10000, max_delay=100, balance_every=10000)
        worst = min(worst, 2 * ledger.last_round - ledger.scan_steps)
    return float(worst)


@prop("regret_bound_audit")
def regret_bound_audit_check():
    rng = np.random.default_rng(270)
    worst = math.inf
    for i in range(20):
        k = int(rng.integers(2, 9))
        T = int(rng.integers(20, 300))
        model = LossModel.from_matrix(rng.random((T, k)))
        delays = DelaySchedule.per_round(rng.integers(0, 51, T))
        policy = BankerTINF(k, T, np.random.default_rng(1000 + i), keep_history=True,
                            strategy="greedy" if i % 2 == 0 else "proportional")
        env = Environment(model, delays)
        for t in range(1, T + 1):
            policy.ingest(env.release(t))
            _, arm = policy.decide(t)
            env.play(t, arm)
        if i % 3 == 0:
            policy.ingest(env.drain())
        auditor = RegretBoundAuditor(policy.reg, policy.ledger.total_investment, policy.audit_history(), policy.x0)
        for j in range(100):
            y = np.eye(k)[j % k] if j < k else simplex_point(rng, k, alpha=0.5, floor=1e-9)
            y = np.maximum(y, 1e-12)
            y = y / y.sum()
            audit = auditor.audit(y)
            worst = min(worst, audit.slack + 1e-6 * max(1.0, abs(audit.lhs)))
    return worst


# ---------------------------------------------------------------------------
# algorithms


@prop("mab_estimator_unbiased")
def mab_estimator_unbiased():
    rng = np.random.default_rng(300)
    worst = math.inf
    for _ in range(1000):
        k = int(rng.integers(2, 11))
        x = simplex_point(rng, k, alpha=0.5, floor=1e-9)
        loss = rng.uniform(0, 2, k)
        cap = float(rng.uniform(0.5, 2.0))
        kept = loss <= cap
        mean = sum(x[a] * importance_estimate(loss[a], x, a) for a in range(k) if kept[a])
        target = np.where(kept, loss, 0.0)
        worst = min(worst, 1e-12 - float(np.max(np.abs(mean - target))))
    return worst


@prop("bolo_estimator_unbiased")
def bolo_estimator_unbiased():
    rng = np.random.default_rng(301)
    worst = math.inf
    for i in range(1000):
        n = int(rng.integers(1, 7))
        reg = HypercubeBarrier(n) if i % 2 == 0 else BallBarrier(n)
        x = interior_point(rng, reg, 0.3)
        ell = rng.uniform(-1, 1, n)
        ell /= np.abs(ell).sum() if i % 2 == 0 else np.linalg.norm(ell)
        vals, vecs = reg.eigensystem(x)
        mean = np.zeros(n)
        for j in range(n):
            for sign in (-1.0, 1.0):
                action = x + sign * vals[j] ** -0.5 * vecs[:, j]
                mean += bolo_estimate(float(ell @ action), sign, vals[j], vecs[:, j], n)
        mean /= 2 * n
        worst = min(worst, 1e-12 - float(np.max(np.abs(mean - ell))))
    return worst


def _drive(policy, model, delays, T):
    env = Environment(model, delays, T)
    for t in range(1, T + 1):
        policy.ingest(env.release(t))
        _, action = policy.decide(t)
        env.play(t, action)
    return env


def _scale_free_model(seed, k, T, L, signed):
    rng = np.random.default_rng(seed)
    base = (rng.random((T, k)) < np.linspace(0.3, 0.6, k)).astype(float)
    if signed:
        base = 2 * base - 1
    return LossModel.scale_free(base * rng.random((T, k)), L)


@prop("sftinf_immediate_cost")
def sftinf_immediate_cost():
    worst = math.inf
    for i, L in enumerate((0.5, 7.0, 100.0)):
        model = _scale_free_model(310 + i, 4, 1500, L, signed=False)
        policy = BankerSFTINF(4, 1500, np.random.default_rng(311 + i), check_invariants=True)
        _drive(policy, model, DelaySchedule.uniform(5 * i), 1500)
        worst = min(worst, policy.worst_slack)
    return worst


@prop("sflbinf_safety")
def sflbinf_safety():
    worst = math.inf
    for i, L in enumerate((0.5, 7.0, 100.0)):
        model = _scale_free_model(320 + i, 4, 1500, L, signed=True)
        policy = BankerSFLBINF(4, 1500, np.random.default_rng(321 + i))
        _drive(policy, model, DelaySchedule.uniform(5 * i), 1500)
        worst = min(worst, policy.worst_slack, 0.0 - policy.safety_violations)
    return worst


@prop("sftinf_skip_budget")
def sftinf_skip_budget():
    worst = math.inf
    for i, L in enumerate((3.0, 100.0, 1000.0)):
        model = _scale_free_model(330 + i, 5, 2000, L, signed=False)
        policy = BankerSFTINF(5, 2000, np.random.default_rng(331 + i))
        _drive(policy, model, DelaySchedule.uniform(10 * i), 2000)
        budget = (math.ceil(math.log2(4 * L)) + 1) * (max(policy.log.backlogs) + 1)
        worst = min(worst, budget - policy.skip_count)
    return float(worst)


@prop("bolo_clamp")
def bolo_clamp():
    worst = math.inf
    for i, (n, d) in enumerate(((2, 0), (4, 10), (3, 5))):
        rng = np.random.default_rng(340 + i)
        model = LossModel.random_linear(300, n, 341 + i, "hypercube" if i % 2 == 0 else "ball")
        reg = HypercubeBarrier(n) if i % 2 == 0 else BallBarrier(n)
        policy = BankerBOLO(n, 300, rng, reg=reg)
        _drive(policy, model, DelaySchedule.uniform(d), 300)
        worst = min(worst, min(policy.log.sigmas) - 8 * n)
    return worst


def _determinism_config():
    return ExperimentConfig.from_dict({
        "algorithm": {"kind": "sftinf", "arms": 3, "horizon": 300},
        "environment": {
            "losses": {"kind": "scale_free", "means": [0.3, 0.5, 0.6], "L": 5.0},
            "delays": {"kind": "geometric", "p": 0.2},
        },
        "master_seed": 350,
    })


@prop("determinism")
def determinism():
    cfg = _determinism_config()
    a, b = run_single(cfg, 3), run_single(cfg, 3)
    same = repr(a) == repr(b) and all(
        np.array_equal(getattr(a, f), getattr(b, f))
        for f in ("losses", "sigmas", "investments", "total_investment", "backlogs", "skipped", "release_rounds")
    )
    return 0.0 if same else -1.0


# ---------------------------------------------------------------------------
# environment


def _arm_env(seed, T=400, k=4):
    rng = np.random.default_rng(seed)
    model = LossModel.from_matrix(rng.random((T, k)))
    delays = DelaySchedule.arm_dependent(rng.integers(0, 20, (T, k)))
    return model, delays, Environment(model, delays)


@prop("release_timing")
def release_timing():
    worst = 0.0
    for seed in range(400, 405):
        model, delays, env = _arm_env(seed)
        rng = np.random.default_rng(seed + 50)
        arms = {}
        for t in range(1, env.horizon + 1):
            for ev in env.release(t):
                worst = min(worst, -abs((t - ev.round - 1) - delays.delay(ev.round, arms[ev.round])))
            arms[t] = int(rng.integers(model.dim))
            env.play(t, arms[t])
        for s, r in enumerate(env.release_rounds, start=1):
            worst = min(worst, -abs((r - s - 1) - delays.delay(s, arms[s])))
    return float(worst)


@prop("delay_accounting")
def delay_accounting():
    worst = 0.0
    for seed in range(410, 415):
        model, delays, env = _arm_env(seed)
        policy = BankerTINF(model.dim, env.horizon, np.random.default_rng(seed))
        for t in range(1, env.horizon + 1):
            policy.ingest(env.release(t))
            _, arm = policy.decide(t)
            env.play(t, arm)
        recomputed = sum(delays.delay(t, a) for t, a in enumerate(policy.log.actions, start=1))
        worst = min(worst, -abs(env.total_delay - recomputed))
    return float(worst)


def _reachable(obj, limit=100000):
    seen, stack = set(), [obj]
    while stack and len(seen) < limit:
        cur = stack.pop()
        if id(cur) in seen or isinstance(cur, (str, bytes, int, float, bool, type(None))):
            continue
        seen.add(id(cur))
        yield cur
        if isinstance(cur, dict):
            stack.extend(cur.keys())
            stack.extend(cur.values())
        elif isinstance(cur, (list, tuple, set, frozenset)):
            stack.extend(cur)
        elif isinstance(cur, np.ndarray):
            if cur.base is not None:
                stack.append(cur.base)
        elif hasattr(cur, "__dict__"):
            stack.extend(vars(cur).values())


@prop("oblivious_secrecy")
def oblivious_secrecy():
    policies = [BankerTINF(4, 200, np.random.default_rng(1)),
                BankerSFTINF(4, 200, np.random.default_rng(2)),
                BankerSFLBINF(4, 200, np.random.default_rng(3))]
    leaks = 0
    for policy in policies:
        model, delays, env = _arm_env(420, T=200)
        for t in range(1, 201):
            policy.ingest(env.release(t))
            _, arm = policy.decide(t)
            env.play(t, arm)
        matrix = model.rows().base
        for obj in _reachable(policy):
            if isinstance(obj, (LossModel, DelaySchedule, Environment)):
                leaks += 1
            elif isinstance(obj, np.ndarray) and obj.size and np.shares_memory(obj, matrix):
                leaks += 1
    return 0.0 - leaks


@prop("summation_lemma")
def summation_lemma():
    rng = np.random.default_rng(430)
    worst = math.inf
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        xs = rng.exponential(rng.uniform(0.01, 100.0), n) * (rng.random(n) < 0.7)
        worst = min(worst, summation_lemma_gap(xs) + 1e-9)
    return worst


# ---------------------------------------------------------------------------


def run_properties(filter_text: str | None = None) -> list[PropertyResult]:
    results = []
    for name, fn in PROPERTIES.items():
        if filter_text and filter_text not in name:
            continue
        start = time.perf_counter()
        try:
            slack = float(fn())
            results.append(PropertyResult(name, slack >= 0, slack, time.perf_counter() - start))
        except Exception as exc:  # a crash is a failure, not an abort
            results.append(PropertyResult(name, False, -math.inf, time.perf_counter() - start,
                                          f"{type(exc).__name__}: {exc}"))
    return results


def verify(filter_text: str | None = None, out=print) -> int:
    """Run the suite, print one line per property and return the exit code."""
    results = run_properties(filter_text)
    if not results:
        out(f"no property matches {filter_text!r}")
        return 2
    for r in results:
        line = f"{'PASS' if r.passed else 'FAIL'}  {r.name:<28} worst_slack={r.worst_slack:.3e}  ({r.seconds:.2f}s)"
        if r.error:
            line += f"  {r.error}"
        out(line)
    failed = sum(not r.passed for r in results)
    out(f"{len(results) - failed}/{len(results)} properties passed")
    return 1 if failed else 0
