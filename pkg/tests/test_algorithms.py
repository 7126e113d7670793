import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from banker_omd.algorithms import (
    POLICIES,
    BankerBOLO,
    BankerSFLBINF,
    BankerSFTINF,
    BankerTINF,
    ConstantScalePolicy,
    UniformPolicy,
    bolo_estimate,
    bolo_scale,
    importance_estimate,
    mab_decide,
    mab_ingest,
    point_hash,
    sample_arm,
    sflbinf_scale,
    sftinf_scale,
    tinf_scale,
    vanilla_omd_run,
)
from banker_omd.environment import DelaySchedule, Environment, FeedbackEvent, LossModel
from banker_omd.errors import ConfigError, StateError
from banker_omd.geometry import BallBarrier, HypercubeBarrier, TsallisHalf


def rng(seed=0):
    return np.random.default_rng(seed)


def drive(policy, model, delays, T=None):
    env = Environment(model, delays, T)
    for t in range(1, env.horizon + 1):
        policy.ingest(env.release(t))
        policy.decide(t)
        env.play(t, policy.log.actions[-1])
    return env


# -- scales ---------------------------------------------------------------


def test_tinf_scale_without_delay():
    assert tinf_scale(1, 0, 0.0) == 1.0
    assert tinf_scale(9, 0, 0.0) == pytest.approx(3.0)


def test_tinf_scale_with_delay():
    expected = 1 / (0.5 + 2 * math.sqrt(math.log(5) / 4))
    assert tinf_scale(4, 2, 4.0) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.5654, abs=1e-4)


def test_tinf_prefactor_scales_linearly():
    assert tinf_scale(4, 2, 4.0, prefactor=3.0) == pytest.approx(3 * tinf_scale(4, 2, 4.0))


def test_sftinf_scale_first_round():
    assert sftinf_scale(0, 1.0, 1.0) == pytest.approx(1 / math.sqrt(math.log(4) / 4), rel=1e-14)
    assert sftinf_scale(0, 1.0, 1.0) == pytest.approx(1.6987, abs=1e-4)


def test_sflbinf_scale_guard():
    base = 1 / (math.sqrt(math.log(4) / 4) * math.sqrt(2 * math.log(100)))
    assert base == pytest.approx(0.5596, abs=1e-3)
    assert sflbinf_scale(0, 1.0, 1.0, 1.0, 2, 100) == 2.0
    # guard false: backlog far above sqrt(experienced / K)
    got = sflbinf_scale(50, 1.0, 4.0, 1.0, 2, 100)
    assert got == pytest.approx(1 / (51 * math.sqrt(math.log(4) / 4) * math.sqrt(2 * math.log(100))))


def test_bolo_scale_clamp():
    assert bolo_scale(1, 0, 0.0, 2, 100) == 16.0
    # unclamped value is 0.65901; the rounded reference 0.6594 is off in the 4th digit
    assert 1 / math.sqrt(math.log(100) / 2) == pytest.approx(0.6594, abs=1e-3)
    # far out, the unclamped value dominates
    assert bolo_scale(10**8, 0, 0.0, 2, 10**8) == pytest.approx(1 / math.sqrt(math.log(1e8) / (2 * 1e8)))


# -- helpers --------------------------------------------------------------


def test_sample_arm_inverse_cdf():
    x = np.array([0.2, 0.5, 0.3])
    assert sample_arm(x, 0.0) == 0
    assert sample_arm(x, 0.19999) == 0
    assert sample_arm(x, 0.2) == 1
    assert sample_arm(x, 0.69) == 1
    assert sample_arm(x, 0.999999) == 2
    assert sample_arm(np.array([0.5, 0.5 - 1e-17]), 1 - 1e-18) == 1


def test_importance_estimate():
    np.testing.assert_array_equal(importance_estimate(1.0, np.array([0.5, 0.25, 0.25]), 0), [2.0, 0, 0])


def test_point_hash_is_stable():
    h = point_hash(np.array([0.25, 0.75]))
    assert h == point_hash([0.25, 0.75]) and len(h) == 16
    assert h != point_hash([0.75, 0.25])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-3, 1.0), min_size=2, max_size=10), st.data())
def test_mab_estimator_unbiased(weights, data):
    x = np.asarray(weights) / sum(weights)
    loss = np.asarray(data.draw(st.lists(st.floats(-5, 5), min_size=x.size, max_size=x.size)))
    mean = sum(x[a] * importance_estimate(loss[a], x, a) for a in range(x.size))
    np.testing.assert_allclose(mean, loss, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.sampled_from([HypercubeBarrier, BallBarrier]), st.integers(0, 2**32 - 1))
def test_bolo_estimator_unbiased(n, cls, seed):
    g = rng(seed)
    reg = cls(n)
    x = g.uniform(-0.5, 0.5, n) / math.sqrt(n)
    ell = g.uniform(-1, 1, n) / n
    vals, vecs = reg.eigensystem(x)
    mean = np.zeros(n)
    for i in range(n):
        for sign in (-1.0, 1.0):
            action = x + sign * vals[i] ** -0.5 * vecs[:, i]
            mean += bolo_estimate(float(ell @ action), sign, vals[i], vecs[:, i], n)
    np.testing.assert_allclose(mean / (2 * n), ell, atol=1e-12)


def test_bolo_estimate_zero_loss():
    assert not np.any(bolo_estimate(0.0, 1.0, 2.0, np.array([1.0, 0.0]), 2))


# -- policies ---------------------------------------------------------------


@pytest.mark.parametrize("kind", ["tinf", "sftinf", "sflbinf", "constant"])
def test_first_action_is_uniform(kind):
    policy = POLICIES[kind](4, 10, rng())
    x, arm = mab_decide(policy, 1)
    np.testing.assert_array_equal(x, np.full(4, 0.25))
    assert policy.log.investments[0] == policy.log.sigmas[0]
    assert 0 <= arm < 4


def test_decide_out_of_order():
    policy = BankerTINF(2, 10, rng())
    policy.decide(1)
    with pytest.raises(StateError):
        policy.decide(3)


def test_feedback_for_unknown_round():
    policy = BankerTINF(2, 10, rng())
    with pytest.raises(StateError):
        mab_ingest(policy, [FeedbackEvent(1, 0.5)])


def test_tinf_settles_importance_estimate():
    policy = ConstantScalePolicy(2, 10, rng(), sigma=2.0, keep_history=True)
    _, arm = policy.decide(1)
    policy.ingest([FeedbackEvent(1, 1.0)])
    expected = np.zeros(2)
    expected[arm] = 2.0
    np.testing.assert_array_equal(policy.history[1].ltilde, expected)


def test_sftinf_skips_and_doubles():
    policy = BankerSFTINF(3, 10, rng())
    policy.decide(1)
    policy.ingest([FeedbackEvent(1, 3.7)])
    assert policy.skip_count == 1 and policy.log.skipped == [True]
    assert policy.range_est == pytest.approx(7.4)
    assert policy.ledger.entries[1].v_remaining == policy.log.sigmas[0]


def test_sflbinf_skips_large_negative_loss():
    policy = BankerSFLBINF(2, 10**6, rng())
    for t in (1, 2, 3):
        policy.decide(t)
    sigma3 = policy.log.sigmas[2]
    assert sigma3 < 1.0  # guard off, so the loss below stays within the range estimate
    policy.ingest([FeedbackEvent(3, -0.6 * sigma3)])
    assert policy.log.skipped[2] and policy.skip_count == 1
    assert policy.range_est == 1.0


def test_sflbinf_accepts_moderate_negative_loss():
    policy = BankerSFLBINF(2, 100, rng())
    policy.decide(1)
    policy.ingest([FeedbackEvent(1, -0.4)])
    assert policy.skip_count == 0 and policy.safety_violations == 0


def test_short_horizons_rejected():
    with pytest.raises(ConfigError):
        BankerSFLBINF(2, 1, rng())
    with pytest.raises(ConfigError):
        BankerBOLO(2, 1, rng())


def test_bolo_rejects_simplex_regularizer():
    with pytest.raises(ConfigError):
        BankerBOLO(2, 10, rng(), reg=TsallisHalf(2))


def test_bolo_first_action_on_dikin_axis():
    policy = BankerBOLO(1, 10, rng())
    x, action = policy.decide(1)
    assert x.tolist() == [0.0]
    assert abs(action[0]) == pytest.approx(1 / math.sqrt(2), rel=1e-15)


def test_bookkeeping_matches_environment():
    g = rng(3)
    model = LossModel.from_matrix(g.random((300, 4)))
    delays = DelaySchedule.per_round(g.integers(0, 15, 300))
    policy = BankerTINF(4, 300, rng(4))
    env = drive(policy, model, delays)
    release = np.asarray(env.release_rounds)
    for t in range(1, 301):
        assert policy.log.backlogs[t - 1] == int(np.sum(release[: t - 1] > t))
    assert policy.experienced_delay == sum(policy.log.backlogs)
    assert np.all(np.diff(policy.log.total_investment) >= 0)


def test_proportional_strategy_runs():
    g = rng(5)
    model = LossModel.from_matrix(g.random((200, 3)))
    policy = BankerTINF(3, 200, rng(6), strategy="proportional", check_invariants=True)
    drive(policy, model, DelaySchedule.uniform(4))
    assert len(policy.log.sigmas) == 200


def test_sftinf_immediate_cost_and_skip_budget():
    g = rng(7)
    L = 100.0
    model = LossModel.scale_free(g.random((2000, 4)), L)
    policy = BankerSFTINF(4, 2000, rng(8), check_invariants=True)
    drive(policy, model, DelaySchedule.uniform(8))
    assert policy.worst_slack >= 0
    assert policy.skip_count <= (math.ceil(math.log2(4 * L)) + 1) * (max(policy.log.backlogs) + 1)
    assert policy.skip_count >= 1


def test_sflbinf_safety_on_signed_losses():
    g = rng(9)
    model = LossModel.scale_free(g.uniform(-1, 1, (2000, 4)), 30.0)
    policy = BankerSFLBINF(4, 2000, rng(10), check_invariants=True)
    drive(policy, model, DelaySchedule.uniform(6))
    assert policy.safety_violations == 0 and policy.worst_slack >= 0


@pytest.mark.parametrize("cls,action_set", [(HypercubeBarrier, "hypercube"), (BallBarrier, "ball")])
def test_bolo_actions_feasible_and_clamped(cls, action_set):
    n, T = 3, 400
    model = LossModel.random_linear(T, n, 11, action_set)
    policy = BankerBOLO(n, T, rng(12), reg=cls(n))
    drive(policy, model, DelaySchedule.uniform(5))
    actions = np.asarray(policy.log.actions)
    if action_set == "hypercube":
        assert np.all(np.abs(actions) <= 1)
    else:
        assert np.all(np.linalg.norm(actions, axis=1) <= 1 + 1e-12)
    assert min(policy.log.sigmas) >= 8 * n


def test_uniform_baselines():
    for action_set in (None, "hypercube", "ball"):
        p = UniformPolicy(3, 50, rng(13), action_set=action_set)
        for t in range(1, 51):
            _, a = p.decide(t)
            if action_set == "ball":
                assert np.linalg.norm(a) <= 1
        p.ingest([])


def test_same_seed_same_actions():
    model = LossModel.from_matrix(rng(14).random((150, 5)))
    a = BankerTINF(5, 150, rng(15))
    b = BankerTINF(5, 150, rng(15))
    drive(a, model, DelaySchedule.uniform(3))
    drive(b, model, DelaySchedule.uniform(3))
    assert a.log.actions == b.log.actions and a.log.x_hashes == b.log.x_hashes


# -- vanilla reference ----------------------------------------------------


def test_banker_with_constant_scale_equals_vanilla():
    model = LossModel.bernoulli([0.2, 0.5, 0.7], 300, 16)
    reg = TsallisHalf(3)
    policy = ConstantScalePolicy(3, 300, rng(17), sigma=20.0, dump_points=True)
    drive(policy, model, DelaySchedule.zero())
    ref = vanilla_omd_run(reg, reg.default_point(), 20.0, Environment(model, DelaySchedule.zero()), rng(17))
    np.testing.assert_allclose(np.asarray(policy.log.points), np.asarray(ref.points), atol=1e-12)
    assert policy.log.actions == ref.actions


def test_vanilla_refuses_delays():
    model = LossModel.bernoulli([0.2, 0.5], 10, 0)
    with pytest.raises(ConfigError):
        vanilla_omd_run(TsallisHalf(2), [0.5, 0.5], 1.0, Environment(model, DelaySchedule.uniform(1)), rng())


def straight_line_tinf(losses, seed):
    """Independent Banker-TINF for zero delay: each round spends the previous
    round's saving first and tops up the rest at the uniform point."""
    T, K = losses.shape
    g = np.random.default_rng(seed)
    reg = TsallisHalf(K)
    x0 = np.full(K, 1 / K)
    z_prev, sigma_prev, total = None, 0.0, 0.0
    for t in range(1, T + 1):
        sigma = math.sqrt(t)
        if z_prev is None:
            x = x0
        else:
            spend = min(sigma_prev, sigma)
            theta = (spend * reg.grad(z_prev) + (sigma - spend) * reg.grad(x0)) / sigma
            x = z_prev if spend == sigma else _simplex(theta)
        arm = int(np.searchsorted(np.cumsum(x), g.random(), side="right"))
        arm = min(arm, K - 1)
        loss = losses[t - 1, arm]
        total += loss
        lt = np.zeros(K)
        lt[arm] = loss / x[arm]
        theta = reg.grad(x) - lt / sigma
        z_prev = x if loss == 0 else _simplex(theta)
        sigma_prev = sigma
    return total - losses.sum(axis=0).min()


def _simplex(theta):
    s = theta - theta.max()
    lam = brentq(lambda l: np.sum((l - s) ** -2) - 1, 1.0, math.sqrt(s.size), xtol=1e-15)
    return (lam - s) ** -2


def test_tinf_matches_straight_line_oracle():
    losses = LossModel.bernoulli([0.3, 0.6], 100, 18).rows()
    policy = BankerTINF(2, 100, rng(19))
    env = drive(policy, LossModel.from_matrix(losses), DelaySchedule.zero())
    regret = sum(env.losses) - losses.sum(axis=0).min()
    assert regret == pytest.approx(straight_line_tinf(np.asarray(losses), 19), abs=1e-9)
