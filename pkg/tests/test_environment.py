import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from banker_omd.environment import (
    DelaySchedule,
    Environment,
    LossModel,
    best_fixed_comparator,
    comparator_losses,
    delays_from_csv,
    env_play,
    env_release,
    pseudo_regret,
    read_round_csv,
    regret_trajectory,
    summation_lemma_gap,
)
from banker_omd.errors import ConfigError, OrderError


def test_release_timing_uniform_delay():
    env = Environment(LossModel.from_matrix(np.zeros((5, 2))), DelaySchedule.uniform(2))
    env_play(env, 1, 0)
    assert env_release(env, 3) == []
    (ev,) = env_release(env, 4)
    assert ev.round == 1 and ev.observed_loss == 0.0


def test_zero_delay_releases_next_round():
    env = Environment(LossModel.from_matrix([[0.3, 0.7]]), DelaySchedule.zero())
    env.play(1, 1)
    assert [(e.round, e.observed_loss) for e in env.release(2)] == [(1, 0.7)]


def test_nothing_pending():
    env = Environment(LossModel.from_matrix(np.zeros((3, 2))), DelaySchedule.zero())
    assert env.release(1) == []


def test_same_round_release_sorted_by_source():
    env = Environment(LossModel.from_matrix(np.zeros((3, 2))), DelaySchedule.per_round([2, 0, 0]))
    env.play(1, 0)
    env.play(2, 0)
    env.play(3, 0)
    assert [e.round for e in env.release(4)] == [1, 2, 3]


def test_play_order_enforced():
    env = Environment(LossModel.from_matrix(np.zeros((3, 2))), DelaySchedule.zero())
    with pytest.raises(OrderError):
        env.play(2, 0)
    env.play(1, 0)
    with pytest.raises(OrderError):
        env.play(1, 0)


def test_horizon_cannot_exceed_sequence():
    with pytest.raises(ConfigError):
        Environment(LossModel.from_matrix(np.zeros((3, 2))), DelaySchedule.zero(), horizon=4)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_arm_dependent_release_and_accounting(T, K, seed):
    g = np.random.default_rng(seed)
    delays = DelaySchedule.arm_dependent(g.integers(0, 10, (T, K)))
    env = Environment(LossModel.from_matrix(g.random((T, K))), delays)
    arms = g.integers(0, K, T)
    seen = {}
    for t in range(1, T + 1):
        for ev in env.release(t):
            seen[ev.round] = t
        env.play(t, int(arms[t - 1]))
    for ev in env.drain():
        seen[ev.round] = env.release_rounds[ev.round - 1]
    for s in range(1, T + 1):
        d = delays.delay(s, int(arms[s - 1]))
        assert seen[s] - s - 1 == d or seen[s] > T  # released in-horizon exactly on time
        assert env.release_rounds[s - 1] - s - 1 == d
    assert env.total_delay == sum(delays.delay(s, int(arms[s - 1])) for s in range(1, T + 1))
    assert env.pending == 0


def test_geometric_delays_reproducible():
    a = DelaySchedule.geometric(0.3, 5, 200)
    b = DelaySchedule.geometric(0.3, 5, 200)
    assert [a.delay(t) for t in range(1, 201)] == [b.delay(t) for t in range(1, 201)]
    assert min(a.delay(t) for t in range(1, 201)) == 0


def test_bad_delays():
    with pytest.raises(ConfigError):
        DelaySchedule.uniform(-1)
    with pytest.raises(ConfigError):
        DelaySchedule.per_round([1, -2])
    with pytest.raises(ConfigError):
        DelaySchedule.geometric(0.0, 1, 10)
    with pytest.raises(ConfigError):
        DelaySchedule("poisson")


def test_zero_detection():
    assert DelaySchedule.zero().is_zero
    assert DelaySchedule.uniform(0).is_zero
    assert DelaySchedule.per_round([0, 0]).is_zero
    assert not DelaySchedule.arm_dependent([[0, 1]]).is_zero


# -- loss models -------------------------------------------------------------


def test_mab_losses_must_be_in_unit_interval():
    with pytest.raises(ConfigError):
        LossModel.from_matrix([[1.5, 0.0]])


def test_scale_free_base_range():
    with pytest.raises(ConfigError):
        LossModel.scale_free([[2.0]], 3.0)
    m = LossModel.scale_free([[0.5, -1.0]], 4.0)
    assert m.loss(1, 1) == -4.0


def test_linear_loss_set_enforced():
    with pytest.raises(ConfigError):
        LossModel.linear([[0.6, 0.6]], "hypercube")
    LossModel.linear([[0.6, 0.6]], "ball")
    with pytest.raises(ConfigError):
        LossModel.linear([[0.1]], "simplex")


@pytest.mark.parametrize("action_set", ["hypercube", "ball"])
def test_random_linear_in_loss_set(action_set):
    m = LossModel.random_linear(500, 4, 0, action_set, noise=3.0)
    rows = m.rows()
    norms = np.abs(rows).sum(1) if action_set == "hypercube" else np.linalg.norm(rows, axis=1)
    assert norms.max() <= 1 + 1e-12


def test_rows_are_read_only():
    m = LossModel.from_matrix(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        m.rows()[0, 0] = 1.0


def test_scaled_model():
    m = LossModel.bernoulli([0.5, 0.5], 20, 0)
    np.testing.assert_array_equal(m.scaled(10).rows(), 10 * m.rows())


def test_linear_loss_is_inner_product():
    m = LossModel.linear([[0.25, -0.5]], "hypercube")
    assert m.loss(1, [1.0, 1.0]) == -0.25


# -- comparators ----------------------------------------------------------


def test_comparator_best_column():
    # column sums (10, 7): the second arm, index 1 with 0-based arms
    m = LossModel.from_matrix(np.column_stack([np.ones(10), np.r_[np.ones(7), np.zeros(3)]]))
    arm, total = best_fixed_comparator(m)
    assert arm == 1 and total == 7.0


def test_comparator_ties_to_smallest_index():
    arm, total = best_fixed_comparator(LossModel.from_matrix(np.zeros((4, 3))))
    assert arm == 0 and total == 0.0


def test_hypercube_comparator_is_vertex():
    m = LossModel.linear([[0.3, -0.1], [0.1, -0.1], [0.0, 0.0]], "hypercube")
    y, total = best_fixed_comparator(m)
    assert y.tolist() == [-1.0, 1.0]
    assert total == pytest.approx(-0.6)
    y0, _ = best_fixed_comparator(LossModel.linear([[0.0, 0.0]], "hypercube"))
    assert y0.tolist() == [1.0, 1.0]


def test_ball_comparator():
    m = LossModel.linear([[0.3, 0.4]], "ball")
    y, total = best_fixed_comparator(m)
    np.testing.assert_allclose(y, [-0.6, -0.8])
    assert total == pytest.approx(-0.5)


def test_pseudo_regret_zero_for_best_arm():
    m = LossModel.bernoulli([0.2, 0.6], 100, 1)
    arm, _ = best_fixed_comparator(m)

    class Rec:
        losses = m.rows()[:, arm]

    mean, se = pseudo_regret([Rec(), Rec()], m)
    assert np.all(mean == 0) and se == 0.0


def test_regret_trajectory():
    np.testing.assert_array_equal(regret_trajectory([1, 0, 1], [0, 0, 1]), [1, 1, 1])
    np.testing.assert_array_equal(comparator_losses(LossModel.from_matrix([[0.2, 0.1]])), [0.1])


# -- CSV -------------------------------------------------------------------


def test_read_round_csv(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("t,arm_1,arm_2\n1,0.5,0.25\n2,1,0\n")
    np.testing.assert_array_equal(read_round_csv(p), [[0.5, 0.25], [1, 0]])
    np.testing.assert_array_equal(LossModel.from_csv(p).rows(), [[0.5, 0.25], [1, 0]])


def test_csv_requires_round_header(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("x,arm_1\n1,0.5\n")
    with pytest.raises(ConfigError):
        read_round_csv(p)
    p.write_text("t,arm_1\n2,0.5\n")
    with pytest.raises(ConfigError):
        read_round_csv(p)


def test_delay_csvs(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("t,d\n1,3\n2,0\n")
    d = delays_from_csv(p)
    assert d.kind == "per_round" and d.delay(1) == 3
    p.write_text("t,arm_1,arm_2\n1,3,4\n")
    d = delays_from_csv(p)
    assert d.kind == "arm_dependent" and d.delay(1, 1) == 4
    p.write_text("t,d\n1,1.5\n")
    with pytest.raises(ConfigError):
        delays_from_csv(p)


# -- summation lemma -------------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0, 1e6), max_size=200))
def test_summation_lemma(xs):
    assert summation_lemma_gap(xs) >= -1e-9 * (1 + sum(xs)) ** 0.5
