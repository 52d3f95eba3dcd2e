import numpy as np
import pytest

from deepteams.errors import InvalidInputError, UnsupportedDiscountError
from deepteams.finite_core import DeepState, LocalLaw
from deepteams.finite_planning import value_iteration_dss
from deepteams.models import flow2
from deepteams.qlearning import (
    DeterministicLawSpace, LearningSchedule, QTable, greedy_indices, greedy_strategy, q_star_oracle,
    q_update, run_q_learning,
)


def test_law_space_enumerates_all_maps():
    space = DeterministicLawSpace(flow2(2))
    assert len(space) == 4
    for i in range(4):
        assert space.index(space[i]) == i
    assert space[2].mapping == (1, 0)


def test_q_update_hand_computed():
    t = QTable.zeros(3, 2, beta=0.5)
    t.q[1] = [4.0, 2.0]
    t1 = q_update(t, 0, 1, observed_cost=1.0, next_rank=1)
    assert t1.q[0, 1] == pytest.approx(1.0 + 0.5 * 2.0)  # first visit: rate 1
    assert t.q[0, 1] == 0.0 and t1.visits[0, 1] == 1      # input untouched
    t2 = q_update(t1, 0, 1, observed_cost=3.0, next_rank=2)
    assert t2.q[0, 1] == pytest.approx(0.5 * 2.0 + 0.5 * 3.0)  # second visit: rate 1/2


def test_learning_schedules():
    assert LearningSchedule().rate(0) == 1.0 and LearningSchedule().rate(3) == 0.25
    assert LearningSchedule("polynomial", power=0.75).rate(15) == pytest.approx(16 ** -0.75)
    assert LearningSchedule("constant", value=0.2).rate(100) == pytest.approx(0.2)
    for bad in (dict(rule="bogus"), dict(rule="polynomial", power=0.5), dict(rule="constant", value=2.0)):
        with pytest.raises(InvalidInputError):
            LearningSchedule(**bad)


def test_q_star_for_two_agents():
    q = q_star_oracle(flow2(2)).q
    # deep state (2, 0): staying costs 1 + 0.9 * 1, moving costs 1 then nothing
    assert np.allclose(q[DeepState((2, 0)).rank], [1.9, 1.9, 1.0, 1.0], atol=1e-10)
    assert np.allclose(q[DeepState((0, 2)).rank], 0.0, atol=1e-12)


def test_greedy_on_q_star_recovers_planner_policy():
    m = flow2(3)
    q = q_star_oracle(m)
    planner = value_iteration_dss(m, tol=1e-12)
    assert np.array_equal(greedy_indices(q.q), planner.law_indices)
    strategy = greedy_strategy(q, DeterministicLawSpace(m))
    assert strategy.law(1, DeepState((3, 0))) == LocalLaw.deterministic([1, 0], 2)


def test_run_is_reproducible_and_traced():
    m = flow2(2)
    ref = q_star_oracle(m)
    a, tr = run_q_learning(m, episodes=300, horizon=4, seed=5, reference=ref, trace_every=400,
                           greedy_eval_trials=3, greedy_eval_horizon=5)
    b, _ = run_q_learning(m, episodes=300, horizon=4, seed=5)
    assert np.array_equal(a.q, b.q) and np.array_equal(a.visits, b.visits)
    assert tr.iterations == [400, 800, 1200]
    assert len(tr.sup_error) == len(tr.greedy_cost) == 3
    assert a.visits.sum() == 1200


def test_error_shrinks_with_budget():
    m = flow2(2)
    ref = q_star_oracle(m)
    _, tr = run_q_learning(m, episodes=5000, horizon=4, seed=1, reference=ref, trace_every=2000)
    assert tr.sup_error[-1] < tr.sup_error[0]


def test_epsilon_greedy_behaviour_runs():
    t, _ = run_q_learning(flow2(2), episodes=200, horizon=3, seed=0, behavior="epsilon-greedy", epsilon=0.3)
    assert t.visits.sum() == 600


def test_invalid_configurations():
    with pytest.raises(UnsupportedDiscountError):
        run_q_learning(flow2(2, beta=1.0), episodes=1, horizon=1)
    with pytest.raises(InvalidInputError):
        run_q_learning(flow2(2), episodes=1, horizon=1, behavior="softmax")
