"""Tabular Q-learning over (deep state, deterministic local law) pairs."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import InvalidInputError, UnsupportedDiscountError
from .finite_core import DeepState, FiniteTeamModel, LocalLaw, composition_rank
from .finite_planning import (
    DssStrategy,
    argmin_first,
    deterministic_laws,
    evaluate_strategy_cost,
    initial_agent_states,
    simulate_step,
    transition_tensor,
    value_iteration_dss,
)

log = logging.getLogger(__name__)


class DeterministicLawSpace:
    """Ordered enumeration of all maps X -> U."""

    def __init__(self, model: FiniteTeamModel):
        self.laws: List[LocalLaw] = deterministic_laws(model)
        self._index = {law.mapping: i for i, law in enumerate(self.laws)}

    def __len__(self):
        return len(self.laws)

    def __getitem__(self, i) -> LocalLaw:
        return self.laws[i]

    def index(self, law: LocalLaw) -> int:
        return self._index[law.mapping]


@dataclass
class QTable:
    q: np.ndarray        # (num deep states, num laws)
    visits: np.ndarray   # same shape, int
    beta: float

    @classmethod
    def zeros(cls, num_deep_states: int, num_laws: int, beta: float) -> "QTable":
        return cls(np.zeros((num_deep_states, num_laws)), np.zeros((num_deep_states, num_laws), dtype=np.int64), beta)

    def copy(self) -> "QTable":
        return QTable(self.q.copy(), self.visits.copy(), self.beta)


@dataclass(frozen=True)
class LearningSchedule:
    """Learning rate as a function of the pre-update visit count ``v``.

    ``harmonic``:   eta = 1 / (v + 1)
    ``polynomial``: eta = 1 / (v + 1) ** power, power in (1/2, 1]
    ``constant``:   eta = value (testing only; not square-summable)
    """

    rule: str = "harmonic"
    power: float = 1.0
    value: float = 1.0

    def __post_init__(self):
        if self.rule not in ("harmonic", "polynomial", "constant"):
            raise InvalidInputError(f"unknown learning-rate rule {self.rule!r}")
        if self.rule == "polynomial" and not 0.5 < self.power <= 1.0:
            raise InvalidInputError("polynomial power must lie in (0.5, 1]")
        if self.rule == "constant" and not 0.0 <= self.value <= 1.0:
            raise InvalidInputError("constant rate must lie in [0, 1]")

    def rate(self, visits):
        v = np.asarray(visits, dtype=float)
        if self.rule == "harmonic":
            return 1.0 / (v + 1.0)
        if self.rule == "polynomial":
            return 1.0 / (v + 1.0) ** self.power
        return np.full_like(v, self.value)


def q_update(table: QTable, d_rank: int, law_index: int, observed_cost: float, next_rank: int,
             schedule: LearningSchedule = LearningSchedule()) -> QTable:
    """Return a new table with one Q-learning update applied."""
    out = table.copy()
    _apply(out, d_rank, law_index, observed_cost, next_rank, schedule)
    return out


def _apply(table: QTable, s: int, a: int, cost: float, s_next: int, schedule: LearningSchedule):
    eta = float(schedule.rate(table.visits[s, a]))
    target = cost + table.beta * table.q[s_next].min()
    table.q[s, a] = (1.0 - eta) * table.q[s, a] + eta * target
    table.visits[s, a] += 1


def greedy_strategy(table: QTable, law_space: DeterministicLawSpace) -> DssStrategy:
    """Arg-min law per deep state, ties to the lowest law index."""
    return DssStrategy([law_space[argmin_first(row)] for row in table.q])


def greedy_indices(q: np.ndarray) -> np.ndarray:
    return np.array([argmin_first(row) for row in q], dtype=int)


def q_star_oracle(model: FiniteTeamModel, tol: float = 1e-12, kernel_method: str = "auto") -> QTable:
    """Optimal Q over deterministic laws from the exact planner's value function."""
    laws = deterministic_laws(model)
    table = value_iteration_dss(model, laws, tol=tol, kernel_method=kernel_method)
    C, P = transition_tensor(model, laws, method=kernel_method)
    q = (C + model.beta * (P @ table.values)).T
    return QTable(q, np.zeros(q.shape, dtype=np.int64), model.beta)


@dataclass
class QLearningTrace:
    iterations: List[int] = field(default_factory=list)
    sup_error: List[float] = field(default_factory=list)
    greedy_cost: List[float] = field(default_factory=list)


def run_q_learning(
    model: FiniteTeamModel,
    episodes: int,
    horizon: int,
    schedule: LearningSchedule = LearningSchedule(),
    seed=0,
    behavior: str = "uniform",
    epsilon: float = 0.1,
    reference: Optional[QTable] = None,
    trace_every: int = 0,
    greedy_eval_trials: int = 0,
    greedy_eval_horizon: int = 50,
):
    """Learn Q from sampled team transitions.

    The team restarts from the initial law every ``horizon`` steps.  The
    behaviour policy picks a law uniformly from the deterministic law space
    (``behavior="uniform"``) or epsilon-greedily with respect to the current
    table.  Returns ``(table, trace)``.
    """
    if model.beta >= 1.0:
        raise UnsupportedDiscountError("Q-learning requires beta < 1")
    if behavior not in ("uniform", "epsilon-greedy"):
        raise InvalidInputError(f"unknown behaviour policy {behavior!r}")
    space = DeterministicLawSpace(model)
    table = QTable.zeros(model.num_deep_states(), len(space), model.beta)
    trace = QLearningTrace()
    ss = np.random.SeedSequence(seed)
    learn_ss, eval_ss = ss.spawn(2)
    rng = np.random.default_rng(learn_ss)
    nx = model.num_states
    k = 0
    for _ in range(episodes):
        states = initial_agent_states(model, rng)
        s = composition_rank(np.bincount(states, minlength=nx))
        for _ in range(horizon):
            if behavior == "uniform" or rng.random() < epsilon:
                a = int(rng.integers(len(space)))
            else:
                a = argmin_first(table.q[s])
            _, cost, states = simulate_step(model, states, space[a], rng)
            s_next = composition_rank(np.bincount(states, minlength=nx))
            _apply(table, s, a, cost, s_next, schedule)
            s = s_next
            k += 1
            if trace_every and k % trace_every == 0:
                _record(trace, k, table, reference, model, space, eval_ss, greedy_eval_trials, greedy_eval_horizon)
    if trace_every and (not trace.iterations or trace.iterations[-1] != k):
        _record(trace, k, table, reference, model, space, eval_ss, greedy_eval_trials, greedy_eval_horizon)
    return table, trace


def _record(trace, k, table, reference, model, space, eval_ss, trials, horizon):
    trace.iterations.append(k)
    err = float(np.max(np.abs(table.q - reference.q))) if reference is not None else float("nan")
    trace.sup_error.append(err)
    if trials:
        # Same evaluation seed at every checkpoint so costs are comparable.
        mean, _ = evaluate_strategy_cost(model, greedy_strategy(table, space), horizon=horizon,
                                         trials=trials, seed=eval_ss.entropy)
        trace.greedy_cost.append(mean)
    else:
        trace.greedy_cost.append(float("nan"))
