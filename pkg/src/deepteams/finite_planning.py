"""Dynamic programming over deep states (exact) and over quantized mean fields."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConvergenceError, InvalidInputError, UnsupportedDiscountError
from .finite_core import (
    DEFAULT_ENUMERATION_BOUND,
    DeepState,
    FiniteTeamModel,
    LocalLaw,
    composition_rank,
    compositions,
    expected_cost,
    joint_deep_kernel_exact,
)

log = logging.getLogger(__name__)

TIE_ATOL = 1e-12


def argmin_first(values: np.ndarray, atol: float = TIE_ATOL) -> int:
    """Index of the minimum; near-ties resolved toward the lowest index."""
    values = np.asarray(values)
    best = values.min()
    return int(np.flatnonzero(values <= best + atol * max(1.0, abs(best)))[0])


def deterministic_laws(model: FiniteTeamModel) -> List[LocalLaw]:
    """All maps X -> U; the first state is the most significant digit."""
    return [
        LocalLaw.deterministic(mapping, model.num_actions)
        for mapping in itertools.product(range(model.num_actions), repeat=model.num_states)
    ]


def law_grid(model: FiniteTeamModel, mixed_step: Optional[int] = None) -> List[LocalLaw]:
    """Deterministic laws, or every law whose rows lie on the 1/mixed_step grid."""
    if mixed_step is None:
        return deterministic_laws(model)
    if mixed_step < 1:
        raise InvalidInputError("mixed_step must be a positive integer")
    rows = [np.asarray(c, dtype=float) / mixed_step for c in compositions(mixed_step, model.num_actions)]
    rows.sort(key=lambda r: (not np.any(r == 1.0), tuple(-r)))
    laws = [LocalLaw(np.vstack(combo)) for combo in itertools.product(rows, repeat=model.num_states)]
    # Deterministic laws first (in their usual order) so ties favour them.
    return sorted(laws, key=lambda law: not law.is_deterministic)


def _value_iteration(costs, step, beta, tol, max_iter, what):
    """Shared loop; ``step(V)`` returns the (num_laws, num_points) lookahead term."""
    threshold = tol * (1.0 - beta) / beta
    V = np.zeros(costs.shape[1])
    gaps = []
    for it in range(1, max_iter + 1):
        Q = costs + beta * step(V)
        V_new = Q.min(axis=0)
        gap = float(np.max(np.abs(V_new - V)))
        gaps.append(gap)
        V = V_new
        if gap <= threshold:
            return V, gaps
    raise ConvergenceError(f"{what} did not converge in {max_iter} sweeps (last gap {gaps[-1]:.3e})", gaps[-1])


# ---------------------------------------------------------------------------
# exact planner over Emp_n(X)
# ---------------------------------------------------------------------------

@dataclass
class ValueTable:
    """Optimal values and arg-min laws indexed by deep-state rank."""

    n: int
    num_states: int
    values: np.ndarray
    law_indices: np.ndarray
    laws: List[LocalLaw]
    beta: float
    gaps: List[float] = field(default_factory=list)

    @property
    def policy(self) -> List[LocalLaw]:
        return [self.laws[i] for i in self.law_indices]

    def deep_state(self, rank: int) -> DeepState:
        return DeepState.from_rank(rank, self.n, self.num_states)

    def value(self, d: DeepState) -> float:
        return float(self.values[d.rank])


def transition_tensor(
    model: FiniteTeamModel,
    laws: Sequence[LocalLaw],
    bound: int = DEFAULT_ENUMERATION_BOUND,
    method: str = "auto",
) -> Tuple[np.ndarray, np.ndarray]:
    """Expected costs ``C[l, s]`` and next-state matrices ``P[l, s, s']``."""
    states = model.deep_states()
    N = len(states)
    C = np.zeros((len(laws), N))
    P = np.zeros((len(laws), N, N))
    for li, law in enumerate(laws):
        for s, d in enumerate(states):
            C[li, s] = expected_cost(model, d, law, bound=bound)
            for counts, p in joint_deep_kernel_exact(model, d, law, bound=bound, method=method).items():
                P[li, s, composition_rank(counts)] += p
    return C, P


def value_iteration_dss(
    model: FiniteTeamModel,
    laws: Optional[Sequence[LocalLaw]] = None,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    bound: int = DEFAULT_ENUMERATION_BOUND,
    kernel_method: str = "auto",
) -> ValueTable:
    """Solve the Bellman equation over empirical distributions by value iteration.

    Stops once the sup-norm gap between sweeps is at most ``tol*(1-beta)/beta``,
    which bounds the distance to the fixed point by ``tol``.
    """
    if model.beta >= 1.0:
        raise UnsupportedDiscountError("exact planning requires beta < 1")
    laws = list(laws) if laws is not None else deterministic_laws(model)
    if not laws:
        raise InvalidInputError("law grid is empty")
    for law in laws:
        model.check_law(law)
    C, P = transition_tensor(model, laws, bound=bound, method=kernel_method)
    V, gaps = _value_iteration(C, lambda V: P @ V, model.beta, tol, max_iter, "DSS value iteration")
    Q = C + model.beta * (P @ V)
    idx = np.array([argmin_first(Q[:, s]) for s in range(Q.shape[1])], dtype=int)
    log.debug("DSS value iteration: %d sweeps, final gap %.3e", len(gaps), gaps[-1])
    return ValueTable(model.n, model.num_states, V, idx, laws, model.beta, gaps)


class DssStrategy:
    """Deep-state feedback: every agent in state x draws from psi(d)(x)."""

    name = "dss"

    def __init__(self, policy: Sequence[LocalLaw]):
        self.policy = tuple(policy)

    def law(self, t: int, d: DeepState) -> LocalLaw:
        return self.policy[d.rank]


class LawSequence:
    """Open-loop sequence of local laws; the last law repeats past the end."""

    def __init__(self, laws: Sequence[LocalLaw], name: str = "fixed"):
        if not laws:
            raise InvalidInputError("law sequence is empty")
        self.laws = tuple(laws)
        self.name = name

    def law(self, t: int, d: DeepState) -> LocalLaw:
        return self.laws[min(t, len(self.laws)) - 1]


def extract_dss_strategy(table: ValueTable) -> DssStrategy:
    return DssStrategy(table.policy)


# ---------------------------------------------------------------------------
# mean-field planner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeanField:
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if np.any(probs < -1e-15) or abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidInputError("mean field must be a probability vector")
        probs = np.clip(probs, 0.0, None)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)


def _mean_joint(m: np.ndarray, law: LocalLaw) -> np.ndarray:
    return m[:, None] * law.probs


def mean_field_step(model: FiniteTeamModel, m: MeanField, law: LocalLaw) -> MeanField:
    """Deterministic infinite-population update of the state distribution."""
    model.check_law(law)
    M = _mean_joint(m.probs, law)
    out = np.zeros(model.num_states)
    for x in range(model.num_states):
        for u in range(model.num_actions):
            if M[x, u]:
                out += M[x, u] * np.asarray(model.kernel(x, u, M), dtype=float)
    # Renormalise away rounding drift so long iterations stay on the simplex.
    return MeanField(out / out.sum())


def mean_field_cost(model: FiniteTeamModel, m: MeanField, law: LocalLaw) -> float:
    model.check_law(law)
    M = _mean_joint(m.probs, law)
    return float(sum(
        float(model.cost(x, u, M)) * M[x, u]
        for x in range(model.num_states)
        for u in range(model.num_actions)
        if M[x, u]
    ))


def quantized_grid(q: int, num_states: int) -> np.ndarray:
    """Points of the simplex with coordinates in {0, 1/q, ..., 1}, in rank order."""
    if q < 1:
        raise InvalidInputError("quantization must be a positive integer")
    return np.asarray(compositions(q, num_states), dtype=float) / q


def project_to_grid(m: np.ndarray, grid: np.ndarray, atol: float = 1e-12) -> int:
    """Nearest grid point (Euclidean); ties go to the lexicographically smallest point."""
    dist = np.sqrt(((grid - np.asarray(m)[None, :]) ** 2).sum(axis=1))
    cands = np.flatnonzero(dist <= dist.min() + atol)
    return int(min(cands, key=lambda i: tuple(grid[i])))


@dataclass
class QuantizedValueTable:
    q: int
    points: np.ndarray
    values: np.ndarray
    law_indices: np.ndarray
    laws: List[LocalLaw]
    next_index: np.ndarray
    costs: np.ndarray
    beta: float
    gaps: List[float] = field(default_factory=list)

    @property
    def policy(self) -> List[LocalLaw]:
        return [self.laws[i] for i in self.law_indices]

    def law_at(self, m: MeanField) -> LocalLaw:
        return self.laws[self.law_indices[project_to_grid(m.probs, self.points)]]


def value_iteration_ns(
    model: FiniteTeamModel,
    q: int,
    laws: Optional[Sequence[LocalLaw]] = None,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> QuantizedValueTable:
    """Mean-field Bellman equation solved on the q-quantized simplex."""
    if model.beta >= 1.0:
        raise UnsupportedDiscountError("mean-field planning requires beta < 1")
    laws = list(laws) if laws is not None else deterministic_laws(model)
    if not laws:
        raise InvalidInputError("law grid is empty")
    grid = quantized_grid(q, model.num_states)
    G = len(grid)
    C = np.zeros((len(laws), G))
    nxt = np.zeros((len(laws), G), dtype=int)
    for li, law in enumerate(laws):
        for g, point in enumerate(grid):
            m = MeanField(point)
            C[li, g] = mean_field_cost(model, m, law)
            nxt[li, g] = project_to_grid(mean_field_step(model, m, law).probs, grid)
    V, gaps = _value_iteration(C, lambda V: V[nxt], model.beta, tol, max_iter, "NS value iteration")
    Q = C + model.beta * V[nxt]
    idx = np.array([argmin_first(Q[:, g]) for g in range(G)], dtype=int)
    return QuantizedValueTable(q, grid, V, idx, laws, nxt, C, model.beta, gaps)


def ns_strategy(model: FiniteTeamModel, table: QuantizedValueTable, horizon: int) -> LawSequence:
    """Open-loop laws from the predicted mean field, started at the initial law."""
    m = MeanField(model.initial_law)
    laws = []
    for _ in range(horizon):
        law = table.law_at(m)
        laws.append(law)
        m = mean_field_step(model, m, law)
    return LawSequence(laws, name="ns")


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryLog:
    counts: np.ndarray          # (T, |X|) deep state at each step
    costs: np.ndarray           # (T,) per-agent average cost
    seed: object
    strategy: str
    agent_states: Optional[np.ndarray] = None
    agent_actions: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.costs)


def _sample_rows(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row of ``probs`` by inverse CDF."""
    cdf = np.cumsum(probs, axis=1)
    draws = rng.random(len(probs))
    idx = (draws[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def initial_agent_states(model: FiniteTeamModel, rng: np.random.Generator, initial: Optional[DeepState] = None):
    if initial is not None:
        model.check_deep_state(initial)
        return np.repeat(np.arange(model.num_states), initial.counts)
    return _sample_rows(rng, np.tile(model.initial_law, (model.n, 1)))


def simulate_step(model: FiniteTeamModel, states: np.ndarray, law: LocalLaw, rng: np.random.Generator):
    """Sample one transition of the team; returns (actions, average cost, next states)."""
    nx, nu = model.num_states, model.num_actions
    actions = _sample_rows(rng, law.probs[states])
    joint = np.zeros((nx, nu))
    np.add.at(joint, (states, actions), 1.0)
    D = joint / model.n
    cost = 0.0
    rows = np.zeros((nx, nu, nx))
    for x in range(nx):
        for u in range(nu):
            if joint[x, u]:
                cost += joint[x, u] * float(model.cost(x, u, D))
                rows[x, u] = np.asarray(model.kernel(x, u, D), dtype=float)
    nxt = _sample_rows(rng, rows[states, actions])
    return actions, cost / model.n, nxt


def simulate_finite_team(
    model: FiniteTeamModel,
    strategy,
    horizon: int,
    seed=None,
    initial: Optional[DeepState] = None,
    record_agents: bool = False,
) -> TrajectoryLog:
    """Sample path of the n-agent team under a strategy exposing ``law(t, d)``."""
    rng = np.random.default_rng(seed)
    states = initial_agent_states(model, rng, initial)
    nx = model.num_states
    counts = np.zeros((horizon, nx), dtype=np.int64)
    costs = np.zeros(horizon)
    xs = np.zeros((horizon, model.n), dtype=np.int64) if record_agents else None
    us = np.zeros((horizon, model.n), dtype=np.int64) if record_agents else None
    for t in range(horizon):
        c = np.bincount(states, minlength=nx)
        counts[t] = c
        law = strategy.law(t + 1, DeepState(tuple(int(v) for v in c)))
        actions, costs[t], nxt = simulate_step(model, states, law, rng)
        if record_agents:
            xs[t], us[t] = states, actions
        states = nxt
    return TrajectoryLog(counts, costs, seed, getattr(strategy, "name", "custom"), xs, us)


def objective_from_costs(costs: np.ndarray, beta: float) -> float:
    """(1-beta)-normalised truncated discounted sum, or the time average when beta == 1."""
    costs = np.asarray(costs, dtype=float)
    if beta >= 1.0:
        return float(costs.mean())
    return float((1.0 - beta) * np.sum(beta ** np.arange(len(costs)) * costs))


def evaluate_strategy_cost(
    model: FiniteTeamModel,
    strategy,
    beta: Optional[float] = None,
    horizon: int = 100,
    trials: int = 100,
    seed=0,
    initial: Optional[DeepState] = None,
) -> Tuple[float, float]:
    """Monte-Carlo estimate of the objective: (mean, standard error)."""
    if horizon < 1 or trials < 1:
        raise InvalidInputError("horizon and trials must be >= 1")
    beta = model.beta if beta is None else beta
    seeds = np.random.SeedSequence(seed).spawn(trials)
    vals = np.array([
        objective_from_costs(simulate_finite_team(model, strategy, horizon, s, initial).costs, beta)
        for s in seeds
    ])
    se = float(vals.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return float(vals.mean()), se
