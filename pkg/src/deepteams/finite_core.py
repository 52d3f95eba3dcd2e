"""Finite-state deep structured teams: types and deep-state transition machinery.

Agents share a finite state alphabet X and action alphabet U.  Coupling enters
through the empirical joint distribution of states and actions, so everything
here is indexed by count vectors rather than by agent profiles.

Kernels and costs are callables taking integer indices and the joint
empirical distribution as an ``|X| x |U|`` array of fractions::

    kernel(x, u, D) -> probability vector over next states
    cost(x, u, D)   -> non-negative float
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import binom

from .errors import EnumerationBoundError, InvalidInputError

Kernel = Callable[[int, int, np.ndarray], np.ndarray]
Cost = Callable[[int, int, np.ndarray], float]

DEFAULT_ENUMERATION_BOUND = 10**6
_SUM_TOL = 1e-12


# ---------------------------------------------------------------------------
# compositions of n into k parts (the index set of Emp_n(X))
# ---------------------------------------------------------------------------

def num_compositions(n: int, k: int) -> int:
    return math.comb(n + k - 1, k - 1)


def composition_rank(counts: Sequence[int]) -> int:
    """Colexicographic rank of a composition via its stars-and-bars encoding.

    The bar positions ``b_j = c_1 + ... + c_j + (j - 1)`` form a strictly
    increasing (k-1)-subset, ranked by the combinatorial number system.
    """
    rank = 0
    partial = 0
    for j, c in enumerate(counts[:-1], start=1):
        partial += c
        rank += math.comb(partial + j - 1, j)
    return rank


def composition_unrank(rank: int, n: int, k: int) -> Tuple[int, ...]:
    if not 0 <= rank < num_compositions(n, k):
        raise InvalidInputError(f"rank {rank} out of range for n={n}, k={k}")
    bars = [0] * (k - 1)
    r = rank
    for j in range(k - 1, 0, -1):
        b = j - 1
        while math.comb(b + 1, j) <= r:
            b += 1
        bars[j - 1] = b
        r -= math.comb(b, j)
    counts = []
    prev = -1
    for b in bars:
        counts.append(b - prev - 1)
        prev = b
    counts.append(n + k - 2 - prev)
    return tuple(counts)


@lru_cache(maxsize=256)
def compositions(n: int, k: int) -> Tuple[Tuple[int, ...], ...]:
    """All compositions of ``n`` into ``k`` non-negative parts, in rank order."""
    return tuple(composition_unrank(r, n, k) for r in range(num_compositions(n, k)))


def multinomial_outcomes(trials: int, probs: Sequence[float]) -> List[Tuple[Tuple[int, ...], float]]:
    """Support and pmf of Multinomial(trials, probs); zero-probability outcomes dropped."""
    probs = [float(p) for p in probs]
    out = []
    for counts in compositions(trials, len(probs)):
        p = float(math.factorial(trials))
        for c, q in zip(counts, probs):
            if c:
                if q == 0.0:
                    p = 0.0
                    break
                p *= q**c / math.factorial(c)
        if p > 0.0:
            out.append((counts, p))
    return out


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeepState:
    """Empirical distribution of agent states, stored as integer counts."""

    counts: Tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise InvalidInputError(f"negative count in deep state {counts}")
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def fractions(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.n

    @property
    def rank(self) -> int:
        return composition_rank(self.counts)

    @classmethod
    def from_rank(cls, rank: int, n: int, num_states: int) -> "DeepState":
        return cls(composition_unrank(rank, n, num_states))


@dataclass(frozen=True)
class JointDistribution:
    """Counts of agents per (state, action) cell; row sums give the deep state."""

    counts: Tuple[Tuple[int, ...], ...]

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.matrix.sum())

    @property
    def fractions(self) -> np.ndarray:
        m = self.matrix
        return m / m.sum()

    @property
    def deep_state(self) -> DeepState:
        return DeepState(tuple(int(s) for s in self.matrix.sum(axis=1)))


class LocalLaw:
    """Per-state action distributions: row ``x`` is gamma(x) over U."""

    __slots__ = ("probs",)

    def __init__(self, probs):
        probs = np.array(probs, dtype=float)
        if probs.ndim != 2:
            raise InvalidInputError("local law must be a |X| x |U| matrix")
        if np.any(probs < 0) or np.any(probs > 1):
            raise InvalidInputError("local law entries must lie in [0, 1]")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > _SUM_TOL):
            raise InvalidInputError("local law rows must sum to 1")
        probs.setflags(write=False)
        self.probs = probs

    @classmethod
    def deterministic(cls, mapping: Sequence[int], num_actions: int) -> "LocalLaw":
        probs = np.zeros((len(mapping), num_actions))
        probs[np.arange(len(mapping)), list(mapping)] = 1.0
        return cls(probs)

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    @property
    def mapping(self) -> Tuple[int, ...]:
        if not self.is_deterministic:
            raise InvalidInputError("law is not deterministic")
        return tuple(int(i) for i in self.probs.argmax(axis=1))

    def __eq__(self, other):
        return isinstance(other, LocalLaw) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        return f"LocalLaw({self.probs.tolist()})"


@dataclass(frozen=True)
class CountDistribution:
    """Probability vector over {0, ..., support_size - 1}."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def support_size(self) -> int:
        return len(self.probs)

    def mean(self) -> float:
        return float(np.arange(len(self.probs)) @ self.probs)


@dataclass(frozen=True)
class FiniteTeamModel:
    """Model I: exchangeable agents on finite alphabets.

    ``kernel_table`` (shape ``|X| x |U| x |X|``) and ``cost_table``
    (``|X| x |U|``) are kept when the model was built from dense tables; they
    are only valid when the corresponding ``*_depends_on_joint`` flag is off.
    """

    states: Tuple[str, ...]
    actions: Tuple[str, ...]
    n: int
    kernel: Kernel
    cost: Cost
    beta: float
    initial_law: np.ndarray
    kernel_depends_on_joint: bool = False
    cost_depends_on_joint: bool = False
    kernel_table: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    cost_table: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", tuple(self.actions))
        if len(set(self.states)) != len(self.states) or not self.states:
            raise InvalidInputError("state alphabet must be non-empty with distinct symbols")
        if len(set(self.actions)) != len(self.actions) or not self.actions:
            raise InvalidInputError("action alphabet must be non-empty with distinct symbols")
        if int(self.n) != self.n or self.n < 1:
            raise InvalidInputError(f"agent count must be a positive integer, got {self.n}")
        if not 0.0 < self.beta <= 1.0:
            raise InvalidInputError(f"discount must lie in (0, 1], got {self.beta}")
        law = np.asarray(self.initial_law, dtype=float)
        if law.shape != (len(self.states),) or np.any(law < 0) or abs(law.sum() - 1.0) > _SUM_TOL:
            raise InvalidInputError("initial_law must be a probability vector over X")
        law.setflags(write=False)
        object.__setattr__(self, "initial_law", law)
        self._check_callables()

    def _check_callables(self):
        # Spot check on every vertex of P(X x U) plus the uniform joint law.
        nx, nu = len(self.states), len(self.actions)
        probes = [np.full((nx, nu), 1.0 / (nx * nu))]
        if self.kernel_depends_on_joint or self.cost_depends_on_joint:
            for x in range(nx):
                for u in range(nu):
                    v = np.zeros((nx, nu))
                    v[x, u] = 1.0
                    probes.append(v)
        for D in probes:
            for x in range(nx):
                for u in range(nu):
                    row = np.asarray(self.kernel(x, u, D), dtype=float)
                    if row.shape != (nx,) or np.any(row < 0) or abs(row.sum() - 1.0) > _SUM_TOL:
                        raise InvalidInputError(
                            f"kernel row for (x={self.states[x]}, u={self.actions[u]}) is not a distribution"
                        )
                    c = float(self.cost(x, u, D))
                    if not math.isfinite(c) or c < 0:
                        raise InvalidInputError(
                            f"cost at (x={self.states[x]}, u={self.actions[u]}) must be finite and >= 0"
                        )

    @classmethod
    def from_tables(cls, states, actions, n, kernel_table, cost_table, beta, initial_law) -> "FiniteTeamModel":
        kt = np.array(kernel_table, dtype=float)
        ct = np.array(cost_table, dtype=float)
        nx, nu = len(states), len(actions)
        if kt.shape != (nx, nu, nx):
            raise InvalidInputError(f"kernel table must have shape {(nx, nu, nx)}, got {kt.shape}")
        if ct.shape != (nx, nu):
            raise InvalidInputError(f"cost table must have shape {(nx, nu)}, got {ct.shape}")
        kt.setflags(write=False)
        ct.setflags(write=False)
        return cls(
            states=tuple(states),
            actions=tuple(actions),
            n=int(n),
            kernel=lambda x, u, D: kt[x, u],
            cost=lambda x, u, D: ct[x, u],
            beta=float(beta),
            initial_law=np.asarray(initial_law, dtype=float),
            kernel_table=kt,
            cost_table=ct,
        )

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    def state_index(self, symbol) -> int:
        try:
            return self.states.index(symbol)
        except ValueError:
            raise InvalidInputError(f"symbol {symbol!r} is not in the state alphabet") from None

    def with_n(self, n: int) -> "FiniteTeamModel":
        return replace(self, n=n)

    def deep_states(self) -> List[DeepState]:
        return [DeepState(c) for c in compositions(self.n, self.num_states)]

    def num_deep_states(self) -> int:
        return num_compositions(self.n, self.num_states)

    def check_deep_state(self, d: DeepState):
        if len(d.counts) != self.num_states or d.n != self.n:
            raise InvalidInputError(f"deep state {d.counts} inconsistent with |X|={self.num_states}, n={self.n}")

    def check_law(self, law: LocalLaw):
        if law.probs.shape != (self.num_states, self.num_actions):
            raise InvalidInputError(
                f"local law shape {law.probs.shape} does not match ({self.num_states}, {self.num_actions})"
            )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def empirical_from_profile(model: FiniteTeamModel, profile: Sequence) -> DeepState:
    """Count agents per state symbol."""
    counts = [0] * model.num_states
    for s in profile:
        counts[model.state_index(s)] += 1
    return DeepState(tuple(counts))


def plugin_joint(d: DeepState, law: LocalLaw) -> np.ndarray:
    """Expected joint distribution d(x) * gamma(x)(u)."""
    return d.fractions[:, None] * law.probs


def _action_split_count(d: DeepState, num_actions: int) -> int:
    return math.prod(num_compositions(k, num_actions) for k in d.counts)


def joint_action_distribution(
    model: FiniteTeamModel, d: DeepState, law: LocalLaw, bound: int = DEFAULT_ENUMERATION_BOUND
) -> List[Tuple[JointDistribution, float]]:
    """Exact law of the state-action counts given the deep state and local law.

    Within each state the agents' action counts are multinomial with
    probabilities gamma(x); states are independent.
    """
    model.check_deep_state(d)
    model.check_law(law)
    terms = _action_split_count(d, model.num_actions)
    if terms > bound:
        raise EnumerationBoundError(terms, bound)
    per_state = [multinomial_outcomes(k, law.probs[x]) for x, k in enumerate(d.counts)]
    out = []
    for combo in itertools.product(*per_state):
        p = 1.0
        for _, q in combo:
            p *= q
        out.append((JointDistribution(tuple(c for c, _ in combo)), p))
    return out


def _mixed_row(model: FiniteTeamModel, x: int, law: LocalLaw, d: DeepState) -> np.ndarray:
    D = plugin_joint(d, law)
    row = np.zeros(model.num_states)
    for u in range(model.num_actions):
        w = law.probs[x, u]
        if w:
            row += w * np.asarray(model.kernel(x, u, D), dtype=float)
    return row


def mixed_transition(model: FiniteTeamModel, x_next: int, x: int, law: LocalLaw, d: DeepState) -> float:
    """Probability that an agent in ``x`` moves to ``x_next`` under ``law``.

    A kernel that reads the joint distribution is evaluated at the plug-in
    value d(x) * gamma(x)(u).
    """
    model.check_deep_state(d)
    model.check_law(law)
    return float(_mixed_row(model, x, law, d)[x_next])


def phi(model: FiniteTeamModel, x_next: int, x: int, law: LocalLaw, d: DeepState) -> CountDistribution:
    """Law of the number of agents moving from ``x`` to ``x_next``."""
    k = d.counts[x]
    if k == 0:
        return CountDistribution(np.array([1.0]))
    p = min(max(mixed_transition(model, x_next, x, law, d), 0.0), 1.0)
    return CountDistribution(binom.pmf(np.arange(k + 1), k, p))


def bar_phi(model: FiniteTeamModel, x_next: int, law: LocalLaw, d: DeepState) -> CountDistribution:
    """Law of the number of agents landing in ``x_next`` (convolution over source states)."""
    acc = np.ones(1, dtype=np.longdouble)
    for x in range(model.num_states):
        acc = np.convolve(acc, phi(model, x_next, x, law, d).probs.astype(np.longdouble))
    return CountDistribution(acc.astype(float))


def deep_state_marginal(model: FiniteTeamModel, d: DeepState, law: LocalLaw, x_next: int, y: int) -> float:
    """P(d'(x_next) = y / n | d, law)."""
    if not 0 <= y <= model.n:
        raise InvalidInputError(f"count {y} outside 0..{model.n}")
    return float(bar_phi(model, x_next, law, d).probs[y])


def _convolve_counts(a: Dict[tuple, float], b: Sequence[Tuple[tuple, float]]) -> Dict[tuple, float]:
    out: Dict[tuple, float] = {}
    for va, pa in a.items():
        for vb, pb in b:
            key = tuple(i + j for i, j in zip(va, vb))
            out[key] = out.get(key, 0.0) + pa * pb
    return out


def joint_deep_kernel_exact(
    model: FiniteTeamModel,
    d: DeepState,
    law: LocalLaw,
    bound: int = DEFAULT_ENUMERATION_BOUND,
    method: str = "enumerate",
) -> Dict[Tuple[int, ...], float]:
    """Exact law of the next deep state, keyed by count tuples.

    ``method="enumerate"`` conditions on every realised joint distribution and
    convolves the per-cell multinomial moves under the kernel evaluated at that
    realisation.  ``method="auto"`` takes the per-source-state shortcut
    (multinomial with the mixed transition row) when the kernel ignores the
    joint distribution, where both are identical in law.

    The term count checked against ``bound`` is
    (number of realised joint distributions) x |Emp_n(X)|.
    """
    model.check_deep_state(d)
    model.check_law(law)
    nx = model.num_states
    if method == "auto" and not model.kernel_depends_on_joint:
        acc: Dict[tuple, float] = {(0,) * nx: 1.0}
        for x, k in enumerate(d.counts):
            if k:
                acc = _convolve_counts(acc, multinomial_outcomes(k, _mixed_row(model, x, law, d)))
        return acc
    if method not in ("enumerate", "auto"):
        raise InvalidInputError(f"unknown method {method!r}")
    terms = _action_split_count(d, model.num_actions) * model.num_deep_states()
    if terms > bound:
        raise EnumerationBoundError(terms, bound)
    result: Dict[tuple, float] = {}
    for joint, pj in joint_action_distribution(model, d, law, bound=bound):
        D = joint.fractions
        acc = {(0,) * nx: pj}
        for x in range(nx):
            for u in range(model.num_actions):
                c = joint.counts[x][u]
                if c:
                    row = np.asarray(model.kernel(x, u, D), dtype=float)
                    acc = _convolve_counts(acc, multinomial_outcomes(c, row))
        for key, p in acc.items():
            result[key] = result.get(key, 0.0) + p
    return result


def expected_cost(
    model: FiniteTeamModel, d: DeepState, law: LocalLaw, bound: int = DEFAULT_ENUMERATION_BOUND
) -> float:
    """Expected per-agent cost of one step given the deep state and local law."""
    model.check_deep_state(d)
    model.check_law(law)
    frac = d.fractions
    if not model.cost_depends_on_joint:
        D = plugin_joint(d, law)
        total = 0.0
        for x in range(model.num_states):
            if frac[x]:
                for u in range(model.num_actions):
                    if law.probs[x, u]:
                        total += frac[x] * law.probs[x, u] * float(model.cost(x, u, D))
        return total
    total = 0.0
    for joint, p in joint_action_distribution(model, d, law, bound=bound):
        D = joint.fractions
        step = 0.0
        for x in range(model.num_states):
            for u in range(model.num_actions):
                if D[x, u]:
                    step += float(model.cost(x, u, D)) * D[x, u]
        total += p * step
    return total
