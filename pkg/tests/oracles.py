"""Independent brute-force references used across the test suite.

Everything here enumerates individual agents rather than counts, so it shares
no code path with the count-based machinery under test.
"""
import itertools
from collections import defaultdict

import numpy as np

from deepteams.finite_core import FiniteTeamModel


def agent_profile(counts):
    return [x for x, c in enumerate(counts) for _ in range(c)]


def brute_joint_actions(model: FiniteTeamModel, counts, law):
    """{count matrix as nested tuple: probability} by enumerating action profiles."""
    agents = agent_profile(counts)
    out = defaultdict(float)
    for acts in itertools.product(range(model.num_actions), repeat=len(agents)):
        p = np.prod([law.probs[x, u] for x, u in zip(agents, acts)])
        if p == 0:
            continue
        m = np.zeros((model.num_states, model.num_actions), dtype=int)
        for x, u in zip(agents, acts):
            m[x, u] += 1
        out[tuple(map(tuple, m))] += p
    return dict(out)


def brute_next_deep_state(model: FiniteTeamModel, counts, law):
    """{next counts: probability} by enumerating every action and next-state profile."""
    agents = agent_profile(counts)
    n, nx = len(agents), model.num_states
    out = defaultdict(float)
    for acts in itertools.product(range(model.num_actions), repeat=n):
        pa = np.prod([law.probs[x, u] for x, u in zip(agents, acts)])
        if pa == 0:
            continue
        D = np.zeros((nx, model.num_actions))
        for x, u in zip(agents, acts):
            D[x, u] += 1.0 / n
        rows = [np.asarray(model.kernel(x, u, D), dtype=float) for x, u in zip(agents, acts)]
        for nxt in itertools.product(range(nx), repeat=n):
            p = pa * np.prod([rows[i][y] for i, y in enumerate(nxt)])
            if p:
                out[tuple(np.bincount(nxt, minlength=nx))] += p
    return dict(out)


def brute_expected_cost(model: FiniteTeamModel, counts, law):
    agents = agent_profile(counts)
    n = len(agents)
    total = 0.0
    for acts in itertools.product(range(model.num_actions), repeat=n):
        pa = np.prod([law.probs[x, u] for x, u in zip(agents, acts)])
        if pa == 0:
            continue
        D = np.zeros((model.num_states, model.num_actions))
        for x, u in zip(agents, acts):
            D[x, u] += 1.0 / n
        total += pa * sum(model.cost(x, u, D) for x, u in zip(agents, acts)) / n
    return total


def random_kernel_model(rng, nx, nu, n, beta=0.9, sparse=False):
    """Dense-table model with random kernel rows and costs."""
    kt = rng.random((nx, nu, nx))
    if sparse:
        kt *= rng.random((nx, nu, nx)) < 0.6
        kt[..., 0] += 1e-3
    kt /= kt.sum(axis=2, keepdims=True)
    ct = rng.random((nx, nu))
    return FiniteTeamModel.from_tables([f"s{i}" for i in range(nx)], [f"u{i}" for i in range(nu)],
                                       n, kt, ct, beta, np.full(nx, 1.0 / nx))


def value_iteration_reference(C, P, beta, sweeps=5000):
    """Plain value iteration over an explicit (law, state) cost and transition tensor."""
    V = np.zeros(C.shape[1])
    for _ in range(sweeps):
        V = (C + beta * P @ V).min(axis=0)
    return V


def riccati_by_scipy(A, B, Q, R, beta):
    """P from scipy's DARE solver after absorbing the discount."""
    from scipy.linalg import solve_discrete_are
    s = np.sqrt(beta)
    return solve_discrete_are(s * A, s * B, Q, R)
