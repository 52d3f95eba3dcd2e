"""Ready-made models used by the examples, tests and bundled scenarios."""
from __future__ import annotations

import numpy as np

from .finite_core import FiniteTeamModel

FLOW2_STATES = ("a", "b")
FLOW2_ACTIONS = ("stay", "move")


def flow2_kernel_table() -> np.ndarray:
    """``move`` takes a to b, ``stay`` keeps a; b is absorbing."""
    k = np.zeros((2, 2, 2))
    k[0, 0] = [1.0, 0.0]
    k[0, 1] = [0.0, 1.0]
    k[1, :] = [0.0, 1.0]
    return k


def flow2(n: int = 2, beta: float = 0.9, initial_law=(0.5, 0.5), cost_table=None) -> FiniteTeamModel:
    """Two-state absorbing flow; default cost is 1 for every agent still in a."""
    if cost_table is None:
        cost_table = [[1.0, 1.0], [0.0, 0.0]]
    return FiniteTeamModel.from_tables(
        FLOW2_STATES, FLOW2_ACTIONS, n, flow2_kernel_table(), cost_table, beta, initial_law
    )


def flow2_with_cost(n, cost, beta=0.9, initial_law=(0.5, 0.5), cost_depends_on_joint=True) -> FiniteTeamModel:
    """FLOW-2 dynamics with an arbitrary cost callable ``cost(x, u, D)``."""
    kt = flow2_kernel_table()
    return FiniteTeamModel(
        states=FLOW2_STATES,
        actions=FLOW2_ACTIONS,
        n=n,
        kernel=lambda x, u, D: kt[x, u],
        cost=cost,
        beta=beta,
        initial_law=np.asarray(initial_law, dtype=float),
        cost_depends_on_joint=cost_depends_on_joint,
        kernel_table=kt,
    )


def smart_grid_alpha() -> np.ndarray:
    """Impact factors of the ten-user smart-grid example, shape (10, 1)."""
    return np.sqrt(np.array([0.5] * 6 + [1.5, 1.0, 2.0, 2.5]))[:, None]


def smart_grid(n: int = 10, alpha=None, noise_variance: float = 0.02, beta: float = 1.0):
    """Scalar energy-consumption team: x' = x + u + w, one feature, no dynamic coupling.

    Noise is normal with the given variance; initial consumption is uniform on [0, 0.1].
    """
    from .lq_core import DistributionSpec, LqTeamModel

    if alpha is None:
        alpha = smart_grid_alpha() if n == 10 else np.ones((n, 1))
    return LqTeamModel(
        n=n, A=[[1.0]], B=[[1.0]], abar=([[0.0]],), bbar=([[0.0]],),
        Q=[[1.0]], R=[[1.0]], qbar=[[4.0]], rbar=[[1.0]],
        alpha=alpha, beta=beta,
        noise=DistributionSpec.normal([0.0], [[noise_variance]]),
        initial=DistributionSpec.uniform([0.0], [0.1]),
    )
