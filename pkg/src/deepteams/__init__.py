"""Deep structured teams: planning, learning and simulation for large exchangeable teams.

Two model classes are supported.  Finite teams (:mod:`deepteams.finite_core`)
couple agents through the empirical distribution of their states and actions;
linear-quadratic teams (:mod:`deepteams.lq_core`) couple them through weighted
averages of states and actions.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AssumptionViolation, ConvergenceError, DeepTeamsError, DivergedError, EnumerationBoundError,
    InvalidInputError, ScenarioError, UnsupportedDiscountError,
)
from .finite_core import (  # noqa: E402
    CountDistribution, DeepState, FiniteTeamModel, JointDistribution, LocalLaw, bar_phi,
    deep_state_marginal, empirical_from_profile, expected_cost, joint_action_distribution,
    joint_deep_kernel_exact, mixed_transition, phi,
)
from .lq_core import DistributionSpec, LqTeamModel  # noqa: E402
from .lq_planning import DeepRiccatiSolution, check_assumptions, solve_deep_riccati  # noqa: E402
