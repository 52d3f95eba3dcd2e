"""Linear-quadratic deep structured teams: model, aggregation and simulation.

Shapes used throughout (``z`` features, ``hx``/``hu`` local dimensions):

* ``abar[j]``: ``hx x z*hx``   and ``bbar[j]``: ``hx x z*hu``
* ``qbar``:    ``z*hx x z*hx`` and ``rbar``:    ``z*hu x z*hu``
* ``alpha``:   ``n x z`` with orthonormal columns under the 1/n inner product
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import block_diag

from .errors import DivergedError, InvalidInputError

ORTHONORMAL_TOL = 1e-9
DIVERGENCE_NORM = 1e9


def _psd(m: np.ndarray, tol: float = 1e-10) -> bool:
    return np.allclose(m, m.T, atol=1e-10) and np.linalg.eigvalsh((m + m.T) / 2).min() >= -tol


def _pd(m: np.ndarray, tol: float = 1e-12) -> bool:
    return np.allclose(m, m.T, atol=1e-10) and np.linalg.eigvalsh((m + m.T) / 2).min() > tol


@dataclass(frozen=True)
class DistributionSpec:
    """Per-agent distribution: ``normal`` (mean, cov), ``uniform`` (low, high) or ``point`` (value).

    Uniform draws are independent across coordinates.
    """

    family: str
    mean: np.ndarray
    cov: np.ndarray
    low: Optional[np.ndarray] = None
    high: Optional[np.ndarray] = None

    @classmethod
    def normal(cls, mean, cov) -> "DistributionSpec":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (len(mean), len(mean)) or not _psd(cov):
            raise InvalidInputError("normal covariance must be a symmetric PSD matrix matching the mean")
        return cls("normal", mean, cov)

    @classmethod
    def uniform(cls, low, high) -> "DistributionSpec":
        low = np.atleast_1d(np.asarray(low, dtype=float))
        high = np.atleast_1d(np.asarray(high, dtype=float))
        if low.shape != high.shape or np.any(high < low):
            raise InvalidInputError("uniform bounds must have equal shapes with high >= low")
        return cls("uniform", (low + high) / 2, np.diag((high - low) ** 2 / 12), low, high)

    @classmethod
    def point(cls, value) -> "DistributionSpec":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls("point", value, np.zeros((len(value), len(value))))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family == "normal":
            # Cholesky of a PSD matrix may fail; eigen-factor instead.
            w, v = np.linalg.eigh(self.cov)
            root = v * np.sqrt(np.clip(w, 0.0, None))
            return self.mean + rng.standard_normal((size, self.dim)) @ root.T
        if self.family == "uniform":
            return rng.uniform(self.low, self.high, (size, self.dim))
        return np.tile(self.mean, (size, 1))

    def scaled(self, factor: float) -> "DistributionSpec":
        """Same family with covariance multiplied by ``factor`` (mean unchanged)."""
        if self.family == "normal":
            return DistributionSpec.normal(self.mean, self.cov * factor)
        if self.family == "uniform":
            half = (self.high - self.low) / 2 * np.sqrt(factor)
            return DistributionSpec.uniform(self.mean - half, self.mean + half)
        return self


@dataclass(frozen=True)
class LqTeamModel:
    n: int
    A: np.ndarray
    B: np.ndarray
    abar: Tuple[np.ndarray, ...]
    bbar: Tuple[np.ndarray, ...]
    Q: np.ndarray
    R: np.ndarray
    qbar: np.ndarray
    rbar: np.ndarray
    alpha: np.ndarray
    beta: float
    noise: DistributionSpec
    initial: DistributionSpec
    weakly_coupled: bool = False

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        hx, hu = B.shape
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.ndim == 1:
            alpha = alpha[:, None]
        z = alpha.shape[1]
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))
        object.__setattr__(self, "qbar", np.atleast_2d(np.asarray(self.qbar, dtype=float)))
        object.__setattr__(self, "rbar", np.atleast_2d(np.asarray(self.rbar, dtype=float)))
        object.__setattr__(self, "abar", tuple(np.atleast_2d(np.asarray(a, dtype=float)) for a in self.abar))
        object.__setattr__(self, "bbar", tuple(np.atleast_2d(np.asarray(b, dtype=float)) for b in self.bbar))

        if int(self.n) != self.n or self.n < 1:
            raise InvalidInputError("agent count must be a positive integer")
        if A.shape != (hx, hx):
            raise InvalidInputError(f"A must be {hx}x{hx}, got {A.shape}")
        if alpha.shape[0] != self.n:
            raise InvalidInputError(f"alpha must have n={self.n} rows, got {alpha.shape[0]}")
        if len(self.abar) != z or len(self.bbar) != z:
            raise InvalidInputError(f"need one coupling matrix per feature (z={z})")
        for j in range(z):
            if self.abar[j].shape != (hx, z * hx):
                raise InvalidInputError(f"abar[{j}] must be {hx}x{z * hx}, got {self.abar[j].shape}")
            if self.bbar[j].shape != (hx, z * hu):
                raise InvalidInputError(f"bbar[{j}] must be {hx}x{z * hu}, got {self.bbar[j].shape}")
        for name, m, dim in (("Q", self.Q, hx), ("R", self.R, hu), ("qbar", self.qbar, z * hx), ("rbar", self.rbar, z * hu)):
            if m.shape != (dim, dim):
                raise InvalidInputError(f"{name} must be {dim}x{dim}, got {m.shape}")
        gram = alpha.T @ alpha / self.n
        if np.max(np.abs(gram - np.eye(z))) > ORTHONORMAL_TOL:
            raise InvalidInputError(
                "impact factors violate orthonormality: (1/n) sum_i alpha[i,j] alpha[i,k] must equal 1{j=k}"
            )
        if not 0.0 < self.beta <= 1.0:
            raise InvalidInputError(f"discount must lie in (0, 1], got {self.beta}")
        if self.noise.dim != hx or self.initial.dim != hx:
            raise InvalidInputError("noise and initial-state laws must have dimension hx")
        if self.weakly_coupled and not self._has_weak_structure():
            raise InvalidInputError("weakly_coupled set but coupling matrices are not feature-diagonal")

    def _has_weak_structure(self) -> bool:
        hx, hu, z = self.hx, self.hu, self.z
        for j in range(z):
            for k in range(z):
                if k == j:
                    continue
                if np.any(self.abar[j][:, k * hx:(k + 1) * hx]) or np.any(self.bbar[j][:, k * hu:(k + 1) * hu]):
                    return False
                if np.any(self.qbar[j * hx:(j + 1) * hx, k * hx:(k + 1) * hx]):
                    return False
                if np.any(self.rbar[j * hu:(j + 1) * hu, k * hu:(k + 1) * hu]):
                    return False
        return True

    @classmethod
    def weakly(cls, n, A, B, abar_blocks, bbar_blocks, Q, R, qbar_blocks, rbar_blocks, alpha, beta, noise, initial):
        """Build a weakly coupled model from per-feature ``hx x hx`` / ``hu x hu`` blocks."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        hx, hu = B.shape
        z = len(abar_blocks)
        abar, bbar = [], []
        for j in range(z):
            a = np.zeros((hx, z * hx))
            a[:, j * hx:(j + 1) * hx] = np.atleast_2d(abar_blocks[j])
            b = np.zeros((hx, z * hu))
            b[:, j * hu:(j + 1) * hu] = np.atleast_2d(bbar_blocks[j])
            abar.append(a)
            bbar.append(b)
        return cls(n, A, B, tuple(abar), tuple(bbar), Q, R,
                   block_diag(*[np.atleast_2d(q) for q in qbar_blocks]),
                   block_diag(*[np.atleast_2d(r) for r in rbar_blocks]),
                   alpha, beta, noise, initial, weakly_coupled=True)

    @property
    def hx(self) -> int:
        return self.B.shape[0]

    @property
    def hu(self) -> int:
        return self.B.shape[1]

    @property
    def z(self) -> int:
        return self.alpha.shape[1]

    def feature_block(self, j: int):
        """(Abar_jj, Bbar_jj, Qbar_jj, Rbar_jj) diagonal blocks of feature ``j``."""
        hx, hu = self.hx, self.hu
        sx, su = slice(j * hx, (j + 1) * hx), slice(j * hu, (j + 1) * hu)
        return self.abar[j][:, sx], self.bbar[j][:, su], self.qbar[sx, sx], self.rbar[su, su]

    def with_population(self, n: int, alpha) -> "LqTeamModel":
        return replace(self, n=n, alpha=np.asarray(alpha, dtype=float))


@dataclass(frozen=True)
class AggregateMatrices:
    Abold: np.ndarray
    Bbold: np.ndarray
    Qbold: np.ndarray
    Rbold: np.ndarray


def build_aggregate_matrices(model: LqTeamModel) -> AggregateMatrices:
    z = model.z
    return AggregateMatrices(
        Abold=block_diag(*[model.A] * z) + np.vstack(model.abar),
        Bbold=block_diag(*[model.B] * z) + np.vstack(model.bbar),
        Qbold=block_diag(*[model.Q] * z) + model.qbar,
        Rbold=block_diag(*[model.R] * z) + model.rbar,
    )


def aggregate(values: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Stacked weighted averages: block j is (1/n) sum_i alpha[i, j] values[i]."""
    values = np.asarray(values, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if alpha.ndim == 1:
        alpha = alpha[:, None]
    if values.shape[0] != alpha.shape[0]:
        raise InvalidInputError(f"{values.shape[0]} agents but alpha has {alpha.shape[0]} rows")
    return (alpha.T @ values / values.shape[0]).reshape(-1)


def _expand(bar: np.ndarray, alpha: np.ndarray, dim: int) -> np.ndarray:
    """Per-agent sum_j alpha[i, j] bar^j, shape (n, dim)."""
    return alpha @ bar.reshape(alpha.shape[1], dim)


def gauge_transform(states, actions, alpha):
    """Split profiles into per-agent deviations and stacked aggregates.

    Returns ``(dx, du, xbar, ubar)`` with ``x^i = dx^i + sum_j alpha[i,j] xbar^j``.
    """
    states = np.asarray(states, dtype=float)
    actions = np.asarray(actions, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    if actions.ndim == 1:
        actions = actions[:, None]
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim == 1:
        alpha = alpha[:, None]
    xbar = aggregate(states, alpha)
    ubar = aggregate(actions, alpha)
    dx = states - _expand(xbar, alpha, states.shape[1])
    du = actions - _expand(ubar, alpha, actions.shape[1])
    return dx, du, xbar, ubar


def per_step_cost(model: LqTeamModel, x, u, xbar, ubar) -> float:
    x, u = np.atleast_1d(x), np.atleast_1d(u)
    xbar, ubar = np.atleast_1d(xbar), np.atleast_1d(ubar)
    return float(x @ model.Q @ x + u @ model.R @ u + xbar @ model.qbar @ xbar + ubar @ model.rbar @ ubar)


def team_average_cost(model: LqTeamModel, X: np.ndarray, U: np.ndarray) -> float:
    """(1/n) sum_i per_step_cost for an (n, hx) / (n, hu) profile."""
    xbar = aggregate(X, model.alpha)
    ubar = aggregate(U, model.alpha)
    local = np.einsum("ij,jk,ik->", X, model.Q, X) + np.einsum("ij,jk,ik->", U, model.R, U)
    return float(local / model.n + xbar @ model.qbar @ xbar + ubar @ model.rbar @ ubar)


def gauge_cost_split(model: LqTeamModel, X: np.ndarray, U: np.ndarray) -> Tuple[float, float]:
    """Team-average cost split into its deviation and aggregate parts.

    Returns ``(local, agg)`` with local = (1/n) sum_i dx'Q dx + du'R du and
    agg = xbar'Qbold xbar + ubar'Rbold ubar; their sum equals
    ``team_average_cost`` whenever alpha is orthonormal.
    """
    mats = build_aggregate_matrices(model)
    dx, du, xbar, ubar = gauge_transform(X, U, model.alpha)
    local = (np.einsum("ij,jk,ik->", dx, model.Q, dx) + np.einsum("ij,jk,ik->", du, model.R, du)) / model.n
    return float(local), float(xbar @ mats.Qbold @ xbar + ubar @ mats.Rbold @ ubar)


@dataclass
class LqTrajectoryLog:
    xbar: np.ndarray            # (T, z*hx)
    costs: np.ndarray           # (T,) per-agent average cost
    seed: object
    states: Optional[np.ndarray] = None   # (T, n, hx)
    actions: Optional[np.ndarray] = None  # (T, n, hu)

    def __len__(self):
        return len(self.costs)


def step_dynamics(model: LqTeamModel, X, U, xbar, ubar, W) -> np.ndarray:
    coupling = np.stack([model.abar[j] @ xbar + model.bbar[j] @ ubar for j in range(model.z)])  # (z, hx)
    return X @ model.A.T + U @ model.B.T + model.alpha @ coupling + W


def simulate_lq_team(
    model: LqTeamModel,
    controller: Callable[[int, np.ndarray, np.ndarray], np.ndarray],
    horizon: int,
    seed=None,
    record_agents: bool = False,
    initial_states: Optional[np.ndarray] = None,
) -> LqTrajectoryLog:
    """Roll the n-agent team forward under ``controller(t, X, xbar) -> U``.

    Noise is drawn i.i.d. across agents and time.  Raises ``DivergedError``
    once any state norm exceeds 1e9.
    """
    rng = np.random.default_rng(seed)
    X = model.initial.sample(rng, model.n) if initial_states is None else np.array(initial_states, dtype=float)
    X = X.reshape(model.n, model.hx)
    xbars = np.zeros((horizon, model.z * model.hx))
    costs = np.zeros(horizon)
    xs = np.zeros((horizon, model.n, model.hx)) if record_agents else None
    us = np.zeros((horizon, model.n, model.hu)) if record_agents else None
    for t in range(horizon):
        xbar = aggregate(X, model.alpha)
        U = np.asarray(controller(t + 1, X, xbar), dtype=float).reshape(model.n, model.hu)
        ubar = aggregate(U, model.alpha)
        xbars[t] = xbar
        costs[t] = team_average_cost(model, X, U)
        if record_agents:
            xs[t], us[t] = X, U
        W = model.noise.sample(rng, model.n)
        X = step_dynamics(model, X, U, xbar, ubar, W)
        if not np.all(np.isfinite(X)) or np.max(np.linalg.norm(X, axis=1)) > DIVERGENCE_NORM:
            raise DivergedError(f"state norm exceeded {DIVERGENCE_NORM:g} at step {t + 1}", step=t + 1)
    return LqTrajectoryLog(xbars, costs, seed, xs, us)


def zero_controller(model: LqTeamModel):
    return lambda t, X, xbar: np.zeros((model.n, model.hu))


def lq_objective_samples(model: LqTeamModel, controller_factory, horizon: int, trials: int, seed=0) -> np.ndarray:
    """Per-trial objective values of independent rollouts.

    ``controller_factory()`` builds a fresh controller per trial.  Trial k uses
    the k-th child of ``SeedSequence(seed)``, so two controllers evaluated with
    the same seed see identical initial states and noise.  The objective is
    the time average when beta == 1, else the (1-beta)-normalised discounted sum.
    """
    if horizon < 1 or trials < 1:
        raise InvalidInputError("horizon and trials must be >= 1")
    disc = np.ones(horizon) / horizon if model.beta >= 1.0 else (1 - model.beta) * model.beta ** np.arange(horizon)
    out = np.zeros(trials)
    for k, ss in enumerate(np.random.SeedSequence(seed).spawn(trials)):
        out[k] = simulate_lq_team(model, controller_factory(), horizon, seed=ss).costs @ disc
    return out
