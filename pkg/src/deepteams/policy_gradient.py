"""Model-free zeroth-order policy gradient over the team feedback gains."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import DivergedError, InvalidInputError
from .lq_core import DIVERGENCE_NORM, LqTeamModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PgHyperparams:
    L: int = 100
    T: int = 10
    r: float = 0.15
    eta: float = 0.3
    iters: int = 5000
    seed: int = 0
    beta: Optional[float] = None   # defaults to the model's discount
    cost_ceiling: float = 1e6

    def __post_init__(self):
        if self.L < 1 or self.T < 1 or self.iters < 0:
            raise InvalidInputError("L and T must be >= 1 and iters >= 0")
        if self.r <= 0 or self.eta <= 0:
            raise InvalidInputError("smoothing radius and step size must be positive")
        if self.seed < 0:
            raise InvalidInputError("seed must be a non-negative integer")


def sample_perturbation(rows: int, cols: int, r: float, rng=None) -> np.ndarray:
    """Uniform draw from the Frobenius sphere of radius ``r``."""
    if r <= 0:
        raise InvalidInputError("radius must be positive")
    rng = np.random.default_rng(rng)
    g = rng.standard_normal((rows, cols))
    norm = np.linalg.norm(g)
    while norm == 0.0:
        g = rng.standard_normal((rows, cols))
        norm = np.linalg.norm(g)
    return g * (r / norm)


def trajectory_rng(seed: int, k: int, ell: int) -> np.random.Generator:
    """Independent stream for trajectory ``ell`` of iteration ``k``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, k, ell))))


def _simulate_batch(model: LqTeamModel, thetas, thetabolds, X1, noise, ceiling):
    """Costs (L, T) of L rollouts under per-trajectory gains; returns (costs, diverged)."""
    n, z, hx, hu = model.n, model.z, model.hx, model.hu
    L, T = noise.shape[0], noise.shape[1]
    alpha = model.alpha
    abar = np.stack(model.abar)   # (z, hx, z*hx)
    bbar = np.stack(model.bbar)   # (z, hx, z*hu)
    X = X1.copy()
    costs = np.zeros((L, T))
    diverged = np.zeros(L, dtype=bool)
    for t in range(T):
        xbar = np.einsum("ij,lih->ljh", alpha, X).reshape(L, z * hx) / n
        coupling = (np.einsum("lab,lb->la", thetabolds, xbar).reshape(L, z, hu)
                    - np.einsum("ljh,luh->lju", xbar.reshape(L, z, hx), thetas))
        U = np.einsum("lih,luh->liu", X, thetas) + np.einsum("ij,lju->liu", alpha, coupling)
        ubar = np.einsum("ij,liu->lju", alpha, U).reshape(L, z * hu) / n
        c = (np.einsum("lih,hk,lik->l", X, model.Q, X) + np.einsum("liu,uv,liv->l", U, model.R, U)) / n
        c += np.einsum("la,ab,lb->l", xbar, model.qbar, xbar) + np.einsum("la,ab,lb->l", ubar, model.rbar, ubar)
        costs[:, t] = np.where(diverged, ceiling, np.minimum(c, ceiling))
        drift = np.einsum("jhk,lk->ljh", abar, xbar) + np.einsum("jhk,lk->ljh", bbar, ubar)
        X = X @ model.A.T + U @ model.B.T + np.einsum("ij,ljh->lih", alpha, drift) + noise[:, t]
        with np.errstate(invalid="ignore"):
            bad = ~np.isfinite(X).all(axis=(1, 2)) | (np.abs(X).max(axis=(1, 2), initial=0.0) > DIVERGENCE_NORM)
        if bad.any():
            diverged |= bad
            X[diverged] = 0.0
    return costs, diverged


def _draw(model: LqTeamModel, rng, T):
    X1 = model.initial.sample(rng, model.n)
    noise = model.noise.sample(rng, T * model.n).reshape(T, model.n, model.hx)
    return X1, noise


def rollout_cost(model: LqTeamModel, theta, thetabold, T: int, seed=None, on_diverge: str = "raise",
                 cost_ceiling: float = 1e6) -> np.ndarray:
    """Per-agent average cost sequence c_1..c_T of one rollout with the given gains."""
    rng = np.random.default_rng(seed)
    X1, noise = _draw(model, rng, T)
    costs, diverged = _simulate_batch(model, np.asarray(theta, float)[None], np.asarray(thetabold, float)[None],
                                      X1[None], noise[None], cost_ceiling)
    if diverged[0] and on_diverge == "raise":
        raise DivergedError("rollout diverged")
    return costs[0]


def gradient_estimates(costs, theta_perts, thetabold_perts, z: int, hx: int, hu: int, r: float, beta: float):
    """Smoothed-gradient estimates (grad_theta, grad_thetabold) from L rollouts.

    grad = dim / (T L r^2) * sum_l (sum_t beta^(t-1) c_t^l) * perturbation_l,
    with dim = hx*hu for theta and z^2*hx*hu for thetabold.
    """
    costs = np.atleast_2d(np.asarray(costs, dtype=float))
    L, T = costs.shape
    theta_perts = np.asarray(theta_perts, dtype=float)
    thetabold_perts = np.asarray(thetabold_perts, dtype=float)
    if theta_perts.shape != (L, hu, hx) or thetabold_perts.shape != (L, z * hu, z * hx):
        raise InvalidInputError("perturbation shapes do not match the cost sequences and model dimensions")
    weights = costs @ (beta ** np.arange(T))
    scale = 1.0 / (T * L * r * r)
    g = hx * hu * scale * np.tensordot(weights, theta_perts, axes=1)
    gb = z * z * hx * hu * scale * np.tensordot(weights, thetabold_perts, axes=1)
    return g, gb


def update_gains(theta, thetabold, grads, eta):
    g, gb = grads
    return np.asarray(theta) - eta * g, np.asarray(thetabold) - eta * gb


@dataclass
class GainTrace:
    """Row k holds the gains after update k and the mean cost of iteration k's rollouts."""

    thetas: np.ndarray        # (iters, hu, hx)
    thetabolds: np.ndarray    # (iters, z*hu, z*hx)
    mean_cost: np.ndarray     # (iters,) mean over rollouts of sum_t beta^(t-1) c_t / T
    diverged: np.ndarray      # (iters,) diverged rollouts per iteration
    dist_theta: Optional[np.ndarray] = None
    dist_thetabold: Optional[np.ndarray] = None
    theta0: np.ndarray = field(default=None)
    thetabold0: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.mean_cost)

    @property
    def final(self) -> Tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            return self.theta0, self.thetabold0
        return self.thetas[-1], self.thetabolds[-1]

    def tail_mean(self, window: int) -> Tuple[np.ndarray, np.ndarray]:
        """Average gains over the last ``window`` rows."""
        if len(self) == 0:
            return self.theta0, self.thetabold0
        return self.thetas[-window:].mean(axis=0), self.thetabolds[-window:].mean(axis=0)


def run_policy_gradient(model: LqTeamModel, hyper: PgHyperparams, reference=None,
                        theta0=None, thetabold0=None) -> GainTrace:
    """Iterate perturbed rollouts, gradient estimates and gain updates.

    ``reference`` may be any object with ``theta`` and ``thetabold`` (for
    example a Riccati solution); distances to it are then recorded.
    """
    z, hx, hu = model.z, model.hx, model.hu
    beta = model.beta if hyper.beta is None else hyper.beta
    theta = np.zeros((hu, hx)) if theta0 is None else np.array(theta0, dtype=float).reshape(hu, hx)
    thetabold = (np.zeros((z * hu, z * hx)) if thetabold0 is None
                 else np.array(thetabold0, dtype=float).reshape(z * hu, z * hx))
    L, T, r = hyper.L, hyper.T, hyper.r
    iters = hyper.iters
    thetas = np.zeros((iters, hu, hx))
    thetabolds = np.zeros((iters, z * hu, z * hx))
    mean_cost = np.zeros(iters)
    diverged = np.zeros(iters, dtype=np.int64)
    discount = beta ** np.arange(T)
    trace0 = (theta.copy(), thetabold.copy())
    for k in range(iters):
        pt = np.zeros((L, hu, hx))
        pb = np.zeros((L, z * hu, z * hx))
        X1 = np.zeros((L, model.n, hx))
        noise = np.zeros((L, T, model.n, hx))
        for ell in range(L):
            rng = trajectory_rng(hyper.seed, k, ell)
            pt[ell] = sample_perturbation(hu, hx, r, rng)
            pb[ell] = sample_perturbation(z * hu, z * hx, r, rng)
            X1[ell], noise[ell] = _draw(model, rng, T)
        costs, div = _simulate_batch(model, theta + pt, thetabold + pb, X1, noise, hyper.cost_ceiling)
        grads = gradient_estimates(costs, pt, pb, z, hx, hu, r, beta)
        theta, thetabold = update_gains(theta, thetabold, grads, hyper.eta)
        thetas[k], thetabolds[k] = theta, thetabold
        mean_cost[k] = float((costs @ discount).mean() / T)
        diverged[k] = int(div.sum())
        if div.any():
            log.info("iteration %d: %d diverged rollouts capped", k + 1, int(div.sum()))
        if (k + 1) % 500 == 0:
            log.debug("iteration %d: theta=%s thetabold=%s", k + 1, theta.ravel(), thetabold.ravel())
    trace = GainTrace(thetas, thetabolds, mean_cost, diverged, theta0=trace0[0], thetabold0=trace0[1])
    if reference is not None:
        trace.dist_theta = np.linalg.norm(thetas - reference.theta, axis=(1, 2))
        trace.dist_thetabold = np.linalg.norm(thetabolds - reference.thetabold, axis=(1, 2))
    return trace
