"""Deep Riccati planning for linear-quadratic teams."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import block_diag

from .errors import AssumptionViolation, ConvergenceError, InvalidInputError
from .lq_core import AggregateMatrices, LqTeamModel, _pd, _psd, build_aggregate_matrices

PBH_TOL = 1e-8


# ---------------------------------------------------------------------------
# single Riccati equation
# ---------------------------------------------------------------------------

def riccati_map(P, A, B, Q, R, beta):
    """One application of the discounted Riccati operator."""
    BtP = B.T @ P
    K = np.linalg.solve(BtP @ B + R / beta, BtP @ A)
    out = Q + beta * A.T @ P @ A - beta * A.T @ P @ B @ K
    return (out + out.T) / 2


def riccati_gain(P, A, B, R, beta):
    """theta = -(B'PB + R/beta)^{-1} B'PA."""
    return -np.linalg.solve(B.T @ P @ B + R / beta, B.T @ P @ A)


def riccati_residual(P, A, B, Q, R, beta) -> float:
    return float(np.max(np.abs(riccati_map(P, A, B, Q, R, beta) - P)))


def solve_riccati(A, B, Q, R, beta, tol=1e-10, max_iter=100_000) -> Tuple[np.ndarray, float]:
    """Fixed-point iteration from P0 = Q.

    Stops once the residual max|map(P) - P| is at most ``tol * max(1, max|P|)``
    so that large solutions are not held to an absolute tolerance below their
    rounding floor.
    """
    P = np.array(Q, dtype=float)
    res = float("inf")
    for _ in range(max_iter):
        P_next = riccati_map(P, A, B, Q, R, beta)
        if not np.all(np.isfinite(P_next)):
            raise ConvergenceError("Riccati iteration produced non-finite values")
        P = P_next
        res = riccati_residual(P, A, B, Q, R, beta)
        if res <= tol * max(1.0, float(np.max(np.abs(P)))):
            return P, res
    raise ConvergenceError(f"Riccati iteration did not converge in {max_iter} steps (residual {res:.3e})", res)


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------

def _unstable_modes(A, beta):
    """Eigenvalues of sqrt(beta)*A on or outside the unit circle."""
    eig = np.linalg.eigvals(np.sqrt(beta) * A)
    return [lam for lam in eig if abs(lam) >= 1.0 - PBH_TOL]


def is_stabilizable(A, B, beta=1.0, tol=PBH_TOL) -> bool:
    """PBH test on the modes of sqrt(beta)*A that are not strictly stable."""
    As, Bs = np.sqrt(beta) * A, np.sqrt(beta) * B
    n = A.shape[0]
    for lam in _unstable_modes(A, beta):
        M = np.hstack([As - lam * np.eye(n), Bs])
        if np.linalg.matrix_rank(M, tol=tol) < n:
            return False
    return True


def is_detectable(A, Q, beta=1.0, tol=PBH_TOL) -> bool:
    w, v = np.linalg.eigh((Q + Q.T) / 2)
    C = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return is_stabilizable(np.sqrt(beta) * A.T, C.T, 1.0, tol)


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if np.size(M) else 0.0


@dataclass
class AssumptionReport:
    checks: List[Tuple[str, bool, str]] = field(default_factory=list)

    def add(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))

    @property
    def ok(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def failed(self, prefix: str = "") -> List[str]:
        return [name for name, ok, _ in self.checks if not ok and name.startswith(prefix)]

    def passed(self, name: str) -> bool:
        return all(ok for n, ok, _ in self.checks if n == name)

    def as_dict(self):
        return [{"check": n, "ok": ok, "detail": d} for n, ok, d in self.checks]


def _planning_checks(model: LqTeamModel, mats: AggregateMatrices, report: AssumptionReport):
    b = model.beta
    report.add("planning.Q_psd", _psd(model.Q), "local state cost Q positive semi-definite")
    report.add("planning.Qbold_psd", _psd(mats.Qbold), "aggregate state cost positive semi-definite")
    report.add("planning.R_pd", _pd(model.R), "local action cost R positive definite")
    report.add("planning.Rbold_pd", _pd(mats.Rbold), "aggregate action cost positive definite")
    report.add("planning.local_stabilizable", is_stabilizable(model.A, model.B, b), "(A, B) stabilizable")
    report.add("planning.aggregate_stabilizable", is_stabilizable(mats.Abold, mats.Bbold, b), "(Abold, Bbold) stabilizable")
    report.add("planning.local_detectable", is_detectable(model.A, model.Q, b), "(A, Q^1/2) detectable")
    report.add("planning.aggregate_detectable", is_detectable(mats.Abold, mats.Qbold, b), "(Abold, Qbold^1/2) detectable")


def check_assumptions(model: LqTeamModel, solution: Optional["DeepRiccatiSolution"] = None) -> AssumptionReport:
    """Report-only check of the conditions the planners and controllers rely on.

    Check groups: ``planning.*`` (cost definiteness, stabilizability,
    detectability), ``moments.*`` (bounded covariances), ``excitation.*``
    (positive-definite covariances) and, when a solution is given,
    ``mean_field.schur``: the spectral radius of
    Abold + Bbold blockdiag(theta, ..., theta) must be below one.
    """
    mats = build_aggregate_matrices(model)
    report = AssumptionReport()
    _planning_checks(model, mats, report)
    for name, spec in (("noise", model.noise), ("initial", model.initial)):
        report.add(f"moments.{name}_cov_psd", _psd(spec.cov) and np.all(np.isfinite(spec.cov)),
                   f"{name} covariance symmetric PSD and bounded")
    if solution is not None:
        closed = mats.Abold + mats.Bbold @ block_diag(*[solution.theta] * model.z)
        rho = spectral_radius(closed)
        report.add("mean_field.schur", rho < 1.0, f"spectral radius {rho:.6g}")
    for name, spec in (("noise", model.noise), ("initial", model.initial)):
        report.add(f"excitation.{name}_cov_pd", _pd(spec.cov), f"{name} covariance positive definite")
    return report


# ---------------------------------------------------------------------------
# deep Riccati equation
# ---------------------------------------------------------------------------

@dataclass
class DeepRiccatiSolution:
    P: np.ndarray
    Pbold: np.ndarray
    theta: np.ndarray
    thetabold: np.ndarray
    residual: float
    residual_bold: float
    beta: float
    z: int

    def thetabar_row(self, j: int) -> np.ndarray:
        """Row block j of thetabold (hu x z*hx)."""
        hu = self.theta.shape[0]
        return self.thetabold[j * hu:(j + 1) * hu]


def solve_deep_riccati(model: LqTeamModel, tol: float = 1e-10, max_iter: int = 100_000,
                       check: bool = True) -> DeepRiccatiSolution:
    """Solve the local and aggregate Riccati equations and return both gains."""
    mats = build_aggregate_matrices(model)
    if check:
        report = AssumptionReport()
        _planning_checks(model, mats, report)
        if not report.ok:
            failed = report.failed()
            raise AssumptionViolation("standing LQ assumption violated: " + ", ".join(failed), failed)
    b = model.beta
    P, res = solve_riccati(model.A, model.B, model.Q, model.R, b, tol, max_iter)
    Pb, res_b = solve_riccati(mats.Abold, mats.Bbold, mats.Qbold, mats.Rbold, b, tol, max_iter)
    return DeepRiccatiSolution(
        P=P,
        Pbold=Pb,
        theta=riccati_gain(P, model.A, model.B, model.R, b),
        thetabold=riccati_gain(Pb, mats.Abold, mats.Bbold, mats.Rbold, b),
        residual=res,
        residual_bold=res_b,
        beta=b,
        z=model.z,
    )


@dataclass
class WeaklyCoupledSolution:
    P_blocks: List[np.ndarray]
    theta_blocks: List[np.ndarray]
    residuals: List[float]

    @property
    def Pbold(self) -> np.ndarray:
        return block_diag(*self.P_blocks)

    @property
    def thetabold(self) -> np.ndarray:
        return block_diag(*self.theta_blocks)


def solve_weakly_coupled(model: LqTeamModel, tol: float = 1e-10, max_iter: int = 100_000) -> WeaklyCoupledSolution:
    """z independent Riccati equations in (A + Abar_j, B + Bbar_j, Q + Qbar_j, R + Rbar_j)."""
    if not model.weakly_coupled:
        raise InvalidInputError("model is not flagged weakly coupled")
    Ps, thetas, res = [], [], []
    for j in range(model.z):
        Aj, Bj, Qj, Rj = model.feature_block(j)
        A, B, Q, R = model.A + Aj, model.B + Bj, model.Q + Qj, model.R + Rj
        P, r = solve_riccati(A, B, Q, R, model.beta, tol, max_iter)
        Ps.append(P)
        thetas.append(riccati_gain(P, A, B, R, model.beta))
        res.append(r)
    return WeaklyCoupledSolution(Ps, thetas, res)


# ---------------------------------------------------------------------------
# controllers
# ---------------------------------------------------------------------------

class TeamController:
    """u^i = theta x^i + sum_j alpha[i,j] (thetabar_j s - theta s_j).

    ``s`` is the observed deep state (DSS) or, when ``mean_field`` is given, the
    predicted mean field at time t (NS).  With a block-diagonal thetabold this
    is the weakly coupled form sum_j alpha[i,j] (thetabar_jj - theta) s_j.
    """

    def __init__(self, theta, thetabold, alpha, mean_field: Optional[np.ndarray] = None):
        self.theta = np.atleast_2d(np.asarray(theta, dtype=float))
        self.thetabold = np.atleast_2d(np.asarray(thetabold, dtype=float))
        alpha = np.asarray(alpha, dtype=float)
        self.alpha = alpha[:, None] if alpha.ndim == 1 else alpha
        self.mean_field = mean_field
        hu, hx = self.theta.shape
        z = self.alpha.shape[1]
        if self.thetabold.shape != (z * hu, z * hx):
            raise InvalidInputError(f"thetabold must be {(z * hu, z * hx)}, got {self.thetabold.shape}")

    @property
    def name(self) -> str:
        return "dss" if self.mean_field is None else "ns"

    def __call__(self, t: int, X: np.ndarray, xbar: np.ndarray) -> np.ndarray:
        s = xbar if self.mean_field is None else self.mean_field[min(t, len(self.mean_field)) - 1]
        hu, hx = self.theta.shape
        z = self.alpha.shape[1]
        coupling = (self.thetabold @ s).reshape(z, hu) - s.reshape(z, hx) @ self.theta.T
        return X @ self.theta.T + self.alpha @ coupling


def dss_controller(solution, alpha) -> TeamController:
    return TeamController(solution.theta, solution.thetabold, alpha)


def propagate_mean_field(m: np.ndarray, aggregates: AggregateMatrices, thetabold: np.ndarray) -> np.ndarray:
    return (aggregates.Abold + aggregates.Bbold @ thetabold) @ np.asarray(m, dtype=float)


def initial_mean_field(model: LqTeamModel) -> np.ndarray:
    """E[xbar_1]: block j is mean_i(alpha[i, j]) times the initial mean."""
    return np.kron(model.alpha.mean(axis=0), model.initial.mean)


def ns_controller(model: LqTeamModel, solution: DeepRiccatiSolution, horizon: int,
                  m1: Optional[np.ndarray] = None) -> TeamController:
    """Mean-field substitute for the deep state, propagated open loop."""
    report = check_assumptions(model, solution)
    if not report.passed("mean_field.schur"):
        detail = [d for n, _, d in report.checks if n == "mean_field.schur"][0]
        raise AssumptionViolation(f"NS stability condition fails: {detail}", ["mean_field.schur"])
    mats = build_aggregate_matrices(model)
    m = initial_mean_field(model) if m1 is None else np.asarray(m1, dtype=float)
    seq = np.zeros((max(horizon, 1), m.size))
    for t in range(len(seq)):
        seq[t] = m
        m = propagate_mean_field(m, mats, solution.thetabold)
    return TeamController(solution.theta, solution.thetabold, model.alpha, mean_field=seq)


# ---------------------------------------------------------------------------
# predicted cost
# ---------------------------------------------------------------------------

def riccati_predicted_cost(solution: DeepRiccatiSolution, model: LqTeamModel) -> float:
    """Per-agent objective of the optimal DSS controller predicted from P and Pbold.

    The gauge split gives n deviation systems driven by dw^i = w^i - sum_j
    alpha[i,j] wbar^j and one aggregate system driven by wbar.  With W the noise
    covariance, the averaged deviation noise covariance is (1 - z/n) W and the
    aggregate one is I_z kron W/n.  Hence, per agent,

        beta = 1:  (1 - z/n) tr(P W) + tr(Pbold (I_z kron W/n))
        beta < 1:  (1 - beta) [E(1/n) sum dx_1' P dx_1 + E xbar_1' Pbold xbar_1]
                   + beta [(1 - z/n) tr(P W) + tr(Pbold (I_z kron W/n))]

    where, for i.i.d. initial states with mean mu and covariance S,
    E(1/n) sum dx dx' = (1 - z/n) S + (1 - sum_j abar_j^2) mu mu'
    and E xbar xbar' = I_z kron S/n + (abar abar') kron mu mu', abar_j = mean_i alpha[i,j].
    """
    mats = build_aggregate_matrices(model)
    rho_local = spectral_radius(np.sqrt(model.beta) * (model.A + model.B @ solution.theta))
    rho_bold = spectral_radius(np.sqrt(model.beta) * (mats.Abold + mats.Bbold @ solution.thetabold))
    if max(rho_local, rho_bold) >= 1.0:
        raise AssumptionViolation(f"closed loop unstable (spectral radii {rho_local:.4g}, {rho_bold:.4g})")
    n, z = model.n, model.z
    W = model.noise.cov
    noise_term = (1 - z / n) * np.trace(solution.P @ W) + np.trace(solution.Pbold @ np.kron(np.eye(z), W / n))
    if model.beta >= 1.0:
        return float(noise_term)
    mu, S = model.initial.mean, model.initial.cov
    abar = model.alpha.mean(axis=0)
    dev = (1 - z / n) * S + (1 - abar @ abar) * np.outer(mu, mu)
    agg = np.kron(np.eye(z), S / n) + np.kron(np.outer(abar, abar), np.outer(mu, mu))
    init_term = np.trace(solution.P @ dev) + np.trace(solution.Pbold @ agg)
    return float((1 - model.beta) * init_term + model.beta * noise_term)
