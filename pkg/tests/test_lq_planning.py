import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepteams.errors import AssumptionViolation, ConvergenceError, InvalidInputError
from deepteams.lq_core import (
    DistributionSpec, LqTeamModel, build_aggregate_matrices, gauge_transform, lq_objective_samples,
)
from deepteams.lq_planning import (
    TeamController, check_assumptions, dss_controller, initial_mean_field, is_detectable, is_stabilizable,
    ns_controller, riccati_gain, riccati_predicted_cost, solve_deep_riccati, solve_riccati,
    solve_weakly_coupled, spectral_radius,
)
from deepteams.models import smart_grid

from lq_helpers import orthonormal_alpha, random_lq_model
from oracles import riccati_by_scipy


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), beta=st.sampled_from([0.7, 0.95, 1.0]))
def test_deep_riccati_matches_scipy_dare(seed, beta):
    rng = np.random.default_rng(seed)
    m = random_lq_model(rng, 8, 2, 2, 1, beta=beta)
    report = check_assumptions(m)
    if not report.ok:
        return
    sol = solve_deep_riccati(m, tol=1e-12)
    mats = build_aggregate_matrices(m)
    P = riccati_by_scipy(m.A, m.B, m.Q, m.R, beta)
    Pb = riccati_by_scipy(mats.Abold, mats.Bbold, mats.Qbold, mats.Rbold, beta)
    assert np.allclose(sol.P, P, atol=1e-8 * max(1, np.abs(P).max()))
    assert np.allclose(sol.Pbold, Pb, atol=1e-8 * max(1, np.abs(Pb).max()))
    theta = -np.linalg.solve(m.R + beta * m.B.T @ P @ m.B, beta * m.B.T @ P @ m.A)
    assert np.allclose(sol.theta, theta, atol=1e-7)


def test_riccati_fixed_point_reports_non_convergence():
    with pytest.raises(ConvergenceError):
        solve_riccati(np.eye(1), np.eye(1), np.eye(1), np.eye(1), 1.0, max_iter=1)


def test_pbh_checks():
    assert is_stabilizable(np.array([[2.0]]), np.array([[1.0]]))
    assert not is_stabilizable(np.array([[2.0]]), np.array([[0.0]]))
    assert is_stabilizable(np.array([[0.5]]), np.array([[0.0]]))
    assert is_stabilizable(np.array([[1.5]]), np.array([[0.0]]), beta=0.4)  # sqrt(0.4) * 1.5 < 1
    assert not is_detectable(np.array([[2.0]]), np.array([[0.0]]))
    assert is_detectable(np.array([[2.0]]), np.array([[1.0]]))
    assert spectral_radius(np.array([[0.0, 2.0], [-2.0, 0.0]])) == pytest.approx(2.0)


def _model_with(**kw):
    base = dict(n=10, A=[[1.0]], B=[[1.0]], abar=([[0.0]],), bbar=([[0.0]],), Q=[[1.0]], R=[[1.0]],
                qbar=[[4.0]], rbar=[[1.0]], alpha=np.ones((10, 1)), beta=1.0,
                noise=DistributionSpec.normal([0.0], [[0.02]]), initial=DistributionSpec.uniform([0.0], [0.1]))
    base.update(kw)
    return LqTeamModel(**base)


def test_assumption_violations_are_named():
    with pytest.raises(AssumptionViolation) as exc:
        solve_deep_riccati(_model_with(R=[[0.0]], rbar=[[0.0]]))
    assert "planning.R_pd" in exc.value.failed and "planning.Rbold_pd" in exc.value.failed
    with pytest.raises(AssumptionViolation) as exc:
        solve_deep_riccati(_model_with(A=[[2.0]], B=[[0.0]], bbar=([[0.0]],)))
    assert "planning.local_stabilizable" in exc.value.failed
    report = check_assumptions(_model_with(noise=DistributionSpec.point([0.0])))
    assert report.failed("excitation") == ["excitation.noise_cov_pd"]
    assert report.passed("moments.noise_cov_psd")


def test_weakly_coupled_solution_agrees_with_full_solution():
    rng = np.random.default_rng(4)
    alpha = orthonormal_alpha(rng, 12, 3)
    noise = DistributionSpec.normal([0.0, 0.0], 0.1 * np.eye(2))
    A = np.array([[1.0, 0.2], [0.0, 0.9]])
    B = np.array([[0.0], [1.0]])
    m = LqTeamModel.weakly(12, A, B, [0.1 * np.eye(2), -0.2 * np.eye(2), np.zeros((2, 2))],
                           [np.array([[0.1], [0.0]]), np.zeros((2, 1)), np.array([[0.0], [0.5]])],
                           np.eye(2), np.eye(1), [np.eye(2), 2 * np.eye(2), np.zeros((2, 2))],
                           [np.eye(1), np.zeros((1, 1)), 3 * np.eye(1)], alpha, 0.95, noise, noise)
    full = solve_deep_riccati(m, tol=1e-12)
    weak = solve_weakly_coupled(m, tol=1e-12)
    assert np.allclose(weak.Pbold, full.Pbold, atol=1e-8)
    assert np.allclose(weak.thetabold, full.thetabold, atol=1e-8)
    with pytest.raises(InvalidInputError):
        solve_weakly_coupled(smart_grid())


def test_dss_controller_acts_separately_on_deviations_and_aggregates():
    rng = np.random.default_rng(5)
    m = random_lq_model(rng, 9, 2, 2, 2, beta=0.9)
    sol = solve_deep_riccati(m, check=False)
    ctrl = dss_controller(sol, m.alpha)
    X = rng.standard_normal((9, 2))
    dx, _, xbar, _ = gauge_transform(X, np.zeros((9, 2)), m.alpha)
    U = ctrl(1, X, xbar)
    du, _, ubar, _ = gauge_transform(U, U, m.alpha)
    assert np.allclose(du, dx @ sol.theta.T, atol=1e-12)
    assert np.allclose(ubar, sol.thetabold @ xbar, atol=1e-12)
    with pytest.raises(InvalidInputError):
        TeamController(sol.theta, np.eye(3), m.alpha)


def test_ns_controller_uses_propagated_mean_field():
    m = smart_grid()
    sol = solve_deep_riccati(m)
    ctrl = ns_controller(m, sol, horizon=4)
    mats = build_aggregate_matrices(m)
    m1 = initial_mean_field(m)
    assert m1 == pytest.approx(np.sqrt([0.5] * 6 + [1.5, 1, 2, 2.5]).mean() * 0.05)
    closed = mats.Abold + mats.Bbold @ sol.thetabold
    assert np.allclose(ctrl.mean_field[2], np.linalg.matrix_power(closed, 2) @ m1)
    assert ctrl.name == "ns" and dss_controller(sol, m.alpha).name == "dss"


def test_ns_controller_requires_stable_mean_field_dynamics():
    m = _model_with(A=[[0.5]], abar=([[2.0]],), alpha=np.ones((10, 1)))
    sol = solve_deep_riccati(m)
    assert not check_assumptions(m, sol).passed("mean_field.schur")
    with pytest.raises(AssumptionViolation):
        ns_controller(m, sol, horizon=3)


def test_predicted_cost_time_average_matches_simulation():
    m = smart_grid()
    sol = solve_deep_riccati(m)
    predicted = riccati_predicted_cost(sol, m)
    assert predicted == pytest.approx(0.9 * sol.P[0, 0] * 0.02 + sol.Pbold[0, 0] * 0.002)
    vals = lq_objective_samples(m, lambda: dss_controller(sol, m.alpha), horizon=1000, trials=40, seed=0)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - predicted) <= 4 * se + 1e-4


def test_predicted_cost_discounted_matches_simulation():
    rng = np.random.default_rng(11)
    m = random_lq_model(rng, 6, 2, 2, 1, beta=0.8)
    sol = solve_deep_riccati(m)
    predicted = riccati_predicted_cost(sol, m)
    vals = lq_objective_samples(m, lambda: dss_controller(sol, m.alpha), horizon=80, trials=1000, seed=1)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - predicted) <= 4 * se


def test_optimal_gains_beat_perturbed_gains():
    m = smart_grid()
    sol = solve_deep_riccati(m)
    best = riccati_predicted_cost(sol, m)
    for dt, db in [(0.1, 0.0), (0.0, 0.1), (-0.1, -0.1)]:
        other = type(sol)(sol.P, sol.Pbold, sol.theta + dt, sol.thetabold + db, 0, 0, 1.0, 1)
        vals = lq_objective_samples(m, lambda: dss_controller(other, m.alpha), 400, 30, seed=2)
        opt = lq_objective_samples(m, lambda: dss_controller(sol, m.alpha), 400, 30, seed=2)
        assert np.mean(vals - opt) > 0
    assert best > 0


def test_riccati_gain_scalar():
    P = np.array([[(1 + 5 ** 0.5) / 2]])
    assert riccati_gain(P, np.eye(1), np.eye(1), np.eye(1), 1.0)[0, 0] == pytest.approx(-0.6180339887)
