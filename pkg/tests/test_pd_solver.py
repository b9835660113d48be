import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog
from core.model import beam_gain, check_feasibility, comm_sinrs, optimal_q_dl
from core.pd_solver import (
    CommunicationInfeasibleError,
    CurvePoint,
    FixedPointMode,
    FixedPointStatus,
    LambdaCase,
    MAX_OUTER_STEPS,
    PrimalDualSolver,
    c_matrix,
    classify_lambda,
    descending_start,
    dual_constraint_values,
    dual_state,
    fixed_point_mu,
    fixed_point_system,
    lambda_range,
    mvdr_direction,
    power_matrix,
    sensing_power,
    solve_jfcbd,
    solve_power,
    subgradient,
    trace_curve,
)
from core.scenario import generate_instance
from core.sdr_oracle import SdrOracle
from utils.helpers import eig_extremes
from instances import build_instance, random_beams


def _unit_gain_instance():
    # N_t = 2, N = 4, α = 1/7, |g_l| = 1
    return build_instance(L=2, N_t=2, cap_dl=3.0, g=np.ones(2))


def _single_user_alpha_free(gamma=2.0, seed=1):
    # cap_dl = 60 bit/use makes α about 1e-18
    return build_instance(K=1, cap_dl=60.0, gamma_k=gamma, seed=seed)


# ---------------------------------------------------------------------------
# λ-range case analysis
# ---------------------------------------------------------------------------

def test_lambda_range_hand_example():
    bounds = lambda_range(_unit_gain_instance())
    assert bounds.d1_upper == pytest.approx(14 / 29)
    assert bounds.d2_lower == pytest.approx(14.0)


@pytest.mark.parametrize("lam, expected", [
    (0.0, LambdaCase.PSD),
    (1.0, LambdaCase.INDEFINITE),
    (14.5, LambdaCase.NSD),
    (100.0, LambdaCase.NSD),
])
def test_classify_lambda(lam, expected):
    case, _ = classify_lambda(_unit_gain_instance(), lam)
    assert case is expected


def test_nsd_endpoint_has_no_positive_eigenvalue():
    instance = _unit_gain_instance()
    _, bounds = classify_lambda(instance, 0.0)
    _, high = eig_extremes(np.eye(instance.N) - bounds.d2_lower * instance.B_mat)
    assert high <= 1e-10


def test_classify_lambda_rejects_negative():
    with pytest.raises(ValueError):
        classify_lambda(_unit_gain_instance(), -1e-3)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), fraction=st.floats(0.0, 1.0), excess=st.floats(0.0, 50.0))
def test_lambda_range_is_sound(seed, fraction, excess):
    instance = build_instance(seed=seed)
    bounds = lambda_range(instance)
    identity = np.eye(instance.N)
    assert eig_extremes(identity - fraction * bounds.d1_upper * instance.B_mat)[0] >= -1e-10
    assert eig_extremes(identity - (1.0 + excess) * bounds.d2_lower * instance.B_mat)[1] <= 1e-10


# ---------------------------------------------------------------------------
# Fixed-point iteration
# ---------------------------------------------------------------------------

def test_single_user_fixed_point_closed_form():
    instance = _single_user_alpha_free(gamma=2.0)
    result = fixed_point_mu(instance, 0.0, np.zeros(1), FixedPointMode.ASCENDING)
    assert result.status is FixedPointStatus.CONVERGED
    expected = instance.gamma_k[0] / np.linalg.norm(instance.h[0]) ** 2
    assert result.mu[0] == pytest.approx(expected, rel=1e-8)


def test_ascending_and_descending_agree(make_instance, logger):
    instance = make_instance(seed=12)
    ascending = fixed_point_mu(instance, 0.0, np.zeros(instance.K), FixedPointMode.ASCENDING, logger=logger)
    descending = fixed_point_mu(instance, 0.0, 2.0 * ascending.mu, FixedPointMode.DESCENDING, logger=logger)
    assert ascending.converged and descending.converged
    assert descending.mu == pytest.approx(ascending.mu, rel=1e-7)

    f = dual_constraint_values(instance, 0.0, ascending.mu)
    assert f == pytest.approx(1.0 / instance.gamma_tilde_k, rel=1e-8)
    assert np.all(ascending.mu > 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), fraction=st.floats(0.05, 0.95))
def test_ascending_and_descending_agree_with_sensing_weight(seed, fraction):
    instance = build_instance(seed=seed)
    lam = fraction * lambda_range(instance).d1_upper
    ascending = fixed_point_mu(instance, lam, np.zeros(instance.K), FixedPointMode.ASCENDING)
    start, _ = descending_start(instance, lam)
    assert start is not None
    descending = fixed_point_mu(instance, lam, start, FixedPointMode.DESCENDING)
    assert ascending.converged and descending.converged
    assert descending.mu == pytest.approx(ascending.mu, rel=1e-7)


def test_fixed_point_iterates_are_monotone(make_instance, logger):
    instance = make_instance(seed=13)
    ascending = fixed_point_mu(instance, 0.0, np.zeros(instance.K), FixedPointMode.ASCENDING, logger=logger)
    descending = fixed_point_mu(instance, 0.0, 4.0 * ascending.mu, FixedPointMode.DESCENDING, logger=logger)
    for previous, current in zip(ascending.iterates, ascending.iterates[1:]):
        assert np.all(current >= previous - 1e-12 * np.maximum(1.0, previous))
    for previous, current in zip(descending.iterates, descending.iterates[1:]):
        assert np.all(current <= previous + 1e-12 * np.maximum(1.0, previous))


def test_fixed_point_rejects_inconsistent_start(make_instance):
    instance = make_instance(seed=14)
    optimum = fixed_point_mu(instance, 0.0, np.zeros(instance.K), FixedPointMode.ASCENDING).mu
    with pytest.raises(ValueError):
        fixed_point_mu(instance, 0.0, 4.0 * optimum, FixedPointMode.ASCENDING)
    with pytest.raises(ValueError):
        fixed_point_mu(instance, 0.0, np.zeros(instance.K), FixedPointMode.DESCENDING)


def test_dual_infeasible_when_c_is_not_positive_definite():
    instance = _unit_gain_instance()
    lam = 2.0 * lambda_range(instance).d2_lower
    result = fixed_point_mu(instance, lam, np.zeros(instance.K), FixedPointMode.DESCENDING)
    assert result.status is FixedPointStatus.DUAL_INFEASIBLE
    assert result.iterations == 0
    assert dual_constraint_values(instance, lam, np.zeros(instance.K)) is None


def test_dual_state_acceptance():
    instance = _unit_gain_instance()
    mu = fixed_point_mu(instance, 0.0, np.zeros(instance.K), FixedPointMode.ASCENDING).mu
    state = dual_state(instance, 0.0, mu)
    assert state.case_label is LambdaCase.PSD
    assert state.accepted
    assert np.allclose(state.C_matrix, c_matrix(instance, 0.0, mu))

    rejected = dual_state(instance, 2.0 * lambda_range(instance).d2_lower, np.zeros(instance.K))
    assert rejected.case_label is LambdaCase.NSD
    assert not rejected.accepted


def test_descending_start_from_smaller_lambda(sensing_active_instance, logger):
    # μ*(0) already satisfies the start condition anywhere in the PSD range
    instance = sensing_active_instance
    base = PrimalDualSolver(logger).solve_p4(instance).mu_star
    lam = 0.5 * lambda_range(instance).d1_upper
    mu0, doublings = descending_start(instance, lam, base)
    assert doublings == 0
    assert np.array_equal(mu0, base)
    f = dual_constraint_values(instance, lam, mu0)
    assert np.all(f >= (1.0 - 1e-10) / instance.gamma_tilde_k)


# ---------------------------------------------------------------------------
# Primal recovery
# ---------------------------------------------------------------------------

def test_mvdr_direction_with_identity_c(make_instance):
    instance = make_instance(seed=15)
    directions = mvdr_direction(instance, 0.0, np.zeros(instance.K))
    expected = instance.h / np.linalg.norm(instance.h, axis=1, keepdims=True)
    assert np.allclose(directions, expected)


def test_mvdr_direction_matches_linear_solve(make_instance):
    instance = make_instance(seed=16)
    lam, mu = 0.1, np.array([0.4, 0.9])
    directions = mvdr_direction(instance, lam, mu)
    C = c_matrix(instance, lam, mu)
    for k in range(instance.K):
        x = np.linalg.solve(C, instance.h[k])
        assert np.allclose(directions[k], x / np.linalg.norm(x))
        assert np.linalg.norm(directions[k]) == pytest.approx(1.0, abs=1e-12)


def test_mvdr_direction_requires_positive_definite_c():
    instance = _unit_gain_instance()
    with pytest.raises(ValueError):
        mvdr_direction(instance, 2.0 * lambda_range(instance).d2_lower, np.zeros(instance.K))


def test_single_user_power():
    instance = _single_user_alpha_free(gamma=3.0, seed=4)
    h = instance.h[0]
    p = solve_power(instance, 0.0, (h / np.linalg.norm(h))[None, :])
    assert p[0] == pytest.approx(instance.sigma_v2 * 3.0 / np.linalg.norm(h) ** 2, rel=1e-10)


def test_power_matches_fresh_linear_solve(make_instance):
    instance = make_instance(seed=17)
    mu = fixed_point_mu(instance, 0.0, np.zeros(instance.K), FixedPointMode.ASCENDING).mu
    directions = mvdr_direction(instance, 0.0, mu)
    p = solve_power(instance, 0.0, directions)
    S = power_matrix(instance, directions)
    assert p == pytest.approx(np.linalg.solve(S, np.full(instance.K, instance.sigma_v2)))
    w = np.sqrt(p)[:, None] * directions
    assert comm_sinrs(instance, w, optimal_q_dl(instance, w)) == pytest.approx(instance.gamma_k, rel=1e-6)


def test_subgradient_boundaries(make_instance):
    instance = make_instance(seed=18, gamma_s=3.0)
    assert subgradient(instance, np.zeros((instance.K, instance.N))) == pytest.approx(instance.gamma_tilde_s)
    w = random_beams(instance, np.random.default_rng(18))
    w *= np.sqrt(instance.gamma_tilde_s / beam_gain(instance, w))
    assert subgradient(instance, w) == pytest.approx(0.0, abs=1e-12 * instance.gamma_tilde_s)


# ---------------------------------------------------------------------------
# Communication-only problem
# ---------------------------------------------------------------------------

def test_single_user_p4_closed_form(logger):
    instance = _single_user_alpha_free(gamma=2.0, seed=5)
    solution = PrimalDualSolver(logger).solve_p4(instance)
    h = instance.h[0]
    assert solution.beam_power == pytest.approx(instance.sigma_v2 * 2.0 / np.linalg.norm(h) ** 2, rel=1e-8)
    alignment = abs(np.vdot(h, solution.w[0])) / (np.linalg.norm(h) * np.linalg.norm(solution.w[0]))
    assert alignment == pytest.approx(1.0, abs=1e-10)
    assert solution.mu_star[0] == pytest.approx(2.0 / np.linalg.norm(h) ** 2, rel=1e-8)


def test_compression_noise_costs_power(logger):
    free = _single_user_alpha_free(gamma=2.0, seed=6)
    compressed = build_instance(K=1, cap_dl=3.0, gamma_k=2.0, seed=6)
    solver = PrimalDualSolver(logger)
    assert solver.solve_p4(compressed).objective > solver.solve_p4(free).objective


def test_p4_meets_communication_targets_with_equality(desk_instance, logger):
    solution = PrimalDualSolver(logger).solve_p4(desk_instance)
    sinr = comm_sinrs(desk_instance, solution.w, solution.q_dl)
    assert sinr == pytest.approx(desk_instance.gamma_k, rel=1e-6)


def test_identical_users_are_infeasible(logger):
    rng = np.random.default_rng(21)
    h_row = (rng.standard_normal(4) + 1j * rng.standard_normal(4)) / np.sqrt(2.0)
    instance = build_instance(h=np.vstack([h_row, h_row]), gamma_k=4.0)
    with pytest.raises(CommunicationInfeasibleError):
        PrimalDualSolver(logger).solve_p4(instance)


# ---------------------------------------------------------------------------
# Joint solve
# ---------------------------------------------------------------------------

def test_joint_solve_with_active_sensing(sensing_active_instance, logger):
    instance = sensing_active_instance
    solution = solve_jfcbd(instance, eps=1e-6, logger=logger)
    assert not solution.early_exit
    assert solution.lambda_star > 0
    assert abs(subgradient(instance, solution.w)) <= 1e-6 * instance.gamma_tilde_s
    assert check_feasibility(instance, solution, 1e-6).feasible
    assert comm_sinrs(instance, solution.w, solution.q_dl) == pytest.approx(instance.gamma_k, rel=1e-6)
    assert np.all(solution.mu_star > 0)
    assert solution.objective == pytest.approx((1 + instance.alpha) * solution.beam_power)


def test_subgradient_non_increasing_along_trace(sensing_active_instance, logger):
    solution = PrimalDualSolver(logger).solve(sensing_active_instance)
    steps = sorted((s for s in solution.trace.steps if s.status == "ok"), key=lambda s: s.lam)
    assert steps
    deltas = [s.delta for s in steps]
    scale = sensing_active_instance.gamma_tilde_s
    for previous, current in zip(deltas, deltas[1:]):
        assert current <= previous + 1e-9 * scale


def test_trace_records_beam_gain(sensing_active_instance, logger):
    trace = PrimalDualSolver(logger).solve(sensing_active_instance).trace
    assert trace.bisection_iterations == len(trace.steps) + len(trace.boundary_steps) > 0
    assert trace.inner_iterations >= trace.p4_iterations > 0
    for step in trace.steps + trace.boundary_steps:
        if step.status == "ok":
            assert step.beam_gain == pytest.approx(sensing_active_instance.gamma_tilde_s - step.delta)
    lines = trace.to_lines()
    assert lines[0].startswith("#")
    outer = sum(line.startswith(("bisection ", "boundary ")) for line in lines)
    assert outer == trace.bisection_iterations


def test_early_exit_returns_p4_solution(sensing_inactive_instance, logger):
    solver = PrimalDualSolver(logger)
    solution = solver.solve(sensing_inactive_instance)
    p4 = solver.solve_p4(sensing_inactive_instance)
    assert solution.early_exit
    assert solution.lambda_star == 0.0
    assert solution.trace.bisection_iterations == 0
    assert np.allclose(solution.w, p4.w)


def test_desk_instance_solves(desk_instance, logger):
    solution = PrimalDualSolver(logger).solve(desk_instance)
    report = check_feasibility(desk_instance, solution, 1e-6)
    assert report.feasible
    assert solution.lambda_star >= 0.0


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_desk_instances_meet_every_constraint(desk_config, logger, seed):
    instance = generate_instance(desk_config.replace(seed=seed), logger=logger)
    solution = PrimalDualSolver(logger).solve(instance)
    assert check_feasibility(instance, solution, 1e-6).feasible
    assert comm_sinrs(instance, solution.w, solution.q_dl) == pytest.approx(instance.gamma_k, rel=1e-6)
    assert abs(subgradient(instance, solution.w)) <= 1e-6 * instance.gamma_tilde_s
    assert solution.trace.bisection_iterations <= MAX_OUTER_STEPS


def test_weak_sensing_channel_certified(logger):
    # |g| = 1e-5 puts the sensing power ten orders above the communication power
    instance = build_instance(seed=4, g=np.full(2, 1e-5))
    solution = PrimalDualSolver(logger).solve(instance)
    report, _ = SdrOracle(logger).certify(instance, solution)
    assert report.passed
    assert abs(report.relative_gap) <= 1e-4


# ---------------------------------------------------------------------------
# Sensing power and the dual curve
# ---------------------------------------------------------------------------

def _p4_directions(instance):
    p4 = PrimalDualSolver().solve_p4(instance)
    return p4, mvdr_direction(instance, 0.0, p4.mu_star)


def test_sensing_power_solves_the_fixed_direction_program(sensing_active_instance):
    instance = sensing_active_instance
    _, directions = _p4_directions(instance)
    p, shortfall = sensing_power(instance, 0.0, directions)
    assert shortfall > 0

    S = power_matrix(instance, directions)
    gains = np.array([beam_gain(instance, d) for d in directions])
    program = linprog(np.ones(instance.K),
                      A_ub=-np.vstack([S, gains]),
                      b_ub=-np.append(np.full(instance.K, instance.sigma_v2), instance.gamma_tilde_s),
                      bounds=[(0, None)] * instance.K, method='highs')
    assert program.status == 0
    assert np.sum(p) == pytest.approx(program.fun, rel=1e-6)
    assert gains @ p == pytest.approx(instance.gamma_tilde_s, rel=1e-9)
    assert np.all(S @ p >= instance.sigma_v2 * (1 - 1e-9))


def test_sensing_power_keeps_tight_powers_when_sensing_is_met(sensing_inactive_instance):
    instance = sensing_inactive_instance
    _, directions = _p4_directions(instance)
    p, shortfall = sensing_power(instance, 0.0, directions)
    assert shortfall <= 0
    assert p == pytest.approx(solve_power(instance, 0.0, directions), rel=1e-12)


def test_fixed_point_system_derivatives(make_instance):
    instance = make_instance(seed=5)
    lam = 0.5 * lambda_range(instance).d1_upper
    mu = 1.3 * fixed_point_mu(instance, lam, np.zeros(instance.K), FixedPointMode.ASCENDING).mu
    residual, d_lam, d_mu = fixed_point_system(instance, lam, mu)
    f = dual_constraint_values(instance, lam, mu)
    assert residual == pytest.approx(instance.gamma_tilde_k * f - 1.0, abs=1e-12)

    h = 1e-6 * lam
    plus, minus = fixed_point_system(instance, lam + h, mu)[0], fixed_point_system(instance, lam - h, mu)[0]
    assert d_lam == pytest.approx((plus - minus) / (2 * h), rel=1e-5, abs=1e-9)
    for j in range(instance.K):
        step = np.zeros(instance.K)
        step[j] = 1e-6 * mu[j]
        plus = fixed_point_system(instance, lam, mu + step)[0]
        minus = fixed_point_system(instance, lam, mu - step)[0]
        assert d_mu[:, j] == pytest.approx((plus - minus) / (2 * step[j]), rel=1e-5, abs=1e-9)


def test_fixed_point_system_rejects_indefinite_c():
    instance = _unit_gain_instance()
    assert fixed_point_system(instance, 2.0 * lambda_range(instance).d2_lower, np.zeros(instance.K)) is None


def test_curve_reproduces_fixed_point(make_instance):
    instance = make_instance(seed=6)
    p4 = PrimalDualSolver().solve_p4(instance)
    lam = 0.5 * lambda_range(instance).d1_upper
    expected = fixed_point_mu(instance, lam, np.zeros(instance.K), FixedPointMode.ASCENDING).mu
    target = float(np.mean(expected / p4.mu_star))

    start = CurvePoint(lam=0.0, mu=p4.mu_star, s=1.0)
    point, iterations = trace_curve(instance, start, target, lambda_range(instance).d2_lower, p4.mu_star)
    assert point is not None
    assert iterations > 0
    assert point.s == target
    assert point.lam == pytest.approx(lam, rel=1e-6)
    assert point.mu == pytest.approx(expected, rel=1e-6)
