import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from core import model
from core.model import (
    DimensionError,
    RateDomainError,
    SensingThresholdError,
    Solution,
    beam_gain,
    check_feasibility,
    comm_margin,
    comm_sinr,
    comm_sinrs,
    complete_solution,
    dl_rate,
    dl_rates,
    mvdr_receive_filter,
    optimal_q_dl,
    optimal_q_ul,
    sensing_gain,
    sensing_sinr,
    transmit_covariance,
    ul_rate,
    ul_rates,
)
from core.pd_solver import PrimalDualSolver
from instances import build_instance, random_beams

seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


def _covariance_with_gain(instance, gain):
    v = instance.sensing_vector
    return gain * np.outer(v, v.conj()) / np.linalg.norm(v) ** 4


# ---------------------------------------------------------------------------
# Fronthaul rates and closed-form compression noise
# ---------------------------------------------------------------------------

def test_dl_rate_three_bits():
    assert dl_rate(np.array([[np.sqrt(7.0)]]), np.array([1.0]), 0) == pytest.approx(3.0)


def test_dl_rate_empty_antenna_is_zero():
    w = np.array([[0.0, 1.0]], dtype=complex)
    assert dl_rate(w, np.array([0.0, 1.0]), 0) == 0.0


def test_dl_rate_zero_noise_with_signal_raises():
    with pytest.raises(RateDomainError):
        dl_rate(np.array([[1.0]]), np.array([0.0]), 0)


def test_optimal_q_dl_hand_example():
    instance = build_instance(L=1, N_t=1, K=1)
    w = np.array([[np.sqrt(7.0)]], dtype=complex)
    q = optimal_q_dl(instance, w)
    assert q == pytest.approx([1.0])
    assert dl_rate(w, q, 0) == pytest.approx(3.0)


def test_optimal_q_dl_zero_beams(make_instance):
    instance = make_instance()
    assert np.all(optimal_q_dl(instance, np.zeros((instance.K, instance.N))) == 0)


def test_compression_power_accounting(make_instance):
    instance = make_instance(seed=4)
    w = random_beams(instance, np.random.default_rng(4))
    q = optimal_q_dl(instance, w)
    assert np.sum(q) == pytest.approx(instance.alpha * np.sum(np.abs(w) ** 2))
    solution = complete_solution(instance, w)
    assert solution.objective == pytest.approx((1 + instance.alpha) * solution.beam_power)


def test_optimal_q_ul_hand_example(make_instance):
    # β = 1/7, M = 4, σ_z² = 1, gain 28
    instance = make_instance(M=4, cap_ul=3.0)
    R = _covariance_with_gain(instance, 28.0)
    q = optimal_q_ul(instance, R)
    assert q == pytest.approx(np.full(4, 8 / 7))
    assert ul_rate(instance, R, q, 0) == pytest.approx(3.0)


def test_ul_rate_without_illumination(make_instance):
    instance = make_instance(M=3)
    R = np.zeros((instance.N, instance.N))
    q = optimal_q_ul(instance, R)
    assert q == pytest.approx(np.full(3, instance.beta * instance.sigma_z2))
    assert ul_rates(instance, R, q) == pytest.approx(np.full(3, 3.0))


def test_ul_rate_domain(make_instance):
    instance = make_instance()
    with pytest.raises(RateDomainError):
        ul_rate(instance, np.zeros((instance.N, instance.N)), np.zeros(instance.M), 0)


@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_substitution_identities(seed):
    instance = build_instance(seed=seed % 1000, K=2)
    w = random_beams(instance, np.random.default_rng(seed))
    q_dl = optimal_q_dl(instance, w)
    assert dl_rates(w, q_dl) == pytest.approx(np.full(instance.N, instance.cap_dl), abs=1e-9)
    R = transmit_covariance(w, q_dl)
    q_ul = optimal_q_ul(instance, R)
    assert ul_rates(instance, R, q_ul) == pytest.approx(np.full(instance.M, instance.cap_ul), abs=1e-9)


# ---------------------------------------------------------------------------
# SINRs
# ---------------------------------------------------------------------------

def test_comm_sinr_matched_filter():
    instance = build_instance(K=1, seed=2)
    h = instance.h[0]
    c = 0.7
    w = (c * h / np.linalg.norm(h))[None, :]
    expected = c ** 2 * np.linalg.norm(h) ** 2 / instance.sigma_v2
    assert comm_sinr(instance, w, np.zeros(instance.N), 0) == pytest.approx(expected)


def test_comm_sinr_orthogonal_beam_is_zero():
    instance = build_instance(K=1, seed=2)
    h = instance.h[0]
    u = np.ones(instance.N, dtype=complex)
    w = u - np.vdot(h, u) / np.vdot(h, h) * h
    assert comm_sinr(instance, w[None, :], np.zeros(instance.N), 0) == pytest.approx(0.0, abs=1e-20)


def test_comm_sinr_matches_direct_formula(make_instance):
    instance = make_instance(seed=9)
    rng = np.random.default_rng(9)
    w = random_beams(instance, rng)
    q = rng.uniform(0.0, 1.0, instance.N)
    for k in range(instance.K):
        h_k = instance.h[k]
        signal = abs(np.conj(h_k) @ w[k]) ** 2
        interference = sum(abs(np.conj(h_k) @ w[i]) ** 2 for i in range(instance.K) if i != k)
        compression = sum(q[n] * abs(h_k[n]) ** 2 for n in range(instance.N))
        assert comm_sinr(instance, w, q, k) == pytest.approx(signal / (interference + compression + 1.0))


def test_comm_sinr_rejects_negative_noise(make_instance):
    instance = make_instance()
    with pytest.raises(ValueError):
        comm_sinr(instance, np.ones((instance.K, instance.N)), -np.ones(instance.N), 0)


def test_sensing_sinr_linear_in_covariance(make_instance):
    instance = make_instance(seed=5)
    R = transmit_covariance(random_beams(instance, np.random.default_rng(5)), np.zeros(instance.N))
    q = np.full(instance.M, 0.3)
    assert sensing_sinr(instance, np.zeros_like(R), q) == 0.0
    assert sensing_sinr(instance, 2 * R, q) == pytest.approx(2 * sensing_sinr(instance, R, q))
    assert sensing_sinr(instance, R, q) == pytest.approx(sensing_gain(instance, R) / (0.3 + instance.sigma_z2))


def test_effective_sensing_threshold(make_instance):
    instance = make_instance(gamma_s=5.0)
    R = _covariance_with_gain(instance, instance.gamma_tilde_s)
    assert sensing_sinr(instance, R, optimal_q_ul(instance, R)) == pytest.approx(instance.gamma_s, rel=1e-12)


def test_mvdr_filter_maximizes_sensing_sinr(make_instance):
    instance = make_instance(seed=6)
    rng = np.random.default_rng(6)
    R = transmit_covariance(random_beams(instance, rng), np.zeros(instance.N))
    q_ul = rng.uniform(0.1, 2.0, instance.M)
    best = model._receive_filter_sinr(instance, R, q_ul, mvdr_receive_filter(instance, q_ul))
    assert best == pytest.approx(sensing_sinr(instance, R, q_ul))
    for _ in range(100):
        u = rng.standard_normal(instance.M) + 1j * rng.standard_normal(instance.M)
        assert model._receive_filter_sinr(instance, R, q_ul, u) <= best * (1 + 1e-12)


def test_sensing_threshold_at_assembly():
    with pytest.raises(SensingThresholdError):
        build_instance(M=4, cap_ul=3.0, gamma_s=28.0)


# ---------------------------------------------------------------------------
# Reduced-problem identities
# ---------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(seed=seeds, log_scale=st.floats(min_value=-2.0, max_value=2.0))
def test_constraint_equivalences(seed, log_scale):
    instance = build_instance(seed=seed % 1000, gamma_s=4.0)
    w = 10 ** log_scale * random_beams(instance, np.random.default_rng(seed))
    q_dl = optimal_q_dl(instance, w)
    R = transmit_covariance(w, q_dl)
    q_ul = optimal_q_ul(instance, R)

    sinr = comm_sinrs(instance, w, q_dl)
    margin = comm_margin(instance, w)
    for k in range(instance.K):
        if abs(sinr[k] - instance.gamma_k[k]) > 1e-9 * instance.gamma_k[k]:
            assert (sinr[k] >= instance.gamma_k[k]) == (margin[k] >= 0)

    gain = sensing_gain(instance, R)
    assert beam_gain(instance, w) == pytest.approx(gain, rel=1e-10)
    if abs(gain - instance.gamma_tilde_s) > 1e-9 * instance.gamma_tilde_s:
        assert (sensing_sinr(instance, R, q_ul) >= instance.gamma_s) == (gain >= instance.gamma_tilde_s)


def test_alpha_free_matrices_collapse():
    instance = build_instance(cap_dl=60.0, seed=8)
    assert np.allclose(instance.A_k, instance.H_k, atol=1e-15)
    v = instance.sensing_vector
    assert np.allclose(instance.B_mat, np.outer(v, v.conj()), atol=1e-15)


# ---------------------------------------------------------------------------
# Feasibility report
# ---------------------------------------------------------------------------

def test_zero_beams_are_infeasible(make_instance):
    instance = make_instance()
    report = check_feasibility(instance, complete_solution(instance, np.zeros((instance.K, instance.N))))
    assert not report.feasible
    assert np.all(report.comm_sinr_slack < 0)
    assert report.sensing_slack == pytest.approx(-instance.gamma_s)


def test_optimized_point_is_feasible(sensing_active_instance, logger):
    solution = PrimalDualSolver(logger).solve(sensing_active_instance)
    report = check_feasibility(sensing_active_instance, solution, 1e-6)
    assert report.feasible
    assert report.worst_slack >= -1e-6


def test_shrunk_beams_lose_communication_slack(sensing_active_instance, logger):
    p4 = PrimalDualSolver(logger).solve_p4(sensing_active_instance)
    before = check_feasibility(sensing_active_instance, p4).comm_sinr_slack
    after = check_feasibility(sensing_active_instance, complete_solution(sensing_active_instance, 0.5 * p4.w))
    assert np.all(after.comm_sinr_slack < before)
    assert not after.feasible


def test_zero_compression_noise_flags_rate_violation(make_instance):
    instance = make_instance()
    w = random_beams(instance, np.random.default_rng(1))
    solution = complete_solution(instance, w)
    solution.q_dl = np.zeros(instance.N)
    report = check_feasibility(instance, solution)
    assert np.all(np.isneginf(report.dl_rate_slack))
    assert not report.feasible


def test_dimension_mismatch(make_instance):
    instance = make_instance()
    solution = Solution(w=np.zeros((instance.K, instance.N + 1)), q_dl=np.zeros(instance.N),
                        q_ul=np.ones(instance.M), lambda_star=0.0, mu_star=np.zeros(instance.K), objective=0.0)
    with pytest.raises(DimensionError):
        check_feasibility(instance, solution)
