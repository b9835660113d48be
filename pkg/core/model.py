"""Immutable optimization data and evaluators for the joint compression/beamforming problem.

Conventions:
    * beamformers are a K x N complex array, row k is w_k;
    * rates are in bit per channel use (bit/s divided by the bandwidth);
    * all powers are in watts.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional
import numpy as np
from config.constants import SOLUTION_FORMAT_VERSION
from utils.file_io import decode_complex, encode_complex
from utils.helpers import freeze, hermitian, batch_quad_form, watt_to_dbm
from utils.logging import get_logger

if TYPE_CHECKING:
    from core.pd_solver import SolveTrace


class SensingThresholdError(ValueError):
    """Raised when the sensing target makes the effective threshold undefined (Γ_s·β ≥ M)."""


class DimensionError(ValueError):
    """Raised when solution arrays do not match the instance dimensions."""


class RateDomainError(ValueError):
    """Raised when a fronthaul rate is evaluated outside its domain."""


@dataclass(frozen=True)
class ProblemInstance:
    L: int
    N_t: int
    N: int
    M: int
    K: int
    h: np.ndarray            # K x N
    g: np.ndarray            # L
    a_t: np.ndarray          # N, L unit-norm blocks
    a_r: np.ndarray          # M, unit norm
    Sigma_g: np.ndarray      # N x N
    sigma_v2: float
    sigma_z2: float
    alpha: float
    beta: float
    cap_dl: float            # C_dl / bandwidth, bit/use
    cap_ul: float            # C_ul / bandwidth, bit/use
    bandwidth: float
    gamma_k: np.ndarray      # K, linear
    gamma_tilde_k: np.ndarray
    gamma_s: float
    gamma_tilde_s: float
    H_k: np.ndarray          # K x N x N
    A_k: np.ndarray          # K x N x N
    B_mat: np.ndarray        # N x N
    sensing_vector: np.ndarray  # Σ_gᴴ a_t, so that a_tᴴΣ_g R Σ_gᴴa_t = vᴴ R v

    @property
    def g_power(self) -> np.ndarray:
        return np.abs(self.g) ** 2


def assemble_instance(
    L: int,
    N_t: int,
    M: int,
    h: np.ndarray,
    g: np.ndarray,
    a_t: np.ndarray,
    a_r: np.ndarray,
    sigma_v2: float,
    sigma_z2: float,
    cap_dl: float,
    cap_ul: float,
    gamma_k: np.ndarray,
    gamma_s: float,
    bandwidth: float = 1.0,
) -> ProblemInstance:
    """Derive every constant and matrix of the reduced problem from raw channel data.

    Args:
        cap_dl, cap_ul: fronthaul capacities in bit per channel use.
        gamma_k: linear communication SINR targets (length K).
        gamma_s: linear sensing SINR target.

    Raises:
        SensingThresholdError: if M - Γ_s·β ≤ 0.
        ValueError: on inconsistent shapes or non-positive constants.
    """
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    K, N = h.shape
    if N != L * N_t:
        raise ValueError(f"channel length {N} does not match L*N_t = {L * N_t}")
    g = np.asarray(g, dtype=complex).reshape(-1)
    if g.shape != (L,):
        raise ValueError(f"expected {L} sensing path gains, got {g.shape[0]}")
    a_t = np.asarray(a_t, dtype=complex).reshape(-1)
    a_r = np.asarray(a_r, dtype=complex).reshape(-1)
    if a_t.shape != (N,) or a_r.shape != (M,):
        raise ValueError("steering vector dimensions do not match N and M")
    if sigma_v2 <= 0 or sigma_z2 <= 0:
        raise ValueError("noise powers must be positive")
    if cap_dl <= 0 or cap_ul <= 0:
        raise ValueError("fronthaul capacities must be positive")

    gamma_k = np.broadcast_to(np.asarray(gamma_k, dtype=float), (K,)).copy()
    if np.any(gamma_k <= 0) or gamma_s < 0:
        raise ValueError("SINR targets must be positive")

    alpha = 1.0 / (2.0 ** cap_dl - 1.0)
    beta = 1.0 / (2.0 ** cap_ul - 1.0)

    if M - gamma_s * beta <= 0:
        raise SensingThresholdError(
            f"sensing target too strict for the UL fronthaul: Γ_s·β = {gamma_s * beta:.4g} ≥ M = {M}"
        )
    gamma_tilde_s = M * gamma_s * (1.0 + beta) * sigma_z2 / (M - gamma_s * beta)
    gamma_tilde_k = 1.0 + 1.0 / gamma_k

    Sigma_g = np.diag(np.repeat(g, N_t))
    sensing_vector = Sigma_g.conj().T @ a_t

    H_k = np.einsum('ki,kj->kij', h, h.conj())
    diag_H = np.zeros_like(H_k)
    idx = np.arange(N)
    diag_H[:, idx, idx] = np.abs(h) ** 2
    A_k = H_k + alpha * diag_H

    B_mat = hermitian(
        np.outer(sensing_vector, sensing_vector.conj())
        + (alpha / N_t) * Sigma_g.conj().T @ Sigma_g
    )

    return ProblemInstance(
        L=L, N_t=N_t, N=N, M=M, K=K,
        h=freeze(h), g=freeze(g), a_t=freeze(a_t), a_r=freeze(a_r),
        Sigma_g=freeze(Sigma_g),
        sigma_v2=float(sigma_v2), sigma_z2=float(sigma_z2),
        alpha=float(alpha), beta=float(beta),
        cap_dl=float(cap_dl), cap_ul=float(cap_ul), bandwidth=float(bandwidth),
        gamma_k=freeze(gamma_k), gamma_tilde_k=freeze(gamma_tilde_k),
        gamma_s=float(gamma_s), gamma_tilde_s=float(gamma_tilde_s),
        H_k=freeze(H_k), A_k=freeze(A_k), B_mat=freeze(B_mat),
        sensing_vector=freeze(sensing_vector),
    )


@dataclass
class Solution:
    w: np.ndarray
    q_dl: np.ndarray
    q_ul: np.ndarray
    lambda_star: float
    mu_star: np.ndarray
    objective: float
    trace: Optional["SolveTrace"] = None
    method: str = "pd"
    early_exit: bool = False
    scale_factor: Optional[float] = None

    @property
    def beam_power(self) -> float:
        return float(np.sum(np.abs(self.w) ** 2))


@dataclass
class FeasibilityReport:
    comm_sinr_slack: np.ndarray
    sensing_slack: float
    dl_rate_slack: np.ndarray
    ul_rate_slack: np.ndarray
    tolerance: float
    feasible: bool = field(init=False)

    def __post_init__(self):
        self.feasible = bool(
            np.all(self.comm_sinr_slack >= -self.tolerance)
            and self.sensing_slack >= -self.tolerance
            and np.all(self.dl_rate_slack >= -self.tolerance)
            and np.all(self.ul_rate_slack >= -self.tolerance)
        )

    @property
    def worst_slack(self) -> float:
        return float(min(
            np.min(self.comm_sinr_slack),
            self.sensing_slack,
            np.min(self.dl_rate_slack),
            np.min(self.ul_rate_slack),
        ))

    def to_dict(self) -> Dict:
        return {
            'feasible': self.feasible,
            'tolerance': float(self.tolerance),
            'worst_slack': self.worst_slack,
            'comm_sinr_slack': [float(x) for x in self.comm_sinr_slack],
            'sensing_slack': float(self.sensing_slack),
            'dl_rate_slack': [float(x) for x in self.dl_rate_slack],
            'ul_rate_slack': [float(x) for x in self.ul_rate_slack],
        }


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------

def transmit_covariance(w: np.ndarray, q_dl: np.ndarray) -> np.ndarray:
    """R = Σ_k w_k w_kᴴ + diag(q_dl)."""
    w = np.atleast_2d(w)
    return hermitian(w.T @ w.conj() + np.diag(np.asarray(q_dl, dtype=float)))


def comm_sinr(instance: ProblemInstance, w: np.ndarray, q_dl: np.ndarray, k: int) -> float:
    """Communication SINR of user k with DL compression noise q_dl."""
    w = np.atleast_2d(w)
    q_dl = np.asarray(q_dl, dtype=float)
    if np.any(q_dl < 0):
        raise ValueError("compression noise powers must be nonnegative")
    h_k = instance.h[k]
    gains = np.abs(w.conj() @ h_k) ** 2
    noise = float(np.sum(q_dl * np.abs(h_k) ** 2)) + instance.sigma_v2
    return float(gains[k] / (np.sum(gains) - gains[k] + noise))


def comm_sinrs(instance: ProblemInstance, w: np.ndarray, q_dl: np.ndarray) -> np.ndarray:
    """All K communication SINRs."""
    return np.array([comm_sinr(instance, w, q_dl, k) for k in range(instance.K)])


def antenna_signal_power(w: np.ndarray) -> np.ndarray:
    """Per-antenna signal power Σ_k |w_k[n]|²."""
    return np.sum(np.abs(np.atleast_2d(w)) ** 2, axis=0)


def dl_rate(w: np.ndarray, q_dl: np.ndarray, n: int) -> float:
    """DL fronthaul rate of antenna n in bit/use; an antenna carrying no signal has rate 0."""
    signal = float(antenna_signal_power(w)[n])
    q = float(np.asarray(q_dl, dtype=float)[n])
    if signal == 0.0:
        return 0.0
    if q <= 0.0:
        raise RateDomainError(f"antenna {n} carries signal power {signal:.3e} with zero compression noise")
    return float(np.log2(1.0 + signal / q))


def dl_rates(w: np.ndarray, q_dl: np.ndarray) -> np.ndarray:
    return np.array([dl_rate(w, q_dl, n) for n in range(np.atleast_2d(w).shape[1])])


def sensing_gain(instance: ProblemInstance, R: np.ndarray) -> float:
    """Beam gain toward the target a_tᴴ Σ_g R Σ_gᴴ a_t."""
    v = instance.sensing_vector
    return float(np.real(np.vdot(v, R @ v)))


def ul_rate(instance: ProblemInstance, R: np.ndarray, q_ul: np.ndarray, m: int) -> float:
    """UL fronthaul rate of RX antenna m in bit/use."""
    q = float(np.asarray(q_ul, dtype=float)[m])
    if q <= 0.0:
        raise RateDomainError(f"UL compression noise of antenna {m} must be positive, got {q}")
    M = instance.M
    return float(np.log2(1.0 + (sensing_gain(instance, R) + M * instance.sigma_z2) / (M * q)))


def ul_rates(instance: ProblemInstance, R: np.ndarray, q_ul: np.ndarray) -> np.ndarray:
    return np.array([ul_rate(instance, R, q_ul, m) for m in range(instance.M)])


def mvdr_receive_filter(instance: ProblemInstance, q_ul: np.ndarray) -> np.ndarray:
    """MVDR receive filter u* = (Q_ul + σ_z² I)⁻¹ a_r."""
    return instance.a_r / (np.asarray(q_ul, dtype=float) + instance.sigma_z2)


def _receive_filter_sinr(instance: ProblemInstance, R: np.ndarray, q_ul: np.ndarray, u: np.ndarray) -> float:
    # Sensing SINR for an arbitrary receive filter u; only the MVDR choice is public.
    G = np.outer(instance.a_r, instance.sensing_vector.conj())
    num = float(np.real(np.vdot(u, G @ R @ G.conj().T @ u)))
    den = float(np.real(np.vdot(u, (np.asarray(q_ul, dtype=float) + instance.sigma_z2) * u)))
    return num / den


def sensing_sinr(instance: ProblemInstance, R: np.ndarray, q_ul: np.ndarray) -> float:
    """Sensing SINR after the MVDR receive filter."""
    q_ul = np.asarray(q_ul, dtype=float)
    if np.any(q_ul < 0):
        raise ValueError("compression noise powers must be nonnegative")
    a_r = instance.a_r
    array_gain = float(np.real(np.vdot(a_r, a_r / (q_ul + instance.sigma_z2))))
    return sensing_gain(instance, R) * array_gain


def optimal_q_ul(instance: ProblemInstance, R: np.ndarray) -> np.ndarray:
    """UL compression noise that makes every UL fronthaul constraint tight."""
    level = instance.beta / instance.M * sensing_gain(instance, R) + instance.beta * instance.sigma_z2
    return np.full(instance.M, level)


def optimal_q_dl(instance: ProblemInstance, w: np.ndarray) -> np.ndarray:
    """DL compression noise q_n = α·Σ_k |w_k[n]|²."""
    return instance.alpha * antenna_signal_power(w)


def comm_margin(instance: ProblemInstance, w: np.ndarray) -> np.ndarray:
    """Γ̃_k·w_kᴴH_kw_k - Σ_i w_iᴴA_kw_i - σ_v² per user (≥ 0 ⇔ SINR_k ≥ Γ_k with closed-form q_dl)."""
    w = np.atleast_2d(w)
    margins = np.empty(instance.K)
    for k in range(instance.K):
        own = float(np.abs(np.vdot(instance.h[k], w[k])) ** 2)
        spread = float(np.sum(batch_quad_form(instance.A_k[k], w)))
        margins[k] = instance.gamma_tilde_k[k] * own - spread - instance.sigma_v2
    return margins


def beam_gain(instance: ProblemInstance, w: np.ndarray) -> float:
    """Σ_k w_kᴴ B w_k."""
    return float(np.sum(batch_quad_form(instance.B_mat, np.atleast_2d(w))))


def complete_solution(
    instance: ProblemInstance,
    w: np.ndarray,
    lambda_star: float = 0.0,
    mu_star: Optional[np.ndarray] = None,
    trace: Optional["SolveTrace"] = None,
    method: str = "pd",
    early_exit: bool = False,
    scale_factor: Optional[float] = None,
) -> Solution:
    """Attach closed-form compression noise and the objective Tr(R) to a set of beamformers."""
    w = np.atleast_2d(np.asarray(w, dtype=complex))
    q_dl = optimal_q_dl(instance, w)
    R = transmit_covariance(w, q_dl)
    q_ul = optimal_q_ul(instance, R)
    objective = float(np.real(np.trace(R)))
    if mu_star is None:
        mu_star = np.zeros(instance.K)
    return Solution(
        w=w, q_dl=q_dl, q_ul=q_ul,
        lambda_star=float(lambda_star), mu_star=np.asarray(mu_star, dtype=float),
        objective=objective, trace=trace, method=method,
        early_exit=early_exit, scale_factor=scale_factor,
    )


def _check_dimensions(instance: ProblemInstance, solution: Solution) -> None:
    problems: List[str] = []
    if np.atleast_2d(solution.w).shape != (instance.K, instance.N):
        problems.append(f"w has shape {np.shape(solution.w)}, expected ({instance.K}, {instance.N})")
    if np.shape(solution.q_dl) != (instance.N,):
        problems.append(f"q_dl has shape {np.shape(solution.q_dl)}, expected ({instance.N},)")
    if np.shape(solution.q_ul) != (instance.M,):
        problems.append(f"q_ul has shape {np.shape(solution.q_ul)}, expected ({instance.M},)")
    if problems:
        raise DimensionError("; ".join(problems))


def check_feasibility(
    instance: ProblemInstance,
    solution: Solution,
    tol: float = 1e-6,
    logger: Optional[logging.Logger] = None,
) -> FeasibilityReport:
    """Slack of every constraint family of the original problem at `solution`."""
    logger = get_logger(logger)
    _check_dimensions(instance, solution)

    w = np.atleast_2d(solution.w)
    q_dl = np.asarray(solution.q_dl, dtype=float)
    q_ul = np.asarray(solution.q_ul, dtype=float)
    R = transmit_covariance(w, q_dl)

    comm_slack = comm_sinrs(instance, w, np.maximum(q_dl, 0.0)) - instance.gamma_k
    sens_slack = sensing_sinr(instance, R, np.maximum(q_ul, 0.0)) - instance.gamma_s

    dl_slack = np.empty(instance.N)
    for n in range(instance.N):
        try:
            dl_slack[n] = instance.cap_dl - dl_rate(w, q_dl, n)
        except RateDomainError as e:
            logger.debug(str(e))
            dl_slack[n] = -np.inf

    ul_slack = np.empty(instance.M)
    for m in range(instance.M):
        try:
            ul_slack[m] = instance.cap_ul - ul_rate(instance, R, q_ul, m)
        except RateDomainError as e:
            logger.debug(str(e))
            ul_slack[m] = -np.inf

    report = FeasibilityReport(
        comm_sinr_slack=comm_slack,
        sensing_slack=float(sens_slack),
        dl_rate_slack=dl_slack,
        ul_rate_slack=ul_slack,
        tolerance=tol,
    )
    logger.debug(f"Feasibility check: feasible={report.feasible}, worst slack {report.worst_slack:.3e}")
    return report


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def solution_to_record(solution: Solution, metadata: Optional[Dict] = None, sdp=None) -> Dict:
    """
    Plain-data record of a solution for the YAML solution file.

    Complex entries are [re, im] pairs. An optional `sdp` section carries the
    relaxation matrices. No wall-clock values are stored.
    """
    record: Dict = {'format_version': SOLUTION_FORMAT_VERSION}
    record.update(metadata or {})
    record.update({
        'method': solution.method,
        'objective_w': float(solution.objective),
        'objective_dbm': float(watt_to_dbm(solution.objective)) if solution.objective > 0 else None,
        'lambda_star': float(solution.lambda_star),
        'early_exit': bool(solution.early_exit),
        'scale_factor': None if solution.scale_factor is None else float(solution.scale_factor),
        'mu_star': [float(x) for x in solution.mu_star],
        'q_dl': [float(x) for x in solution.q_dl],
        'q_ul': [float(x) for x in solution.q_ul],
        'w': encode_complex(solution.w),
    })
    if solution.trace is not None:
        record['bisection_iterations'] = solution.trace.bisection_iterations
        record['inner_iterations'] = solution.trace.inner_iterations
    if sdp is not None:
        record['sdp'] = {
            'primal_value_w': float(sdp.primal_value),
            'dual_value_w': float(sdp.dual_value),
            'gap': float(sdp.gap),
            'iterations': int(sdp.iterations),
            'W': encode_complex(sdp.W),
        }
    return record


def solution_from_record(record: Dict) -> Solution:
    """Rebuild a Solution (without trace) from a solution file record."""
    version = record.get('format_version')
    if version != SOLUTION_FORMAT_VERSION:
        raise ValueError(f"unsupported solution format version {version!r}")
    return Solution(
        w=decode_complex(record['w']),
        q_dl=np.asarray(record['q_dl'], dtype=float),
        q_ul=np.asarray(record['q_ul'], dtype=float),
        lambda_star=float(record['lambda_star']),
        mu_star=np.asarray(record['mu_star'], dtype=float),
        objective=float(record['objective_w']),
        method=record.get('method', 'pd'),
        early_exit=bool(record.get('early_exit', False)),
        scale_factor=record.get('scale_factor'),
    )
