"""Semidefinite relaxation oracle: optimal-value lower bound used to certify the primal-dual solver."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional
import numpy as np
from scipy import linalg
from config.constants import CERTIFY_TOL, FEASIBILITY_TOL, SDP_MAX_ANTENNAS, SDP_MAX_USERS, SDP_TOL, SDP_MAX_ITER
from core.model import (
    FeasibilityReport,
    ProblemInstance,
    Solution,
    beam_gain,
    check_feasibility,
    complete_solution,
)
from core.pd_solver import SolverSettings
from core.sdp_ipm import BlockSdpData, InteriorPointSolver, SdpInfeasibleError, SdpNumericalError
from utils.helpers import eig_extremes, hermitian, relative_gap
from utils.logging import get_logger

__all__ = [
    'SdpProblem', 'SdpSolution', 'CertificateReport', 'SdrOracle',
    'assemble_sdp', 'constraint_values', 'embed_hermitian', 'unembed_hermitian',
    'solve_sdp', 'extract_rank_one', 'certify', 'SdpInfeasibleError', 'SdpNumericalError',
]


@dataclass(frozen=True)
class SdpProblem:
    """
    Constraint j reads Σ_i Tr(W_i·F[j, i]) ≥ rhs[j]; rows 0..K-1 are the
    communication constraints, row K the sensing constraint.
    """
    K: int
    N: int
    objective_weight: float
    constraint_matrices: np.ndarray  # (K+1) x K x N x N, Hermitian
    rhs: np.ndarray
    labels: tuple

    @property
    def n_constraints(self) -> int:
        return len(self.rhs)


@dataclass
class SdpSolution:
    W: np.ndarray                 # K x N x N Hermitian PSD
    primal_value: float           # watts
    dual_value: float             # watts
    gap: float                    # relative, in normalized units
    iterations: int
    dual_variables: np.ndarray    # one per constraint row, in the units of the unnormalized problem
    scale: float
    primal_infeasibility: float = 0.0
    dual_infeasibility: float = 0.0

    def eigen_ratios(self) -> List[float]:
        """Second over first eigenvalue of every W_k (0 means rank one)."""
        ratios = []
        for W_k in self.W:
            values = linalg.eigvalsh(hermitian(W_k))[::-1]
            ratios.append(float(values[1] / values[0]) if len(values) > 1 and values[0] > 0 else 0.0)
        return ratios


@dataclass
class CertificateReport:
    pd_objective: float
    sdp_value: float
    relative_gap: float
    sdp_gap: float
    feasibility: FeasibilityReport
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.feasibility.feasible and abs(self.relative_gap) <= self.tolerance)

    def to_dict(self) -> Dict:
        return {
            'passed': self.passed,
            'tolerance': float(self.tolerance),
            'pd_objective_w': float(self.pd_objective),
            'sdp_value_w': float(self.sdp_value),
            'relative_gap': float(self.relative_gap),
            'sdp_duality_gap': float(self.sdp_gap),
            'pd_feasible': self.feasibility.feasible,
        }


# ---------------------------------------------------------------------------
# Assembly and real embedding
# ---------------------------------------------------------------------------

def assemble_sdp(instance: ProblemInstance) -> SdpProblem:
    """Communication rows Γ̃_k·Tr(W_kH_k) - Σ_i Tr(W_iA_k) ≥ σ_v² and the sensing row Σ_i Tr(W_iB) ≥ Γ̃_s."""
    K, N = instance.K, instance.N
    F = np.zeros((K + 1, K, N, N), dtype=complex)
    for k in range(K):
        for i in range(K):
            F[k, i] = -instance.A_k[k]
        F[k, k] = hermitian(instance.gamma_tilde_k[k] * instance.H_k[k] - instance.A_k[k])
    for i in range(K):
        F[K, i] = instance.B_mat
    rhs = np.concatenate([np.full(K, instance.sigma_v2), [instance.gamma_tilde_s]])
    labels = tuple([f"comm_{k}" for k in range(K)] + ["sensing"])
    return SdpProblem(K=K, N=N, objective_weight=1.0 + instance.alpha,
                      constraint_matrices=F, rhs=rhs, labels=labels)


def constraint_values(problem: SdpProblem, W: np.ndarray) -> np.ndarray:
    """Left-hand sides Σ_i Tr(W_i·F[j, i]) of every constraint row."""
    return np.real(np.einsum('jinm,imn->j', problem.constraint_matrices, W))


def embed_hermitian(matrix: np.ndarray) -> np.ndarray:
    """Real symmetric [[Re, -Im], [Im, Re]] of a Hermitian matrix; Tr(AB) = ½·Tr(embed(A)·embed(B))."""
    re, im = np.real(matrix), np.imag(matrix)
    return np.block([[re, -im], [im, re]])


def unembed_hermitian(block: np.ndarray) -> np.ndarray:
    """Hermitian matrix recovered from a real symmetric 2N x 2N block."""
    n = block.shape[0] // 2
    x11, x12, x21, x22 = block[:n, :n], block[:n, n:], block[n:, :n], block[n:, n:]
    return hermitian(0.5 * (x11 + x22) + 0.5j * (x21 - x12))


def _variable_scale(problem: SdpProblem) -> float:
    # Largest single-row lower bound on Σ Tr(W_i)
    bounds = []
    for j in range(problem.n_constraints):
        if problem.rhs[j] <= 0:
            continue
        top = max(eig_extremes(problem.constraint_matrices[j, i])[1] for i in range(problem.K))
        if top <= 0:
            raise SdpInfeasibleError(f"constraint '{problem.labels[j]}' cannot be met by any PSD point")
        bounds.append(problem.rhs[j] / top)
    if not bounds:
        raise ValueError("every constraint has a nonpositive right-hand side; the optimum is W = 0")
    return float(max(bounds))


def _row_divisors(problem: SdpProblem, scale: float) -> np.ndarray:
    # ½·scale·max_i ‖F[j, i]‖₂, so every normalized block has spectral norm at most one
    norms = np.array([max(np.linalg.norm(problem.constraint_matrices[j, i], 2) for i in range(problem.K))
                      for j in range(problem.n_constraints)])
    if np.any(norms <= 0):
        raise ValueError("constraint rows must not be identically zero")
    return 0.5 * scale * norms


def _normalized_data(problem: SdpProblem, scale: float, divisors: np.ndarray) -> BlockSdpData:
    dim = 2 * problem.N
    a = [[embed_hermitian(problem.constraint_matrices[j, i]) * (0.5 * scale / divisors[j])
          for i in range(problem.K)] for j in range(problem.n_constraints)]
    m = problem.n_constraints
    return BlockSdpData(
        c=[np.eye(dim) for _ in range(problem.K)],
        a=a,
        b=problem.rhs / divisors,
        lp_c=np.zeros(m),
        lp_a=-np.eye(m),
    )


def solve_sdp(
    problem: SdpProblem,
    tol: float = SDP_TOL,
    logger: Optional[logging.Logger] = None,
    max_iter: int = SDP_MAX_ITER,
) -> SdpSolution:
    """
    Solve the relaxation with the interior-point core.

    Variables are rescaled by the largest single-row power bound and every
    row is divided by its largest block spectral norm before solving.

    Raises:
        ValueError: Outside the desk-scale envelope (N ≤ 16, K ≤ 4)
        SdpInfeasibleError: If the relaxation is infeasible
        SdpNumericalError: If the interior-point method fails to converge
    """
    logger = get_logger(logger)
    if problem.N > SDP_MAX_ANTENNAS or problem.K > SDP_MAX_USERS:
        raise ValueError(f"SDP oracle supports N ≤ {SDP_MAX_ANTENNAS} and K ≤ {SDP_MAX_USERS}, "
                         f"got N={problem.N}, K={problem.K}")

    scale = _variable_scale(problem)
    divisors = _row_divisors(problem, scale)
    data = _normalized_data(problem, scale, divisors)
    result = InteriorPointSolver(logger, tol=tol, max_iter=max_iter).solve(data)

    # Tr(W) = ½·Tr(X) and X = scale·X̃, so one normalized unit is ½·weight·scale watts
    unit = 0.5 * problem.objective_weight * scale
    W = np.array([unembed_hermitian(scale * X_b) for X_b in result.iterate.X])
    duals = unit * result.iterate.y / divisors
    solution = SdpSolution(
        W=W,
        primal_value=unit * result.primal_value,
        dual_value=unit * result.dual_value,
        gap=abs(result.primal_value - result.dual_value) / max(1.0, abs(result.primal_value)),
        iterations=result.iterations,
        dual_variables=duals,
        scale=scale,
        primal_infeasibility=result.primal_infeasibility,
        dual_infeasibility=result.dual_infeasibility,
    )
    logger.debug(f"SDP solved in {result.iterations} iterations: value {solution.primal_value:.6e} W, "
                 f"gap {solution.gap:.2e}")
    return solution


# ---------------------------------------------------------------------------
# Diagnostics and certificate
# ---------------------------------------------------------------------------

def extract_rank_one(instance: ProblemInstance, sdp_solution: SdpSolution, tol: float = FEASIBILITY_TOL):
    """
    Principal-eigenvector beamformers, power rescaled by max{1, Γ̃_s/Σ wᴴBw}.

    Returns:
        (Solution, FeasibilityReport) for the extracted point
    """
    w = np.zeros((instance.K, instance.N), dtype=complex)
    for k, W_k in enumerate(sdp_solution.W):
        values, vectors = linalg.eigh(hermitian(W_k))
        w[k] = np.sqrt(max(values[-1], 0.0)) * vectors[:, -1]
    gain = beam_gain(instance, w)
    gamma = max(1.0, instance.gamma_tilde_s / gain) if gain > 0 else 1.0
    solution = complete_solution(instance, np.sqrt(gamma) * w, method='sdr', scale_factor=gamma)
    return solution, check_feasibility(instance, solution, tol)


def certify(
    instance: ProblemInstance,
    pd_solution: Solution,
    sdp_solution: SdpSolution,
    tol: float = CERTIFY_TOL,
    logger: Optional[logging.Logger] = None,
) -> CertificateReport:
    """Compare a feasible rank-one point against the relaxation's optimal value."""
    logger = get_logger(logger)
    feasibility = check_feasibility(instance, pd_solution, FEASIBILITY_TOL, logger)
    gap = relative_gap(pd_solution.objective, sdp_solution.primal_value)
    report = CertificateReport(
        pd_objective=pd_solution.objective,
        sdp_value=sdp_solution.primal_value,
        relative_gap=gap,
        sdp_gap=sdp_solution.gap,
        feasibility=feasibility,
        tolerance=tol,
    )
    if report.passed:
        logger.info(f"Certificate passed: relative gap {gap:.2e}")
    else:
        logger.warning(f"Certificate failed: relative gap {gap:.2e}, PD point feasible={feasibility.feasible}")
    return report


class SdrOracle:
    """Desk-scale reference solver built on the semidefinite relaxation."""

    def __init__(self, logger: Optional[logging.Logger] = None, settings: Optional[SolverSettings] = None):
        self.logger = get_logger(logger)
        self.settings = settings or SolverSettings()

    def solve(self, instance: ProblemInstance) -> SdpSolution:
        problem = assemble_sdp(instance)
        return solve_sdp(problem, tol=self.settings.sdp_tol, logger=self.logger,
                         max_iter=self.settings.sdp_max_iter)

    def certify(self, instance: ProblemInstance, pd_solution: Solution, tol: float = CERTIFY_TOL):
        """Solve the relaxation and certify `pd_solution` against it."""
        sdp = self.solve(instance)
        return certify(instance, pd_solution, sdp, tol, self.logger), sdp
