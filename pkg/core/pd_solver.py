"""Primal-dual solver: fixed-point dual iteration with MVDR directions and closed-form powers, nested in a bisection on the sensing dual variable λ."""
import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple
import numpy as np
from scipy import linalg
from config.constants import (
    FIXED_POINT_TOL,
    FIXED_POINT_MAX_ITER,
    START_DOUBLING_CAP,
    MU_DIVERGENCE_FACTOR,
    BISECTION_TOL,
    BRACKET_REL_WIDTH,
    BOUNDARY_HANDOFF_WIDTH,
    BOUNDARY_REL_WIDTH,
    CURVE_TOL,
    CURVE_STALL_TOL,
    CURVE_NEWTON_MAX_ITER,
    CURVE_MAX_SOLVES,
    SDP_TOL,
    SDP_MAX_ITER,
)
from core.model import ProblemInstance, Solution, beam_gain, complete_solution
from utils.helpers import batch_quad_form, eig_extremes, hermitian, try_cholesky
from utils.logging import get_logger

# Outer steps (λ bisection plus the dual-curve search) share this budget
MAX_OUTER_STEPS = 50


class CommunicationInfeasibleError(RuntimeError):
    """Raised when the communication-only problem has no solution (dual iterates diverge)."""


class FixedPointError(RuntimeError):
    """Raised when the fixed-point iteration exceeds its iteration cap."""


class PowerAllocationError(RuntimeError):
    """Raised when the power system S·p = σ_v²·1 is singular or yields a negative power."""


class BisectionError(RuntimeError):
    """Raised when neither the λ bracket nor the dual-curve search yields a sensing-feasible design."""

    def __init__(self, message: str, trace: "SolveTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SolverSettings:
    fixed_point_tol: float = FIXED_POINT_TOL
    fixed_point_max_iter: int = FIXED_POINT_MAX_ITER
    start_doubling_cap: int = START_DOUBLING_CAP
    mu_divergence_factor: float = MU_DIVERGENCE_FACTOR
    bisection_tol: float = BISECTION_TOL
    bracket_rel_width: float = BRACKET_REL_WIDTH
    boundary_handoff_width: float = BOUNDARY_HANDOFF_WIDTH
    boundary_rel_width: float = BOUNDARY_REL_WIDTH
    curve_tol: float = CURVE_TOL
    curve_stall_tol: float = CURVE_STALL_TOL
    curve_newton_max_iter: int = CURVE_NEWTON_MAX_ITER
    curve_max_solves: int = CURVE_MAX_SOLVES
    sdp_tol: float = SDP_TOL
    sdp_max_iter: int = SDP_MAX_ITER

    def with_bisection_tol(self, tol: Optional[float]) -> "SolverSettings":
        return self if tol is None else replace(self, bisection_tol=float(tol))


# ---------------------------------------------------------------------------
# λ-range case analysis
# ---------------------------------------------------------------------------

class LambdaCase(Enum):
    PSD = "psd"                # I - λB ⪰ 0
    NSD = "nsd"                # I - λB ⪯ 0
    INDEFINITE = "indefinite"


@dataclass(frozen=True)
class LambdaRange:
    d1_upper: float
    d2_lower: float


def lambda_range(instance: ProblemInstance) -> LambdaRange:
    """Endpoints N_t/((α+N)·max|g|²) and N_t/(α·min|g|²) of the sufficient PSD/NSD intervals."""
    g_power = instance.g_power
    d1_upper = instance.N_t / ((instance.alpha + instance.N) * float(np.max(g_power)))
    d2_lower = instance.N_t / (instance.alpha * float(np.min(g_power)))
    return LambdaRange(d1_upper=d1_upper, d2_lower=d2_lower)


def classify_lambda(
    instance: ProblemInstance,
    lam: float,
    verify: bool = True,
    logger: Optional[logging.Logger] = None,
) -> Tuple[LambdaCase, LambdaRange]:
    """
    Place λ in one of the three ranges of the case analysis.

    With verify=True the label is cross-checked against the eigenvalues of
    I - λB; a disagreement is logged as a warning.

    Raises:
        ValueError: If λ is negative
    """
    if lam < 0:
        raise ValueError(f"λ must be nonnegative, got {lam}")
    bounds = lambda_range(instance)
    if lam <= bounds.d1_upper:
        case = LambdaCase.PSD
    elif lam >= bounds.d2_lower:
        case = LambdaCase.NSD
    else:
        case = LambdaCase.INDEFINITE

    if verify and case is not LambdaCase.INDEFINITE:
        low, high = eig_extremes(np.eye(instance.N) - lam * instance.B_mat)
        tol = 1e-10
        if case is LambdaCase.PSD and low < -tol:
            get_logger(logger).warning(f"λ={lam:.6e} labeled PSD but I-λB has eigenvalue {low:.3e}")
        if case is LambdaCase.NSD and high > tol:
            get_logger(logger).warning(f"λ={lam:.6e} labeled NSD but I-λB has eigenvalue {high:.3e}")
    return case, bounds


@dataclass
class DualState:
    lam: float
    mu: np.ndarray
    case_label: LambdaCase
    C_matrix: np.ndarray

    @property
    def accepted(self) -> bool:
        return try_cholesky(self.C_matrix) is not None


def c_matrix(instance: ProblemInstance, lam: float, mu: np.ndarray) -> np.ndarray:
    """C(λ, μ) = I - λB + Σ_i μ_i A_i."""
    return hermitian(
        np.eye(instance.N) - lam * instance.B_mat + np.einsum('k,kij->ij', np.asarray(mu, dtype=float), instance.A_k)
    )


def dual_state(instance: ProblemInstance, lam: float, mu: np.ndarray) -> DualState:
    case, _ = classify_lambda(instance, lam, verify=False)
    return DualState(lam=float(lam), mu=np.asarray(mu, dtype=float), case_label=case,
                     C_matrix=c_matrix(instance, lam, mu))


def _inverse_quadratic(instance: ProblemInstance, factor) -> np.ndarray:
    # h_kᴴ C⁻¹ h_k for every user
    solved = linalg.cho_solve(factor, instance.h.T, check_finite=False)
    return np.real(np.einsum('kn,nk->k', instance.h.conj(), solved))


def dual_constraint_values(instance: ProblemInstance, lam: float, mu: np.ndarray) -> Optional[np.ndarray]:
    """f_k(λ, μ) = μ_k·h_kᴴC⁻¹h_k, or None when C(λ, μ) is not positive definite."""
    factor = try_cholesky(c_matrix(instance, lam, mu))
    if factor is None:
        return None
    return np.asarray(mu, dtype=float) * _inverse_quadratic(instance, factor)


# ---------------------------------------------------------------------------
# Fixed-point iteration on μ
# ---------------------------------------------------------------------------

class FixedPointMode(Enum):
    ASCENDING = "ascending"
    DESCENDING = "descending"


class FixedPointStatus(Enum):
    CONVERGED = "converged"
    DUAL_INFEASIBLE = "dual_infeasible"
    DIVERGED = "diverged"


@dataclass
class FixedPointResult:
    mu: np.ndarray
    status: FixedPointStatus
    mode: FixedPointMode
    iterations: int
    residuals: List[float] = field(default_factory=list)
    iterates: List[np.ndarray] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status is FixedPointStatus.CONVERGED


def _mu_reference(instance: ProblemInstance) -> float:
    # Scale of the first ascending iterate from μ = 0, where C = I
    return float(np.max(1.0 / (instance.gamma_tilde_k * np.sum(np.abs(instance.h) ** 2, axis=1))))


def fixed_point_mu(
    instance: ProblemInstance,
    lam: float,
    mu0: np.ndarray,
    mode: FixedPointMode = FixedPointMode.DESCENDING,
    eps: float = FIXED_POINT_TOL,
    settings: Optional[SolverSettings] = None,
    logger: Optional[logging.Logger] = None,
) -> FixedPointResult:
    """
    Iterate μ_k ← 1/(Γ̃_k·h_kᴴC⁻¹(λ,μ)h_k) from a mode-consistent start.

    Ascending starts need f_k(λ,μ⁰) ≤ 1/Γ̃_k, descending starts f_k(λ,μ⁰) ≥ 1/Γ̃_k;
    both need C(λ,μ⁰) ≻ 0. A Cholesky failure at any iterate ends the iteration
    with DUAL_INFEASIBLE; ascending iterates beyond the divergence cap end it with
    DIVERGED.

    Raises:
        ValueError: If mu0 violates the start condition of the mode
        FixedPointError: If the iteration cap is reached
    """
    logger = get_logger(logger)
    settings = settings or SolverSettings()
    mu = np.array(mu0, dtype=float)
    if mu.shape != (instance.K,) or np.any(mu < 0):
        raise ValueError(f"μ⁰ must be {instance.K} nonnegative values")

    result = FixedPointResult(mu=mu, status=FixedPointStatus.CONVERGED, mode=mode, iterations=0,
                              iterates=[mu.copy()])
    factor = try_cholesky(c_matrix(instance, lam, mu))
    if factor is None:
        result.status = FixedPointStatus.DUAL_INFEASIBLE
        return result

    targets = 1.0 / instance.gamma_tilde_k
    f = mu * _inverse_quadratic(instance, factor)
    slack = eps * targets
    if mode is FixedPointMode.ASCENDING and np.any(f > targets + slack):
        raise ValueError("ascending start must satisfy f_k(λ,μ⁰) ≤ 1/Γ̃_k")
    if mode is FixedPointMode.DESCENDING and np.any(f < targets - slack):
        raise ValueError("descending start must satisfy f_k(λ,μ⁰) ≥ 1/Γ̃_k")

    mu_cap = settings.mu_divergence_factor * _mu_reference(instance)
    for iteration in range(1, settings.fixed_point_max_iter + 1):
        x = _inverse_quadratic(instance, factor)
        new_mu = 1.0 / (instance.gamma_tilde_k * x)
        residual = float(np.max(np.abs(new_mu - mu) / np.maximum(1.0, new_mu)))

        step = new_mu - mu
        drift = 1e-9 * np.maximum(1.0, mu)
        if mode is FixedPointMode.ASCENDING and np.any(step < -drift):
            logger.warning(f"Ascending fixed point decreased at iteration {iteration} (λ={lam:.6e})")
        if mode is FixedPointMode.DESCENDING and np.any(step > drift):
            logger.warning(f"Descending fixed point increased at iteration {iteration} (λ={lam:.6e})")

        mu = new_mu
        result.mu = mu
        result.iterations = iteration
        result.residuals.append(residual)
        result.iterates.append(mu.copy())

        if mode is FixedPointMode.ASCENDING and np.max(mu) > mu_cap:
            result.status = FixedPointStatus.DIVERGED
            logger.debug(f"Fixed point diverged at iteration {iteration}: max μ {np.max(mu):.3e} > cap {mu_cap:.3e}")
            return result

        factor = try_cholesky(c_matrix(instance, lam, mu))
        if factor is None:
            result.status = FixedPointStatus.DUAL_INFEASIBLE
            logger.debug(f"C(λ, μ) lost positive definiteness at iteration {iteration} (λ={lam:.6e})")
            return result

        if residual <= eps:
            logger.debug(f"Fixed point ({mode.value}) converged in {iteration} iterations at λ={lam:.6e}")
            return result

    raise FixedPointError(
        f"fixed-point iteration did not converge in {settings.fixed_point_max_iter} iterations "
        f"(λ={lam:.6e}, last residual {result.residuals[-1]:.3e})"
    )


def descending_start(
    instance: ProblemInstance,
    lam: float,
    base_mu: Optional[np.ndarray] = None,
    settings: Optional[SolverSettings] = None,
) -> Tuple[Optional[np.ndarray], int]:
    """
    Build a start point for the descending iteration by doubling a base vector.

    The base is `base_mu` when given (a converged μ* at a smaller λ), otherwise the
    uniform vector μ₀·1 at the scale of the first ascending iterate. Returns
    (None, doublings) when no doubling within the cap satisfies C ≻ 0 and
    f_k ≥ 1/Γ̃_k.
    """
    settings = settings or SolverSettings()
    if base_mu is None:
        base = np.full(instance.K, _mu_reference(instance))
    else:
        base = np.asarray(base_mu, dtype=float)
    targets = (1.0 - settings.fixed_point_tol) / instance.gamma_tilde_k
    for doubling in range(settings.start_doubling_cap + 1):
        mu = base * 2.0 ** doubling
        f = dual_constraint_values(instance, lam, mu)
        if f is not None and np.all(f >= targets):
            return mu, doubling
    return None, settings.start_doubling_cap


# ---------------------------------------------------------------------------
# Primal recovery
# ---------------------------------------------------------------------------

def mvdr_direction(instance: ProblemInstance, lam: float, mu: np.ndarray) -> np.ndarray:
    """
    Unit-norm directions C⁻¹(λ,μ)h_k / ‖C⁻¹(λ,μ)h_k‖, one row per user.

    Raises:
        ValueError: If C(λ, μ) is not positive definite
    """
    factor = try_cholesky(c_matrix(instance, lam, mu))
    if factor is None:
        raise ValueError(f"C(λ, μ) is not positive definite at λ={lam:.6e}")
    directions = linalg.cho_solve(factor, instance.h.T, check_finite=False).T
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def power_matrix(instance: ProblemInstance, directions: np.ndarray) -> np.ndarray:
    """S with S_kk = w̃_kᴴ(Γ̃_kH_k - A_k)w̃_k and S_ki = -w̃_iᴴA_kw̃_i."""
    K = instance.K
    # spread[k, i] = w̃_iᴴ A_k w̃_i
    spread = np.real(np.einsum('in,knm,im->ki', directions.conj(), instance.A_k, directions))
    own = instance.gamma_tilde_k * np.abs(np.einsum('kn,kn->k', instance.h.conj(), directions)) ** 2
    S = -spread
    S[np.arange(K), np.arange(K)] += own
    return S


def solve_power(instance: ProblemInstance, lam: float, directions: np.ndarray) -> np.ndarray:
    """
    Powers p = σ_v²·S⁻¹·1 that make every communication constraint tight.

    Raises:
        PowerAllocationError: If S is singular or a power is not positive
    """
    S = power_matrix(instance, directions)
    try:
        p = linalg.solve(S, np.full(instance.K, instance.sigma_v2), check_finite=False)
    except linalg.LinAlgError as e:
        raise PowerAllocationError(f"power system singular at λ={lam:.6e}: {e}") from e
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        raise PowerAllocationError(f"power system yields non-positive power at λ={lam:.6e}: {p}")
    return p


def subgradient(instance: ProblemInstance, w_star: np.ndarray) -> float:
    """Δ(λ) = Γ̃_s - Σ_k w_kᴴ B w_k."""
    return float(instance.gamma_tilde_s - beam_gain(instance, w_star))


def sensing_power(instance: ProblemInstance, lam: float, directions: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Least total power along fixed directions that meets every communication constraint and Σ_k p_k·g_k ≥ Γ̃_s.

    Here g_k = w̃_kᴴBw̃_k. The tight powers p̄ = σ_v²·S⁻¹·1 are kept when their gain
    reaches Γ̃_s. Otherwise the shortfall is made up along the column of S⁻¹ with the
    lowest power per unit of gain, which leaves one communication constraint slack.

    Returns:
        (powers, Γ̃_s - Σ_k p̄_k·g_k)

    Raises:
        PowerAllocationError: If S is singular, p̄ is not positive or no column of S⁻¹ adds gain
    """
    K = instance.K
    S = power_matrix(instance, directions)
    rhs = np.column_stack([np.full(K, instance.sigma_v2), np.eye(K)])
    try:
        solved = linalg.solve(S, rhs, check_finite=False)
    except linalg.LinAlgError as e:
        raise PowerAllocationError(f"power system singular at λ={lam:.6e}: {e}") from e
    tight, columns = solved[:, 0], solved[:, 1:]
    if not np.all(np.isfinite(solved)) or np.any(tight <= 0):
        raise PowerAllocationError(f"power system yields non-positive power at λ={lam:.6e}: {tight}")

    gains = batch_quad_form(instance.B_mat, directions)
    shortfall = float(instance.gamma_tilde_s - gains @ tight)
    if shortfall <= 0:
        return tight, shortfall

    # S is an M-matrix here, so its inverse is entrywise nonnegative up to round-off
    column_gain = gains @ columns
    usable = (column_gain > 0) & np.all(columns >= -1e-12 * np.max(np.abs(columns), axis=0), axis=0)
    if not np.any(usable):
        raise PowerAllocationError(f"no power direction raises the beam gain at λ={lam:.6e}")
    cost = np.full(K, np.inf)
    cost[usable] = np.sum(columns[:, usable], axis=0) / column_gain[usable]
    j = int(np.argmin(cost))
    p = tight + (shortfall / column_gain[j]) * columns[:, j]
    if np.any(p <= 0):
        raise PowerAllocationError(f"sensing top-up yields non-positive power at λ={lam:.6e}: {p}")
    return p, shortfall


# ---------------------------------------------------------------------------
# Continuation along the dual curve
# ---------------------------------------------------------------------------

@dataclass
class CurvePoint:
    """A solution (λ, μ) of the fixed-point equations at curve parameter s = mean(μ/μ_ref)."""
    lam: float
    mu: np.ndarray
    s: float
    iterations: int = 0
    residual: float = 0.0


def fixed_point_system(
    instance: ProblemInstance,
    lam: float,
    mu: np.ndarray,
) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """
    Residuals r_k = μ_kΓ̃_k·h_kᴴC⁻¹h_k - 1 of the fixed-point equations with ∂r/∂λ and ∂r/∂μ.

    Returns None when C(λ, μ) is not positive definite.
    """
    factor = try_cholesky(c_matrix(instance, lam, mu))
    if factor is None:
        return None
    mu = np.asarray(mu, dtype=float)
    e = linalg.cho_solve(factor, instance.h.T, check_finite=False).T
    x = np.real(np.einsum('kn,kn->k', instance.h.conj(), e))
    weight = mu * instance.gamma_tilde_k
    # spread[k, j] = e_kᴴ A_j e_k with e_k = C⁻¹h_k
    spread = np.real(np.einsum('kn,jnm,km->kj', e.conj(), instance.A_k, e))
    d_mu = np.diag(instance.gamma_tilde_k * x) - weight[:, None] * spread
    d_lam = weight * batch_quad_form(instance.B_mat, e)
    return weight * x - 1.0, d_lam, d_mu


def curve_point(
    instance: ProblemInstance,
    lam: float,
    mu: np.ndarray,
    s: float,
    lam_scale: float,
    mu_ref: np.ndarray,
    settings: Optional[SolverSettings] = None,
) -> Optional[CurvePoint]:
    """
    Newton's method on the fixed-point equations bordered by mean(μ/μ_ref) = s, started at (λ, μ).

    The bordered system stays nonsingular at the end of the dual curve, where the
    fixed-point map stops contracting and λ turns back. Steps are halved until C
    stays positive definite and the residual decreases. Returns None when Newton
    stalls above the stall tolerance.
    """
    settings = settings or SolverSettings()
    K = instance.K
    mu = np.asarray(mu, dtype=float)
    system = fixed_point_system(instance, lam, mu)
    if system is None:
        return None

    def merit_of(residual, values):
        return max(float(np.max(np.abs(residual))), abs(float(np.mean(values / mu_ref)) - s))

    jacobian = np.zeros((K + 1, K + 1))
    jacobian[K, 1:] = 1.0 / K
    merit = merit_of(system[0], mu)
    for iteration in range(settings.curve_newton_max_iter + 1):
        residual, d_lam, d_mu = system
        if merit <= settings.curve_tol:
            return CurvePoint(lam=lam, mu=mu, s=s, iterations=iteration, residual=merit)
        if iteration == settings.curve_newton_max_iter:
            break
        jacobian[:K, 0] = d_lam * lam_scale
        jacobian[:K, 1:] = d_mu * mu_ref[None, :]
        rhs = -np.append(residual, np.mean(mu / mu_ref) - s)
        try:
            step = np.linalg.solve(jacobian, rhs)
        except np.linalg.LinAlgError:
            break

        t = 1.0
        accepted = False
        for _ in range(40):
            new_lam = lam + t * step[0] * lam_scale
            new_mu = mu + t * step[1:] * mu_ref
            if new_lam >= 0 and np.all(new_mu > 0):
                new_system = fixed_point_system(instance, new_lam, new_mu)
                if new_system is not None:
                    new_merit = merit_of(new_system[0], new_mu)
                    if new_merit <= (1.0 - 1e-4 * t) * merit:
                        lam, mu, system, merit = new_lam, new_mu, new_system, new_merit
                        accepted = True
                        break
            t *= 0.5
        if not accepted:
            break

    if merit <= settings.curve_stall_tol:
        return CurvePoint(lam=lam, mu=mu, s=s, iterations=iteration, residual=merit)
    return None


def trace_curve(
    instance: ProblemInstance,
    start: CurvePoint,
    target: float,
    lam_scale: float,
    mu_ref: np.ndarray,
    settings: Optional[SolverSettings] = None,
) -> Tuple[Optional[CurvePoint], int]:
    """
    Follow the dual curve from `start` to s = target, halving the step in s after a failed Newton solve.

    Returns:
        (point at s = target or None, total Newton iterations)
    """
    settings = settings or SolverSettings()
    current = start
    step = target - start.s
    iterations = 0
    for _ in range(settings.curve_max_solves):
        s = target if abs(step) >= abs(target - current.s) else current.s + step
        point = curve_point(instance, current.lam, current.mu * (s / current.s), s, lam_scale, mu_ref, settings)
        if point is None:
            step *= 0.5
            if abs(step) <= 1e-14 * abs(target):
                break
            continue
        iterations += point.iterations
        if s == target:
            return point, iterations
        current = point
        step *= 2.0
    return None, iterations


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------

@dataclass
class BisectionStep:
    index: int
    lam: float
    status: str
    delta: Optional[float] = None
    beam_gain: Optional[float] = None
    inner_iterations: int = 0
    start_doublings: int = 0
    residuals: List[float] = field(default_factory=list)
    iterates: List[np.ndarray] = field(default_factory=list)
    message: str = ""


@dataclass
class SolveTrace:
    steps: List[BisectionStep] = field(default_factory=list)
    boundary_steps: List[BisectionStep] = field(default_factory=list)
    p4_iterations: int = 0
    p4_residuals: List[float] = field(default_factory=list)
    stage_times: Dict[str, float] = field(default_factory=dict)

    @property
    def bisection_iterations(self) -> int:
        return len(self.steps) + len(self.boundary_steps)

    @property
    def inner_iterations(self) -> int:
        return self.p4_iterations + sum(step.inner_iterations for step in self.steps + self.boundary_steps)

    def to_lines(self) -> List[str]:
        """Line-oriented log: one line per fixed-point iteration and per bisection step."""
        lines = ["# stage iteration lambda delta beam_gain residual status"]
        for i, residual in enumerate(self.p4_residuals, start=1):
            lines.append(f"p4 {i} 0 - - {residual:.6e} inner")
        for step in self.steps:
            for i, residual in enumerate(step.residuals, start=1):
                lines.append(f"inner {step.index}.{i} {step.lam:.12e} - - {residual:.6e} inner")
            delta = "-" if step.delta is None else f"{step.delta:.12e}"
            gain = "-" if step.beam_gain is None else f"{step.beam_gain:.12e}"
            final = f"{step.residuals[-1]:.6e}" if step.residuals else "-"
            lines.append(f"bisection {step.index} {step.lam:.12e} {delta} {gain} {final} {step.status}")
        for step in self.boundary_steps:
            delta = "-" if step.delta is None else f"{step.delta:.12e}"
            gain = "-" if step.beam_gain is None else f"{step.beam_gain:.12e}"
            final = f"{step.residuals[-1]:.6e}" if step.residuals else "-"
            lines.append(f"boundary {step.index} {step.lam:.12e} {delta} {gain} {final} {step.status}")
        for stage, seconds in self.stage_times.items():
            lines.append(f"# wall_time {stage} {seconds:.6f}")
        return lines


@dataclass
class _InnerResult:
    status: str
    mu: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    delta: Optional[float] = None
    fixed_point: Optional[FixedPointResult] = None
    doublings: int = 0
    message: str = ""


@dataclass
class _CurveDesign:
    status: str
    lam: float
    mu: np.ndarray
    w: Optional[np.ndarray] = None
    shortfall: Optional[float] = None
    power: float = np.inf
    message: str = ""


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

class PrimalDualSolver:
    """Globally optimal solver for joint fronthaul compression and beamforming."""

    def __init__(self, logger: Optional[logging.Logger] = None, settings: Optional[SolverSettings] = None):
        self.logger = get_logger(logger)
        self.settings = settings or SolverSettings()

    def solve_p4(self, instance: ProblemInstance, trace: Optional[SolveTrace] = None) -> Solution:
        """
        Communication-only power minimization (λ = 0), solved with the ascending fixed point from μ = 0.

        Raises:
            CommunicationInfeasibleError: If the dual iterates diverge past the cap
        """
        start = time.perf_counter()
        fp = fixed_point_mu(instance, 0.0, np.zeros(instance.K), FixedPointMode.ASCENDING,
                            eps=self.settings.fixed_point_tol, settings=self.settings, logger=self.logger)
        if trace is not None:
            trace.p4_iterations = fp.iterations
            trace.p4_residuals = list(fp.residuals)
        if not fp.converged:
            raise CommunicationInfeasibleError(
                f"communication targets cannot be met: fixed point {fp.status.value} after {fp.iterations} iterations"
            )
        directions = mvdr_direction(instance, 0.0, fp.mu)
        try:
            p = solve_power(instance, 0.0, directions)
        except PowerAllocationError as e:
            raise CommunicationInfeasibleError(f"communication targets cannot be met: {e}") from e
        w = np.sqrt(p)[:, None] * directions
        if trace is not None:
            trace.stage_times['p4'] = time.perf_counter() - start
        self.logger.debug(f"Communication-only solve: {fp.iterations} iterations, beam power {np.sum(p):.3e} W")
        return complete_solution(instance, w, lambda_star=0.0, mu_star=fp.mu, trace=trace, method='p4')

    def _inner_solve(self, instance: ProblemInstance, lam: float, base_mu: Optional[np.ndarray]) -> _InnerResult:
        mu0, doublings = descending_start(instance, lam, base_mu, self.settings)
        if mu0 is None:
            return _InnerResult(status=FixedPointStatus.DUAL_INFEASIBLE.value, doublings=doublings,
                                message="no descending start within the doubling cap")
        try:
            fp = fixed_point_mu(instance, lam, mu0, FixedPointMode.DESCENDING,
                                eps=self.settings.fixed_point_tol, settings=self.settings, logger=self.logger)
        except FixedPointError as e:
            return _InnerResult(status="fixed_point_cap", doublings=doublings, message=str(e))
        if not fp.converged:
            return _InnerResult(status=fp.status.value, fixed_point=fp, doublings=doublings)
        try:
            directions = mvdr_direction(instance, lam, fp.mu)
            p = solve_power(instance, lam, directions)
        except (PowerAllocationError, ValueError) as e:
            return _InnerResult(status="power_failure", fixed_point=fp, doublings=doublings, message=str(e))
        w = np.sqrt(p)[:, None] * directions
        return _InnerResult(status="ok", mu=fp.mu, w=w, delta=subgradient(instance, w),
                            fixed_point=fp, doublings=doublings)

    def _curve_design(self, instance: ProblemInstance, point: CurvePoint) -> _CurveDesign:
        try:
            directions = mvdr_direction(instance, point.lam, point.mu)
            p, shortfall = sensing_power(instance, point.lam, directions)
        except (PowerAllocationError, ValueError) as e:
            return _CurveDesign(status="power_failure", lam=point.lam, mu=point.mu, message=str(e))
        return _CurveDesign(status="ok", lam=point.lam, mu=point.mu, w=np.sqrt(p)[:, None] * directions,
                            shortfall=shortfall, power=float(np.sum(p)))

    def _boundary_solve(
        self,
        instance: ProblemInstance,
        lam: float,
        mu: np.ndarray,
        mu_ref: np.ndarray,
        eps: float,
        trace: SolveTrace,
    ) -> Tuple[Optional[_CurveDesign], bool]:
        """
        Search s = mean(μ/μ_ref) below the curve point (λ, μ), where sensing is unmet, for the point where it is met.

        Every curve point whose tight powers are positive gives a feasible design
        through sensing_power. The reciprocal gain 1/Σ_k p̄_k·g_k of the tight powers
        is close to linear in s near the end of the curve, so a secant on it picks
        the next s, nudged toward the upper end of the bracket; bisection takes over
        when the secant leaves the bracket. The search stops on a shortfall within
        -eps·Γ̃_s or once the bracket or the secant estimate is within the relative
        width of the upper end. It takes whatever is left of the outer step budget.

        Returns:
            (least-power design or None, whether a shortfall landed in the band)
        """
        settings = self.settings
        lam_scale = lambda_range(instance).d2_lower
        mu = np.asarray(mu, dtype=float)
        top = CurvePoint(lam=lam, mu=mu, s=float(np.mean(mu / mu_ref)))
        s_low, s_high = 0.0, top.s
        target_band = eps * instance.gamma_tilde_s
        target_reciprocal = 1.0 / instance.gamma_tilde_s
        nudge = 1e-3

        best = self._curve_design(instance, top)
        # (s, 1/gain of the tight powers) of evaluated points on the physical side
        history: List[Tuple[float, float]] = []
        if best.status != "ok":
            best = None
        else:
            history.append((top.s, 1.0 / max(instance.gamma_tilde_s - best.shortfall, np.finfo(float).tiny)))

        def secant() -> Optional[float]:
            if len(history) < 2:
                return None
            (s1, r1), (s2, r2) = history[-2], history[-1]
            if r1 == r2:
                return None
            estimate = s2 + (target_reciprocal - r2) * (s1 - s2) / (r1 - r2)
            return estimate if s_low < estimate < s_high else None

        for index in range(1, MAX_OUTER_STEPS - len(trace.steps) + 1):
            estimate = secant()
            guided = estimate is not None
            s = estimate + nudge * (s_high - estimate) if guided else 0.5 * (s_low + s_high)

            point, iterations = trace_curve(instance, top, s, lam_scale, mu_ref, settings)
            if point is None:
                trace.boundary_steps.append(BisectionStep(index=index, lam=top.lam, status="curve_lost",
                                                          inner_iterations=iterations, message=f"s={s:.12e}"))
                self.logger.debug(f"Boundary {index}: s={s:.12e} beyond the dual curve")
                design = None
            else:
                design = self._curve_design(instance, point)
                step = BisectionStep(index=index, lam=point.lam, status=design.status, delta=design.shortfall,
                                     inner_iterations=iterations, residuals=[point.residual],
                                     message=f"s={s:.12e} {design.message}".rstrip())
                if design.shortfall is not None:
                    step.beam_gain = instance.gamma_tilde_s - design.shortfall
                trace.boundary_steps.append(step)
                self.logger.debug(f"Boundary {index}: s={s:.12e} λ={point.lam:.9e} {design.status} "
                                  f"Δ={design.shortfall if design.shortfall is not None else float('nan'):.3e}")

            if design is None or design.status != "ok":
                s_low = s
                if guided:
                    nudge = min(0.5, 10.0 * nudge)
            else:
                if best is None or design.power < best.power:
                    best = design
                history.append((s, 1.0 / max(instance.gamma_tilde_s - design.shortfall, np.finfo(float).tiny)))
                if design.shortfall > 0:
                    s_high, top = s, point
                elif design.shortfall >= -target_band:
                    return design, True
                else:
                    s_low = s

            if s_high - s_low <= settings.boundary_rel_width * s_high:
                break
            estimate = secant()
            if design is not None and design.status == "ok" and design.shortfall > 0 and estimate is not None \
                    and s_high - estimate <= settings.boundary_rel_width * s_high:
                break
        return best, False

    def solve(self, instance: ProblemInstance, eps: Optional[float] = None) -> Solution:
        """
        Solve the joint design by bisection on λ.

        When the bracket closes in on the end of the dual curve without a
        sensing-feasible iterate, the search continues along the curve in
        s = mean(μ/μ*_P4) and the beams come from sensing_power.

        Args:
            instance: Problem instance
            eps: Relative sensing tolerance; the bisection stops once
                 -eps·Γ̃_s ≤ Δ(λ) ≤ 0

        Raises:
            CommunicationInfeasibleError: If the communication-only problem is infeasible
            BisectionError: If neither search yields a sensing-feasible design
        """
        eps = self.settings.bisection_tol if eps is None else eps
        trace = SolveTrace()
        total_start = time.perf_counter()

        p4 = self.solve_p4(instance, trace)
        delta0 = subgradient(instance, p4.w)
        if delta0 <= 0:
            trace.stage_times['total'] = time.perf_counter() - total_start
            self.logger.info(f"Early exit: communication beams already meet sensing (Δ = {delta0:.3e})")
            return complete_solution(instance, p4.w, lambda_star=0.0, mu_star=p4.mu_star, trace=trace,
                                     method='pd', early_exit=True)

        bounds = lambda_range(instance)
        lam_min, lam_max = 0.0, bounds.d2_lower
        upper_failed = True
        target_band = eps * instance.gamma_tilde_s
        base_mu = p4.mu_star
        best: Optional[Tuple[float, _InnerResult]] = None
        bisection_start = time.perf_counter()
        converged = False

        for index in range(1, MAX_OUTER_STEPS + 1):
            lam = 0.5 * (lam_min + lam_max)
            inner = self._inner_solve(instance, lam, base_mu)
            step = BisectionStep(index=index, lam=lam, status=inner.status, delta=inner.delta,
                                 start_doublings=inner.doublings, message=inner.message)
            if inner.fixed_point is not None:
                step.inner_iterations = inner.fixed_point.iterations
                step.residuals = list(inner.fixed_point.residuals)
                step.iterates = list(inner.fixed_point.iterates)
            if inner.w is not None:
                step.beam_gain = beam_gain(instance, inner.w)
            trace.steps.append(step)

            if inner.status != "ok":
                self.logger.debug(f"Bisection {index}: λ={lam:.6e} {inner.status} {inner.message}".rstrip())
                lam_max = lam
                upper_failed = True
                if inner.status == "fixed_point_cap":
                    break
            elif inner.delta > 0:
                self.logger.debug(f"Bisection {index}: λ={lam:.6e} Δ={inner.delta:.3e} (sensing unmet)")
                lam_min = lam
                base_mu = inner.mu
            else:
                self.logger.debug(f"Bisection {index}: λ={lam:.6e} Δ={inner.delta:.3e}")
                lam_max = lam
                upper_failed = False
                best = (lam, inner)
                if inner.delta >= -target_band:
                    converged = True
                    break

            width = lam_max - lam_min
            if width <= self.settings.bracket_rel_width * lam_max:
                break
            if upper_failed and width <= self.settings.boundary_handoff_width * lam_max:
                break

        trace.stage_times['bisection'] = time.perf_counter() - bisection_start

        if converged:
            lam_star, inner = best
            trace.stage_times['total'] = time.perf_counter() - total_start
            self.logger.info(f"Bisection converged in {trace.bisection_iterations} steps: λ*={lam_star:.6e}")
            return complete_solution(instance, inner.w, lambda_star=lam_star, mu_star=inner.mu, trace=trace,
                                     method='pd')

        self.logger.debug(f"Continuing along the dual curve from λ bracket [{lam_min:.9e}, {lam_max:.9e}]")
        boundary_start = time.perf_counter()
        design, landed = self._boundary_solve(instance, lam_min, base_mu, p4.mu_star, eps, trace)
        trace.stage_times['boundary'] = time.perf_counter() - boundary_start
        trace.stage_times['total'] = time.perf_counter() - total_start

        candidates = []
        if design is not None:
            candidates.append((design.power, design.lam, design.w, design.mu))
        if best is not None:
            lam_star, inner = best
            candidates.append((float(np.sum(np.abs(inner.w) ** 2)), lam_star, inner.w, inner.mu))
        if not candidates:
            raise BisectionError(
                f"λ bracket collapsed to [{lam_min:.6e}, {lam_max:.6e}] and the dual curve gave no "
                f"sensing-feasible design",
                trace,
            )
        _, lam_star, w, mu_star = min(candidates, key=lambda candidate: candidate[0])
        message = (f"Dual-curve search finished after {trace.bisection_iterations} steps "
                   f"({len(trace.boundary_steps)} along the curve, shortfall {'in' if landed else 'outside'} "
                   f"the band before top-up): λ*={lam_star:.6e}")
        if design is not None:
            self.logger.info(message)
        else:
            self.logger.warning(f"{message}; returning the last sensing-feasible bisection iterate")
        return complete_solution(instance, w, lambda_star=lam_star, mu_star=mu_star, trace=trace, method='pd')


def solve_jfcbd(
    instance: ProblemInstance,
    eps: float = BISECTION_TOL,
    logger: Optional[logging.Logger] = None,
    settings: Optional[SolverSettings] = None,
) -> Solution:
    """Convenience wrapper around PrimalDualSolver.solve."""
    return PrimalDualSolver(logger, settings).solve(instance, eps)
