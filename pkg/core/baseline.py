"""Separated design: communication-only beamforming, then a uniform power scale for sensing."""
import logging
from typing import Optional
import numpy as np
from core.model import ProblemInstance, Solution, beam_gain, complete_solution
from core.pd_solver import PrimalDualSolver, SolverSettings, SolveTrace
from utils.logging import get_logger


def separated_scale_factor(instance: ProblemInstance, w: np.ndarray) -> float:
    """γ = max{1, Γ̃_s / Σ_k ŵ_kᴴBŵ_k}."""
    gain = beam_gain(instance, w)
    if gain <= 0:
        raise ValueError("communication beams carry no power toward the target")
    return max(1.0, instance.gamma_tilde_s / gain)


def solve_separated(
    instance: ProblemInstance,
    logger: Optional[logging.Logger] = None,
    settings: Optional[SolverSettings] = None,
) -> Solution:
    """
    Solve the communication-only problem and scale every beam by √γ.

    Compression noise follows the scaled beams through the closed forms; γ is
    returned as the solution's scale_factor.

    Raises:
        CommunicationInfeasibleError: If the communication-only problem is infeasible
    """
    logger = get_logger(logger)
    trace = SolveTrace()
    p4 = PrimalDualSolver(logger, settings).solve_p4(instance, trace)
    gamma = separated_scale_factor(instance, p4.w)
    solution = complete_solution(
        instance,
        np.sqrt(gamma) * p4.w,
        lambda_star=0.0,
        mu_star=p4.mu_star,
        trace=trace,
        method='baseline',
        early_exit=gamma == 1.0,
        scale_factor=gamma,
    )
    logger.debug(f"Separated design: γ = {gamma:.6g}, objective {solution.objective:.6e} W")
    return solution
