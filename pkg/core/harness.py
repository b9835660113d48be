"""Experiment driver: single solves, parameter sweeps, verification suites and timing benchmarks."""
import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import numpy as np
from config.constants import (
    BENCH_CSV_FILENAME,
    BENCH_REPETITIONS,
    CERTIFY_TOL,
    CSV_SCHEMA_VERSION,
    DEFAULT_SWEEP_GRIDS,
    EXIT_CONFIG_ERROR,
    EXIT_FAILURE,
    EXIT_OK,
    FEASIBILITY_TOL,
    REPORT_FILENAME,
    SDP_MAX_ANTENNAS,
    SDP_MAX_USERS,
    SOLUTION_FILENAME,
    SUMMARY_CSV_FILENAME,
    SWEEP_CSV_FILENAME,
    SWEEP_PARAMETERS,
    TRACE_FILENAME,
    VERIFY_RANDOM_POINTS,
)
from core.baseline import solve_separated
from core.model import (
    ProblemInstance,
    SensingThresholdError,
    Solution,
    check_feasibility,
    comm_margin,
    comm_sinrs,
    complete_solution,
    dl_rates,
    optimal_q_dl,
    optimal_q_ul,
    sensing_gain,
    sensing_sinr,
    solution_to_record,
    transmit_covariance,
    ul_rates,
)
from core.pd_solver import (
    BisectionError,
    CommunicationInfeasibleError,
    FixedPointError,
    PrimalDualSolver,
    SolverSettings,
    lambda_range,
    subgradient,
)
from core.scenario import SystemConfig, generate_instance
from core.sdr_oracle import SdrOracle, SdpInfeasibleError, SdpNumericalError, certify, extract_rank_one
from utils.file_io import ConfigError, CsvSink, write_trace_log, write_yaml_document
from utils.helpers import eig_extremes, watt_to_dbm
from utils.logging import get_logger


@dataclass
class MethodOutcome:
    method: str
    status: str
    solution: Optional[Solution] = None
    feasible: Optional[bool] = None
    certified_gap: Optional[float] = None
    wall_time: Optional[float] = None
    message: str = ""
    sdp: object = None


def apply_parameter(cfg: SystemConfig, parameter: str, value: float) -> SystemConfig:
    """
    Configuration with one sweep parameter set.

    `fronthaul` sets C_dl = C_ul = value. `antennas` sets N_t = M = value and K = max(1, value // 2).
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter '{parameter}', expected one of {SWEEP_PARAMETERS}")
    if parameter == 'antennas':
        n = int(value)
        return cfg.replace(N_t=n, M=n, K=max(1, n // 2))
    if parameter == 'fronthaul':
        return cfg.replace(C_dl=float(value), C_ul=float(value))
    return cfg.replace(**{parameter: float(value)})


def sdp_within_envelope(instance: ProblemInstance) -> bool:
    return instance.N <= SDP_MAX_ANTENNAS and instance.K <= SDP_MAX_USERS


class ExperimentHarness:
    """Runs solver methods on seeded instances and turns the outcomes into CSV rows."""

    def __init__(self, logger: Optional[logging.Logger] = None, settings: Optional[SolverSettings] = None,
                 timing: bool = False):
        self.logger = get_logger(logger)
        self.settings = settings or SolverSettings()
        self.timing = timing
        self.pd_solver = PrimalDualSolver(self.logger, self.settings)
        self.oracle = SdrOracle(self.logger, self.settings)

    def _timed(self, func: Callable, *args):
        start = time.perf_counter()
        result = func(*args)
        return result, time.perf_counter() - start

    def run_method(self, instance: ProblemInstance, method: str, certify_pd: bool = False) -> MethodOutcome:
        """Run one method; solver failures become statuses instead of exceptions."""
        try:
            if method == 'pd':
                solution, elapsed = self._timed(self.pd_solver.solve, instance)
            elif method == 'baseline':
                solution, elapsed = self._timed(solve_separated, instance, self.logger, self.settings)
            elif method == 'sdr':
                if not sdp_within_envelope(instance):
                    return MethodOutcome(method, 'skipped', message="outside the SDP oracle envelope")
                sdp, elapsed = self._timed(self.oracle.solve, instance)
                # Extracted beams are a diagnostic; the objective is the relaxation optimum
                solution, feasibility = extract_rank_one(instance, sdp)
                solution.objective = sdp.primal_value
                return MethodOutcome(method, 'ok', solution=solution, feasible=feasibility.feasible,
                                     wall_time=elapsed, sdp=sdp)
            else:
                raise ValueError(f"unknown method '{method}'")
        except CommunicationInfeasibleError as e:
            return MethodOutcome(method, 'infeasible', message=str(e))
        except BisectionError as e:
            return MethodOutcome(method, 'bisection_failed', message=str(e))
        except FixedPointError as e:
            return MethodOutcome(method, 'numerical_failure', message=str(e))
        except SdpInfeasibleError as e:
            return MethodOutcome(method, 'infeasible', message=str(e))
        except SdpNumericalError as e:
            return MethodOutcome(method, 'numerical_failure', message=str(e))

        feasibility = check_feasibility(instance, solution, FEASIBILITY_TOL, self.logger)
        outcome = MethodOutcome(method, 'ok', solution=solution, feasible=feasibility.feasible, wall_time=elapsed)
        if certify_pd and method == 'pd' and sdp_within_envelope(instance):
            try:
                report, outcome.sdp = self.oracle.certify(instance, solution, CERTIFY_TOL)
                outcome.certified_gap = report.relative_gap
            except (SdpInfeasibleError, SdpNumericalError) as e:
                self.logger.warning(f"Certification failed: {e}")
                outcome.message = str(e)
        return outcome

    def build_row(self, cfg: SystemConfig, parameter: str, value, trial: int, outcome: MethodOutcome) -> Dict:
        solution = outcome.solution
        objective = solution.objective if solution is not None else None
        trace = solution.trace if solution is not None else None
        return {
            'schema_version': CSV_SCHEMA_VERSION,
            'config_hash': cfg.hash(),
            'seed': cfg.seed,
            'parameter': parameter,
            'value': value,
            'trial': trial,
            'method': outcome.method,
            'status': outcome.status,
            'objective_w': objective,
            'objective_dbm': float(watt_to_dbm(objective)) if objective and objective > 0 else None,
            'lambda_star': solution.lambda_star if solution is not None and outcome.method == 'pd' else None,
            'bisection_iterations': trace.bisection_iterations if trace is not None else None,
            'inner_iterations': trace.inner_iterations if trace is not None else None,
            'scale_factor': solution.scale_factor if solution is not None else None,
            'wall_time_s': outcome.wall_time if self.timing else None,
            'feasible': outcome.feasible,
            'certified_gap': outcome.certified_gap,
        }

    def run_trial(self, cfg: SystemConfig, parameter: str, value, trial: int,
                  methods: Sequence[str], certify_pd: bool) -> List[Dict]:
        """All method rows of one (grid point, trial) pair; the trial seed is cfg.seed + trial."""
        trial_cfg = cfg.replace(seed=cfg.seed + trial)
        try:
            instance = generate_instance(trial_cfg, logger=self.logger)
        except SensingThresholdError as e:
            self.logger.warning(f"Trial {trial} at {parameter}={value}: {e}")
            return [self.build_row(trial_cfg, parameter, value, trial,
                                   MethodOutcome(method, 'sensing_threshold', message=str(e)))
                    for method in methods]
        rows = []
        for method in methods:
            outcome = self.run_method(instance, method, certify_pd)
            if outcome.status != 'ok':
                self.logger.debug(f"Trial {trial} {method}: {outcome.status} {outcome.message}")
            rows.append(self.build_row(trial_cfg, parameter, value, trial, outcome))
        return rows


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_solve(
    cfg: SystemConfig,
    out_dir: Path,
    method: str = 'pd',
    certify_pd: bool = False,
    settings: Optional[SolverSettings] = None,
    timing: bool = False,
    logger: Optional[logging.Logger] = None,
) -> int:
    """
    Solve one instance and write the solution file, feasibility report, trace log and summary CSV.

    Returns:
        Exit status: 0 feasible (and certified when requested), 1 infeasible or failed, 2 configuration error
    """
    logger = get_logger(logger)
    out_dir = Path(out_dir)
    harness = ExperimentHarness(logger, settings, timing)
    metadata = {'config_hash': cfg.hash(), 'seed': int(cfg.seed)}
    try:
        instance = generate_instance(cfg, logger=logger)
    except SensingThresholdError as e:
        logger.error(f"Instance construction failed: {e}")
        return EXIT_CONFIG_ERROR

    logger.info(f"Solving seed {cfg.seed} with method '{method}' (N={instance.N}, K={instance.K}, M={instance.M})")
    outcome = harness.run_method(instance, method, certify_pd)
    report: Dict = {'format_version': 1, **metadata, 'method': method, 'status': outcome.status}

    with CsvSink(out_dir / SUMMARY_CSV_FILENAME, logger) as sink:
        sink.write_row(harness.build_row(cfg, 'none', '', 0, outcome))

    if outcome.status != 'ok':
        logger.error(f"Method '{method}' failed: {outcome.status}: {outcome.message}")
        report['message'] = outcome.message
        write_yaml_document(out_dir / REPORT_FILENAME, report)
        return EXIT_FAILURE

    solution = outcome.solution
    write_yaml_document(out_dir / SOLUTION_FILENAME, solution_to_record(solution, metadata, outcome.sdp))

    exit_code = EXIT_OK
    if method != 'sdr':
        feasibility = check_feasibility(instance, solution, FEASIBILITY_TOL, logger)
        report['feasibility'] = feasibility.to_dict()
        report['objective_w'] = float(solution.objective)
        report['objective_dbm'] = float(watt_to_dbm(solution.objective))
        R = transmit_covariance(solution.w, solution.q_dl)
        report['dl_rates_bps'] = [float(r * instance.bandwidth) for r in dl_rates(solution.w, solution.q_dl)]
        report['ul_rates_bps'] = [float(r * instance.bandwidth) for r in ul_rates(instance, R, solution.q_ul)]
        report['comm_sinr_db'] = [float(10 * np.log10(s)) for s in comm_sinrs(instance, solution.w, solution.q_dl)]
        report['sensing_sinr_db'] = float(10 * np.log10(sensing_sinr(instance, R, solution.q_ul)))
        if not feasibility.feasible:
            exit_code = EXIT_FAILURE
        if solution.trace is not None:
            write_trace_log(out_dir / TRACE_FILENAME, solution.trace.to_lines())
    if certify_pd and method == 'pd':
        if outcome.sdp is None:
            report['certificate'] = {'passed': False, 'message': outcome.message or 'oracle unavailable'}
            exit_code = EXIT_FAILURE
        else:
            certificate = certify(instance, solution, outcome.sdp, CERTIFY_TOL, logger)
            report['certificate'] = certificate.to_dict()
            report['certificate']['eigen_ratios'] = outcome.sdp.eigen_ratios()
            if not certificate.passed:
                exit_code = EXIT_FAILURE

    write_yaml_document(out_dir / REPORT_FILENAME, report)
    logger.info(f"Results written to {out_dir.resolve()}")
    return exit_code


def cmd_sweep(
    cfg: SystemConfig,
    parameter: str,
    out_dir: Path,
    grid: Optional[Sequence[float]] = None,
    trials: int = 1,
    methods: Sequence[str] = ('pd', 'sdr', 'baseline'),
    certify_pd: bool = False,
    jobs: int = 1,
    settings: Optional[SolverSettings] = None,
    timing: bool = False,
    logger: Optional[logging.Logger] = None,
) -> Path:
    """
    Sweep one parameter over a grid with `trials` seeded instances per point.

    Per-trial failures are recorded as rows with a status. Rows are written in
    (grid point, trial, method) order whatever the number of worker threads.

    Returns:
        Path of the written CSV file
    """
    logger = get_logger(logger)
    grid = list(DEFAULT_SWEEP_GRIDS[parameter] if grid is None else grid)
    if not grid:
        raise ValueError("sweep grid must not be empty")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    harness = ExperimentHarness(logger, settings, timing)

    tasks = []
    for value in grid:
        try:
            point_cfg = apply_parameter(cfg, parameter, value)
        except ConfigError as e:
            raise ConfigError(f"grid value {value} is invalid for '{parameter}': {e.message}", field=e.field)
        tasks.extend((point_cfg, value, trial) for trial in range(trials))

    logger.info(f"Sweeping {parameter} over {grid} with {trials} trials ({len(tasks)} instances, {jobs} workers)")
    path = Path(out_dir) / SWEEP_CSV_FILENAME.format(parameter=parameter)
    with CsvSink(path, logger) as sink, ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = pool.map(lambda task: harness.run_trial(task[0], parameter, task[1], task[2], methods, certify_pd),
                           tasks)
        for rows in results:
            sink.write_rows(rows)
    return path


@dataclass
class _VerifyTally:
    passed: Dict[str, int]
    failed: Dict[str, int]
    failures: List[Dict]

    def record(self, name: str, ok: bool, seed: int, detail: str = "") -> None:
        bucket = self.passed if ok else self.failed
        bucket[name] = bucket.get(name, 0) + 1
        if not ok:
            self.failures.append({'seed': int(seed), 'property': name, 'detail': detail})


def _verify_identities(instance: ProblemInstance, rng: np.random.Generator, tally: _VerifyTally, seed: int) -> None:
    worst_dl, worst_ul, equivalence_ok = 0.0, 0.0, True
    scale = np.sqrt(instance.sigma_v2 / np.mean(np.abs(instance.h) ** 2))
    for _ in range(VERIFY_RANDOM_POINTS):
        w = scale * (rng.standard_normal((instance.K, instance.N)) + 1j * rng.standard_normal((instance.K, instance.N)))
        q_dl = optimal_q_dl(instance, w)
        worst_dl = max(worst_dl, float(np.max(np.abs(dl_rates(w, q_dl) - instance.cap_dl))))
        R = transmit_covariance(w, q_dl)
        q_ul = optimal_q_ul(instance, R)
        worst_ul = max(worst_ul, float(np.max(np.abs(ul_rates(instance, R, q_ul) - instance.cap_ul))))
        sinr_ok = comm_sinrs(instance, w, q_dl) >= instance.gamma_k
        margin_ok = comm_margin(instance, w) >= 0
        if np.any(sinr_ok != margin_ok):
            equivalence_ok = False
        sensing_ok = sensing_sinr(instance, R, q_ul) >= instance.gamma_s
        if sensing_ok != (sensing_gain(instance, R) >= instance.gamma_tilde_s):
            equivalence_ok = False
    tally.record('dl_rate_identity', worst_dl <= 1e-9, seed, f"max deviation {worst_dl:.3e}")
    tally.record('ul_rate_identity', worst_ul <= 1e-9, seed, f"max deviation {worst_ul:.3e}")
    tally.record('constraint_equivalence', equivalence_ok, seed)


def _verify_lambda_range(instance: ProblemInstance, rng: np.random.Generator, tally: _VerifyTally, seed: int) -> None:
    bounds = lambda_range(instance)
    identity = np.eye(instance.N)
    ok = True
    for lam in rng.uniform(0.0, bounds.d1_upper, VERIFY_RANDOM_POINTS):
        ok &= eig_extremes(identity - lam * instance.B_mat)[0] >= -1e-10
    for lam in bounds.d2_lower * (1.0 + rng.exponential(1.0, VERIFY_RANDOM_POINTS)):
        ok &= eig_extremes(identity - lam * instance.B_mat)[1] <= 1e-10
    tally.record('lambda_range', bool(ok), seed)


def _verify_solution(instance: ProblemInstance, solution: Solution, settings: SolverSettings,
                     tally: _VerifyTally, seed: int) -> None:
    feasibility = check_feasibility(instance, solution, FEASIBILITY_TOL)
    tally.record('feasibility', feasibility.feasible, seed, f"worst slack {feasibility.worst_slack:.3e}")

    sinr = comm_sinrs(instance, solution.w, solution.q_dl)
    activity = float(np.max(np.abs(sinr - instance.gamma_k) / instance.gamma_k))
    tally.record('comm_activity', activity <= 1e-6, seed, f"max relative deviation {activity:.3e}")

    if solution.lambda_star > 0:
        delta = subgradient(instance, solution.w)
        tally.record('sensing_activity', abs(delta) <= settings.bisection_tol * instance.gamma_tilde_s, seed,
                     f"Δ = {delta:.3e}")
    tally.record('dual_positivity', bool(np.all(solution.mu_star > 1e-12 * np.max(solution.mu_star))), seed)

    monotone = True
    for step in solution.trace.steps if solution.trace is not None else []:
        for previous, current in zip(step.iterates, step.iterates[1:]):
            if np.any(current > previous + 1e-9 * np.maximum(1.0, previous)):
                monotone = False
    tally.record('fixed_point_monotonicity', monotone, seed)


def cmd_verify(
    cfg: SystemConfig,
    trials: int,
    perturb_power: float = 0.0,
    settings: Optional[SolverSettings] = None,
    logger: Optional[logging.Logger] = None,
) -> Tuple[int, Dict]:
    """
    Run every invariant suite over `trials` seeded instances.

    Args:
        perturb_power: Relative power increase injected into PD solutions before certification

    Returns:
        (exit status, machine-readable summary)
    """
    logger = get_logger(logger)
    settings = settings or SolverSettings()
    tally = _VerifyTally(passed={}, failed={}, failures=[])
    solver = PrimalDualSolver(logger, settings)
    oracle = SdrOracle(logger, settings)
    skipped = []

    if trials == 0:
        logger.warning("No verification trials requested; the suite passes vacuously")

    for trial in range(trials):
        seed = cfg.seed + trial
        trial_cfg = cfg.replace(seed=seed)
        rng = np.random.default_rng(seed)
        try:
            instance = generate_instance(trial_cfg, logger=logger)
        except SensingThresholdError as e:
            skipped.append({'seed': seed, 'reason': str(e)})
            continue

        _verify_identities(instance, rng, tally, seed)
        _verify_lambda_range(instance, rng, tally, seed)
        try:
            solution = solver.solve(instance)
        except CommunicationInfeasibleError as e:
            skipped.append({'seed': seed, 'reason': str(e)})
            continue
        except (BisectionError, FixedPointError) as e:
            tally.record('solve', False, seed, str(e))
            continue
        _verify_solution(instance, solution, settings, tally, seed)

        if sdp_within_envelope(instance):
            candidate = solution
            if perturb_power:
                candidate = complete_solution(instance, np.sqrt(1.0 + perturb_power) * solution.w,
                                              solution.lambda_star, solution.mu_star, solution.trace)
            try:
                report, _ = oracle.certify(instance, candidate, CERTIFY_TOL)
                tally.record('certification', report.passed, seed, f"relative gap {report.relative_gap:.3e}")
            except (SdpInfeasibleError, SdpNumericalError) as e:
                tally.record('certification', False, seed, str(e))

    failed_total = sum(tally.failed.values())
    summary = {
        'trials': int(trials),
        'skipped': skipped,
        'passed': failed_total == 0,
        'properties': {
            name: {'passed': tally.passed.get(name, 0), 'failed': tally.failed.get(name, 0)}
            for name in sorted(set(tally.passed) | set(tally.failed))
        },
        'failures': tally.failures,
    }
    if failed_total:
        logger.error(f"Verification failed: {failed_total} property checks, first at seed {tally.failures[0]['seed']}")
        return EXIT_FAILURE, summary
    logger.info(f"Verification passed over {trials} trials ({len(skipped)} skipped)")
    return EXIT_OK, summary


def cmd_bench(
    cfg: SystemConfig,
    out_dir: Path,
    grid: Optional[Sequence[int]] = None,
    trials: int = 1,
    methods: Sequence[str] = ('pd', 'sdr', 'baseline'),
    repetitions: int = BENCH_REPETITIONS,
    settings: Optional[SolverSettings] = None,
    logger: Optional[logging.Logger] = None,
) -> Path:
    """
    Time every method per antenna count: one warm-up solve, then the median of `repetitions` solves.

    Returns:
        Path of the written CSV file
    """
    logger = get_logger(logger)
    grid = list(DEFAULT_SWEEP_GRIDS['antennas'] if grid is None else grid)
    harness = ExperimentHarness(logger, settings, timing=True)
    path = Path(out_dir) / BENCH_CSV_FILENAME
    with CsvSink(path, logger) as sink:
        for value in grid:
            point_cfg = apply_parameter(cfg, 'antennas', value)
            for trial in range(trials):
                trial_cfg = point_cfg.replace(seed=point_cfg.seed + trial)
                try:
                    instance = generate_instance(trial_cfg, logger=logger)
                except SensingThresholdError as e:
                    sink.write_rows(harness.build_row(trial_cfg, 'antennas', value, trial,
                                                      MethodOutcome(m, 'sensing_threshold', message=str(e)))
                                    for m in methods)
                    continue
                for method in methods:
                    outcome = harness.run_method(instance, method)
                    if outcome.status == 'ok':
                        times = [harness.run_method(instance, method).wall_time for _ in range(repetitions)]
                        outcome.wall_time = statistics.median(times)
                    sink.write_row(harness.build_row(trial_cfg, 'antennas', value, trial, outcome))
                    logger.info(f"N_t={value} trial {trial} {method}: {outcome.status}, "
                                f"median {outcome.wall_time if outcome.wall_time is not None else float('nan'):.4f} s")
    return path
