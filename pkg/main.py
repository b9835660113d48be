#!/usr/bin/env python3
"""Main entry point for the joint fronthaul compression and beamforming toolkit."""

import argparse
import sys
from pathlib import Path
from typing import List, Optional
import yaml
from config.constants import (
    DEFAULT_TRIALS,
    DEFAULT_VERIFY_TRIALS,
    EXIT_CONFIG_ERROR,
    EXIT_FAILURE,
    EXIT_OK,
    METHODS,
    SWEEP_PARAMETERS,
    SYSTEM_CONFIG_FILE,
)
from config.env_setup import RuntimeEnvironment, setup_environment, write_env_template
from core.harness import cmd_bench, cmd_solve, cmd_sweep, cmd_verify
from core.pd_solver import SolverSettings
from core.scenario import SystemConfig
from utils.file_io import ConfigError, ensure_config_exists, load_system_config
from utils.logging import configure_logging, shutdown_logging


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='jfcbd',
        description='Joint fronthaul compression and beamforming design for networked ISAC',
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, default=None, help='system configuration YAML')
    common.add_argument('--seed', type=int, default=None, help='override the configuration seed')
    common.add_argument('--out', type=Path, default=None, help='output directory')
    common.add_argument('--tol', type=float, default=None, help='relative sensing tolerance of the bisection')
    common.add_argument('--log-level', default=None, help='console log level')

    sub = parser.add_subparsers(dest='command', required=True)

    solve = sub.add_parser('solve', parents=[common], help='solve one instance')
    solve.add_argument('--method', choices=METHODS, default='pd')
    solve.add_argument('--certify', action='store_true', help='certify the PD solution against the SDP oracle')
    solve.add_argument('--timing', action='store_true', help='fill the wall_time_s CSV column')

    sweep = sub.add_parser('sweep', parents=[common], help='sweep one parameter over a grid')
    sweep.add_argument('parameter', choices=SWEEP_PARAMETERS)
    sweep.add_argument('--grid', type=float, nargs='+', default=None, help='grid values (dB, bit/s or N_t)')
    sweep.add_argument('--trials', type=int, default=DEFAULT_TRIALS)
    sweep.add_argument('--method', choices=METHODS, nargs='+', default=list(METHODS))
    sweep.add_argument('--certify', action='store_true')
    sweep.add_argument('--jobs', type=int, default=None, help='worker threads')
    sweep.add_argument('--timing', action='store_true')

    verify = sub.add_parser('verify', parents=[common], help='run the invariant suites')
    verify.add_argument('--trials', type=int, default=DEFAULT_VERIFY_TRIALS)
    verify.add_argument('--perturb-power', type=float, default=0.0,
                        help='inject a relative power increase before certification')

    bench = sub.add_parser('bench', parents=[common], help='time the methods per antenna count')
    bench.add_argument('--grid', type=int, nargs='+', default=None, help='antennas per TX')
    bench.add_argument('--trials', type=int, default=1)
    bench.add_argument('--method', choices=METHODS, nargs='+', default=list(METHODS))
    return parser


class JfcbdApp:
    """Main application class orchestrating configuration, logging and the harness commands."""

    def __init__(self, argv: Optional[List[str]] = None):
        self.args = build_parser().parse_args(argv)
        self.environment: Optional[RuntimeEnvironment] = None
        self.config: Optional[SystemConfig] = None
        self.settings: Optional[SolverSettings] = None
        self.out_dir: Optional[Path] = None
        self.logger = None

    def initialize(self) -> None:
        """Resolve environment, logging, configuration and solver settings."""
        try:
            self.environment = setup_environment()
        except RuntimeError as e:
            raise ConfigError(str(e)) from e
        self.out_dir = self.args.out or self.environment.output_dir
        level = (self.args.log_level or self.environment.log_level).upper()
        self.logger = configure_logging(self.out_dir, level)

        config_file = self.args.config
        if config_file is None:
            ensure_config_exists()
            write_env_template(logger=self.logger)
            config_file = SYSTEM_CONFIG_FILE
        config = SystemConfig.from_dict(load_system_config(config_file, self.logger))
        if self.args.seed is not None:
            config = config.replace(seed=self.args.seed)
        self.config = config
        self.settings = SolverSettings().with_bisection_tol(self.args.tol)
        self.logger.debug(f"Configuration {config.hash()} loaded from {config_file}")

    def run(self) -> int:
        """Main execution flow; returns the process exit status."""
        try:
            self.initialize()
            return self._dispatch()
        except ValueError as e:
            # ConfigError and invalid command arguments
            self._report(f"Configuration error: {e}")
            return EXIT_CONFIG_ERROR
        except OSError as e:
            self._report(f"I/O error: {e}")
            return EXIT_CONFIG_ERROR
        except RuntimeError as e:
            self._report(f"Fatal error occurred: {e}")
            return EXIT_FAILURE
        except KeyboardInterrupt:
            self._report("Operation cancelled by user")
            return EXIT_FAILURE
        finally:
            self.cleanup()

    def _report(self, message: str) -> None:
        if self.logger is not None:
            self.logger.error(message)
        else:
            print(message, file=sys.stderr)

    def _dispatch(self) -> int:
        args = self.args
        jobs = getattr(args, 'jobs', None) or self.environment.jobs
        if args.command == 'solve':
            return cmd_solve(self.config, self.out_dir, args.method, args.certify, self.settings,
                             args.timing, self.logger)
        if args.command == 'sweep':
            cmd_sweep(self.config, args.parameter, self.out_dir, args.grid, args.trials, args.method,
                      args.certify, jobs, self.settings, args.timing, self.logger)
            return EXIT_OK
        if args.command == 'verify':
            exit_code, summary = cmd_verify(self.config, args.trials, args.perturb_power, self.settings, self.logger)
            yaml.safe_dump(summary, sys.stdout, sort_keys=False)
            return exit_code
        if args.command == 'bench':
            cmd_bench(self.config, self.out_dir, args.grid, args.trials, args.method,
                      settings=self.settings, logger=self.logger)
            return EXIT_OK
        raise ValueError(f"unknown command '{args.command}'")

    def cleanup(self) -> None:
        """Clean up resources."""
        if self.logger is not None:
            self.logger.info("Application shutdown complete")
        shutdown_logging()


def main(argv: Optional[List[str]] = None) -> int:
    return JfcbdApp(argv).run()


if __name__ == "__main__":
    sys.exit(main())
