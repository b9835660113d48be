from pathlib import Path
import sys

# Path configurations
BASE_DIR = Path(__file__).resolve().parent.parent
CONFIG_DIR = Path(sys.executable).parent if getattr(sys, 'frozen', False) else Path(__file__).resolve().parent.parent
SYSTEM_CONFIG_FILE = CONFIG_DIR / "config" / "system_config.yml"
ENV_FILE = CONFIG_DIR / "config" / "jfcbd.env"
DEFAULT_OUTPUT_DIR = Path("results")

# Logging configurations
LOGGER_NAME = "JFCBD"
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
LOG_FILENAME_FORMAT = "JFCBD_{timestamp}.log"

# Output file names
SOLUTION_FILENAME = "solution.yml"
REPORT_FILENAME = "report.yml"
TRACE_FILENAME = "trace.log"
SUMMARY_CSV_FILENAME = "summary.csv"
SWEEP_CSV_FILENAME = "sweep_{parameter}.csv"
BENCH_CSV_FILENAME = "bench.csv"

# Solution file format
SOLUTION_FORMAT_VERSION = 1

# Physical constants of the path loss model: 128.1 + 37.6 log10(d_km)
PATH_LOSS_INTERCEPT_DB = 128.1
PATH_LOSS_SLOPE_DB = 37.6

# Solver defaults
FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX_ITER = 10_000
START_DOUBLING_CAP = 60
MU_DIVERGENCE_FACTOR = 1e12
BISECTION_TOL = 1e-6
BRACKET_REL_WIDTH = 1e-12
# Near the end of the dual curve λ is handed to a continuation in s = mean(μ/μ_P4)
BOUNDARY_HANDOFF_WIDTH = 1e-2
BOUNDARY_REL_WIDTH = 1e-9
CURVE_TOL = 1e-10
CURVE_STALL_TOL = 1e-6
CURVE_NEWTON_MAX_ITER = 50
CURVE_MAX_SOLVES = 200
SDP_TOL = 1e-8
SDP_MAX_ITER = 100
FEASIBILITY_TOL = 1e-6
CERTIFY_TOL = 1e-4
SDP_MAX_ANTENNAS = 16
SDP_MAX_USERS = 4

# Timing methodology for bench
BENCH_REPETITIONS = 5

# CSV schema
CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = [
    'schema_version',
    'config_hash',
    'seed',
    'parameter',
    'value',
    'trial',
    'method',
    'status',
    'objective_w',
    'objective_dbm',
    'lambda_star',
    'bisection_iterations',
    'inner_iterations',
    'scale_factor',
    'wall_time_s',
    'feasible',
    'certified_gap',
]
SWEEP_PARAMETERS = ('gamma_s', 'gamma_c', 'C_dl', 'C_ul', 'fronthaul', 'antennas')
METHODS = ('pd', 'sdr', 'baseline')

# Default sweep grids (dB for SINR targets, bit/s for capacities, N_t for antennas)
DEFAULT_SWEEP_GRIDS = {
    # 14 dB stays below the uplink threshold Γ_s·β < M of the desk configuration (14.47 dB)
    'gamma_s': [0.0, 5.0, 10.0, 14.0],
    'gamma_c': [0.0, 5.0, 10.0, 15.0],
    'C_dl': [3.0e7, 4.0e7, 6.0e7, 9.0e7, 1.2e8],
    'C_ul': [3.0e7, 4.0e7, 6.0e7, 9.0e7, 1.2e8],
    # sets C_dl and C_ul together
    'fronthaul': [3.0e7, 4.0e7, 6.0e7, 9.0e7, 1.2e8],
    'antennas': [4, 8],
}
DEFAULT_TRIALS = 20
DEFAULT_VERIFY_TRIALS = 50
VERIFY_RANDOM_POINTS = 100

# Exit statuses
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2

# Config sections: section -> allowed keys. `seed` lives at the top level.
CONFIG_SECTIONS = {
    'network': ('L', 'N_t', 'M', 'K'),
    'radio': ('carrier_freq', 'bandwidth', 'noise_psd'),
    'fronthaul': ('C_dl', 'C_ul'),
    'requirements': ('gamma_c', 'gamma_s'),
    'geometry': ('user_radius', 'target_radius', 'tx_spacing', 'min_distance'),
}

# YAML Config
DEFAULT_YAML_COMMENTS = """\
# Networked ISAC system configuration
#
# This YAML file describes one randomized problem instance family.
# Every key is optional; missing keys take the built-in defaults.
# Unknown sections or keys are rejected.
#
# network:      L (TX count), N_t (antennas per TX), M (RX antennas), K (users)
# radio:        carrier_freq (Hz), bandwidth (Hz), noise_psd (dBm/Hz)
# fronthaul:    C_dl, C_ul (fronthaul capacity per antenna, bit/s)
# requirements: gamma_c (dB, scalar or one value per user), gamma_s (dB)
# geometry:     user_radius, target_radius, tx_spacing, min_distance (meters)
# seed:         unsigned integer driving geometry and fading draws
"""

DEFAULT_SYSTEM_CONFIG = {
    'network': {
        'L': 2,
        'N_t': 4,
        'M': 4,
        'K': 2,
    },
    'radio': {
        'carrier_freq': 3.0e9,
        'bandwidth': 1.0e7,
        'noise_psd': -174.0,
    },
    'fronthaul': {
        'C_dl': 3.0e7,
        'C_ul': 3.0e7,
    },
    'requirements': {
        'gamma_c': 10.0,
        'gamma_s': 10.0,
    },
    'geometry': {
        'user_radius': 500.0,
        'target_radius': 500.0,
        'tx_spacing': 200.0,
        'min_distance': 10.0,
    },
    'seed': 1,
}

# Environment variables read through the dotenv layer
ENV_TEMPLATE = {
    '#': 'JFCBD runtime environment',
    'JFCBD_OUTPUT_DIR': str(DEFAULT_OUTPUT_DIR),
    'JFCBD_LOG_LEVEL': 'INFO',
    'JFCBD_JOBS': '1',
}
