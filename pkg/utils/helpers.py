import hashlib
from typing import Optional, Tuple
import numpy as np
import yaml
from scipy import linalg


def db_to_linear(value_db):
    """Convert a power ratio in dB to linear scale."""
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    """Convert a linear power ratio to dB."""
    return 10.0 * np.log10(np.asarray(value, dtype=float))


def dbm_to_watt(value_dbm):
    """Convert dBm to watts."""
    return 10.0 ** ((np.asarray(value_dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(value_w):
    """Convert watts to dBm."""
    return 10.0 * np.log10(np.asarray(value_w, dtype=float)) + 30.0


def hermitian(matrix: np.ndarray) -> np.ndarray:
    """Symmetrize a nearly Hermitian matrix to suppress round-off asymmetry."""
    return 0.5 * (matrix + matrix.conj().T)


def batch_quad_form(matrix: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Real parts of v_k^H A v_k for each row v_k of `vectors`."""
    return np.real(np.einsum('ki,ij,kj->k', vectors.conj(), matrix, vectors))


def try_cholesky(matrix: np.ndarray) -> Optional[Tuple[np.ndarray, bool]]:
    """Cholesky factor of a Hermitian matrix, or None when it is not positive definite."""
    try:
        return linalg.cho_factor(matrix, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return None


def eig_extremes(matrix: np.ndarray) -> Tuple[float, float]:
    """Smallest and largest eigenvalues of a Hermitian matrix."""
    values = linalg.eigvalsh(hermitian(matrix))
    return float(values[0]), float(values[-1])


def freeze(array: np.ndarray) -> np.ndarray:
    """Return a read-only copy of an array."""
    frozen = np.array(array, copy=True)
    frozen.setflags(write=False)
    return frozen


def config_hash(config_dict: dict, length: int = 12) -> str:
    """Stable short hash of a config dictionary (canonical YAML, sorted keys)."""
    canonical = yaml.safe_dump(config_dict, sort_keys=True, default_flow_style=True)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:length]


def relative_gap(value: float, reference: float) -> float:
    """(value - reference) / |reference|, guarded against a zero reference."""
    return float((value - reference) / max(abs(reference), np.finfo(float).tiny))
