"""Physical configuration to randomized problem instance: geometry, path loss, channels, steering vectors."""
import copy
import logging
import math
from dataclasses import dataclass, asdict
from typing import Dict, Optional, Tuple, Union
import numpy as np
from config.constants import (
    DEFAULT_SYSTEM_CONFIG,
    PATH_LOSS_INTERCEPT_DB,
    PATH_LOSS_SLOPE_DB,
)
from core.model import ProblemInstance, assemble_instance
from utils.file_io import ConfigError
from utils.helpers import config_hash, db_to_linear, dbm_to_watt
from utils.logging import get_logger

# Rejection sampling bound for placements that must keep min_distance from every TX
MAX_PLACEMENT_DRAWS = 10_000


@dataclass(frozen=True)
class SystemConfig:
    L: int
    N_t: int
    M: int
    K: int
    carrier_freq: float
    bandwidth: float
    noise_psd: float
    C_dl: float
    C_ul: float
    gamma_c: Union[float, Tuple[float, ...]]
    gamma_s: float
    user_radius: float
    target_radius: float
    tx_spacing: float
    min_distance: float
    seed: int

    def __post_init__(self):
        self._validate()

    @property
    def N(self) -> int:
        return self.L * self.N_t

    def _validate(self) -> None:
        for name in ('L', 'N_t', 'M', 'K'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"must be an integer ≥ 1, got {value!r}", field=f"network.{name}")
        if self.N < self.K:
            raise ConfigError(f"N = L·N_t = {self.N} must be at least K = {self.K}", field="network.K")
        for section, name in (('radio', 'bandwidth'), ('radio', 'carrier_freq'),
                              ('fronthaul', 'C_dl'), ('fronthaul', 'C_ul'),
                              ('geometry', 'user_radius'), ('geometry', 'target_radius')):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"must be finite and positive, got {value}", field=f"{section}.{name}")
        for name in ('tx_spacing', 'min_distance'):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"must be finite and nonnegative, got {value}", field=f"geometry.{name}")
        if not math.isfinite(self.noise_psd):
            raise ConfigError("must be finite", field="radio.noise_psd")
        if not math.isfinite(self.gamma_s):
            raise ConfigError("must be finite", field="requirements.gamma_s")
        gamma_c = self.gamma_c if isinstance(self.gamma_c, tuple) else (self.gamma_c,)
        if isinstance(self.gamma_c, tuple) and len(gamma_c) != self.K:
            raise ConfigError(f"expected 1 or K = {self.K} values, got {len(gamma_c)}", field="requirements.gamma_c")
        if not all(math.isfinite(v) for v in gamma_c):
            raise ConfigError("all values must be finite", field="requirements.gamma_c")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError(f"must be an unsigned integer, got {self.seed!r}", field="seed")

    @property
    def gamma_c_linear(self) -> np.ndarray:
        return np.broadcast_to(db_to_linear(np.asarray(self.gamma_c, dtype=float)), (self.K,)).copy()

    @property
    def gamma_s_linear(self) -> float:
        return float(db_to_linear(self.gamma_s))

    @property
    def noise_power(self) -> float:
        """Noise power over the band in watts."""
        return float(dbm_to_watt(self.noise_psd) * self.bandwidth)

    @classmethod
    def from_dict(cls, config: Dict) -> "SystemConfig":
        """Build from the nested section mapping used in YAML files."""
        data = copy.deepcopy(config)
        lines = data.pop('_lines', {}) or {}
        flat = {}
        try:
            for section, keys in (('network', ('L', 'N_t', 'M', 'K')),
                                  ('radio', ('carrier_freq', 'bandwidth', 'noise_psd')),
                                  ('fronthaul', ('C_dl', 'C_ul')),
                                  ('requirements', ('gamma_c', 'gamma_s')),
                                  ('geometry', ('user_radius', 'target_radius', 'tx_spacing', 'min_distance'))):
                values = {**DEFAULT_SYSTEM_CONFIG[section], **(data.get(section) or {})}
                for key in keys:
                    flat[key] = values[key]
            flat['seed'] = data.get('seed', DEFAULT_SYSTEM_CONFIG['seed'])
            for key in ('carrier_freq', 'bandwidth', 'noise_psd', 'C_dl', 'C_ul', 'gamma_s',
                        'user_radius', 'target_radius', 'tx_spacing', 'min_distance'):
                flat[key] = float(flat[key])
            gamma_c = flat['gamma_c']
            flat['gamma_c'] = tuple(float(v) for v in gamma_c) if isinstance(gamma_c, (list, tuple)) else float(gamma_c)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"invalid value: {e}")
        try:
            return cls(**flat)
        except ConfigError as e:
            if e.line is None and e.field in lines:
                raise ConfigError(e.message, field=e.field, line=lines[e.field]) from None
            raise

    def to_dict(self) -> Dict:
        """Nested section mapping, the inverse of from_dict."""
        flat = asdict(self)
        gamma_c = list(flat['gamma_c']) if isinstance(flat['gamma_c'], tuple) else flat['gamma_c']
        return {
            'network': {'L': int(self.L), 'N_t': int(self.N_t), 'M': int(self.M), 'K': int(self.K)},
            'radio': {'carrier_freq': self.carrier_freq, 'bandwidth': self.bandwidth, 'noise_psd': self.noise_psd},
            'fronthaul': {'C_dl': self.C_dl, 'C_ul': self.C_ul},
            'requirements': {'gamma_c': gamma_c, 'gamma_s': self.gamma_s},
            'geometry': {
                'user_radius': self.user_radius,
                'target_radius': self.target_radius,
                'tx_spacing': self.tx_spacing,
                'min_distance': self.min_distance,
            },
            'seed': int(self.seed),
        }

    def replace(self, **changes) -> "SystemConfig":
        """Copy with some fields changed (validated again)."""
        flat = asdict(self)
        flat.update(changes)
        return SystemConfig(**flat)

    def hash(self) -> str:
        return config_hash(self.to_dict())


@dataclass(frozen=True)
class Geometry:
    tx_positions: np.ndarray     # L x 2
    rx_position: np.ndarray      # 2
    user_positions: np.ndarray   # K x 2
    target_position: np.ndarray  # 2
    theta_t: np.ndarray          # L
    theta_r: float

    def user_distances(self) -> np.ndarray:
        """K x L matrix of TX-user distances."""
        return np.linalg.norm(self.user_positions[:, None, :] - self.tx_positions[None, :, :], axis=-1)

    def target_distances(self) -> Tuple[np.ndarray, float]:
        """TX-target distances (L) and the target-RX distance."""
        return (np.linalg.norm(self.tx_positions - self.target_position, axis=-1),
                float(np.linalg.norm(self.rx_position - self.target_position)))


def path_loss_db(distance_m: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Path loss 128.1 + 37.6·log10(d) with d in kilometers."""
    distance = np.asarray(distance_m, dtype=float)
    if np.any(~(distance > 0)):
        raise ValueError(f"distance must be positive, got {distance_m}")
    loss = PATH_LOSS_INTERCEPT_DB + PATH_LOSS_SLOPE_DB * np.log10(distance / 1000.0)
    return float(loss) if loss.ndim == 0 else loss


def path_gain(distance_m: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Linear power gain 10^(-PL/10)."""
    return db_to_linear(-np.asarray(path_loss_db(distance_m)))


def steering_vector(theta: float, n: int) -> np.ndarray:
    """Uniform linear array response (1/√n)·exp(-jπ i cosθ), i = 0..n-1."""
    if n < 1:
        raise ValueError(f"antenna count must be at least 1, got {n}")
    return np.exp(-1j * np.pi * np.arange(n) * np.cos(theta)) / np.sqrt(n)


def _departure_angle(origin: np.ndarray, point: np.ndarray) -> float:
    # Arrays lie on the x-axis; the angle is measured from the array axis
    delta = point - origin
    theta = float(np.arccos(np.clip(delta[0] / np.linalg.norm(delta), -1.0, 1.0)))
    eps = 1e-9
    return float(np.clip(theta, eps, np.pi - eps))


def _draw_in_disc(rng: np.random.Generator, radius: float, avoid: np.ndarray, min_distance: float) -> np.ndarray:
    for _ in range(MAX_PLACEMENT_DRAWS):
        r = radius * np.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2.0 * np.pi)
        point = np.array([r * np.cos(phi), r * np.sin(phi)])
        if np.min(np.linalg.norm(avoid - point, axis=-1)) > max(min_distance, 0.0):
            return point
    raise RuntimeError(f"could not place a point at least {min_distance} m from all anchors "
                       f"within radius {radius} m")


def draw_geometry(cfg: SystemConfig, rng: np.random.Generator) -> Geometry:
    """Place TXs on the x-axis and draw users, target and RX uniformly in discs around the TX midpoint."""
    offsets = (np.arange(cfg.L) - (cfg.L - 1) / 2.0) * cfg.tx_spacing
    tx_positions = np.column_stack([offsets, np.zeros(cfg.L)])

    users = np.array([_draw_in_disc(rng, cfg.user_radius, tx_positions, cfg.min_distance) for _ in range(cfg.K)])
    target = _draw_in_disc(rng, cfg.target_radius, tx_positions, cfg.min_distance)
    rx = _draw_in_disc(rng, cfg.target_radius, target[None, :], cfg.min_distance)

    theta_t = np.array([_departure_angle(tx, target) for tx in tx_positions])
    theta_r = _departure_angle(rx, target)
    return Geometry(
        tx_positions=tx_positions,
        rx_position=rx,
        user_positions=users,
        target_position=target,
        theta_t=theta_t,
        theta_r=theta_r,
    )


def draw_channels(cfg: SystemConfig, geometry: Geometry, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """User channels h (K x N) with Rayleigh fading per TX segment, and sensing path gains g (L)."""
    gains = path_gain(geometry.user_distances())  # K x L
    fading = (rng.standard_normal((cfg.K, cfg.N)) + 1j * rng.standard_normal((cfg.K, cfg.N))) / np.sqrt(2.0)
    h = fading * np.sqrt(np.repeat(gains, cfg.N_t, axis=1))

    tx_target, target_rx = geometry.target_distances()
    g_power = path_gain(tx_target) * path_gain(target_rx)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=cfg.L)
    g = np.sqrt(g_power) * np.exp(1j * phases)
    return h, g


def generate_instance(
    cfg: SystemConfig,
    geometry: Optional[Geometry] = None,
    logger: Optional[logging.Logger] = None,
) -> ProblemInstance:
    """
    Build a seeded problem instance from a system configuration.

    Args:
        cfg: Validated system configuration; cfg.seed drives every random draw
        geometry: Optional fixed placement (random draws then only cover fading and phases)
        logger: Optional logger

    Raises:
        SensingThresholdError: If the sensing target cannot be met for any power (Γ_s·β ≥ M)
    """
    logger = get_logger(logger)
    rng = np.random.default_rng(cfg.seed)
    if geometry is None:
        geometry = draw_geometry(cfg, rng)
    h, g = draw_channels(cfg, geometry, rng)

    a_t = np.concatenate([steering_vector(theta, cfg.N_t) for theta in geometry.theta_t])
    a_r = steering_vector(geometry.theta_r, cfg.M)
    noise = cfg.noise_power

    instance = assemble_instance(
        L=cfg.L, N_t=cfg.N_t, M=cfg.M,
        h=h, g=g, a_t=a_t, a_r=a_r,
        sigma_v2=noise, sigma_z2=noise,
        cap_dl=cfg.C_dl / cfg.bandwidth, cap_ul=cfg.C_ul / cfg.bandwidth,
        gamma_k=cfg.gamma_c_linear, gamma_s=cfg.gamma_s_linear,
        bandwidth=cfg.bandwidth,
    )
    logger.debug(
        f"Instance seed={cfg.seed}: L={cfg.L}, N_t={cfg.N_t}, M={cfg.M}, K={cfg.K}, "
        f"α={instance.alpha:.4g}, β={instance.beta:.4g}, Γ̃_s={instance.gamma_tilde_s:.3e}"
    )
    return instance
