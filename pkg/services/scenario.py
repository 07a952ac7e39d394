"""
Scenario generation
Random two-tier network instances (geometry, fading, budgets, noise) and unit conversion

Random streams: numpy PCG64 seeded with SeedSequence(seed, spawn_key=(version, stream, *entity)).
Every entity or link owns its stream, so adding SBSs or channels never perturbs the draws of
the existing ones.
"""

import json
import logging
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, DomainError
from .game_core import Budgets, ChannelGains, NetworkInstance, QosSpec

logger = logging.getLogger(__name__)

PRNG_NAME = 'PCG64'
PRNG_STREAM_VERSION = 1

# Stream identifiers
STREAM_SBS = 0
STREAM_MUE = 1
STREAM_SUE = 2
STREAM_FADING = 3

MIN_DISTANCE_KM = 0.001


@dataclass
class ScenarioConfig:
    num_sbs: int = 6
    num_channels: int = 10
    macro_radius_km: float = 0.5
    small_radius_km: float = 0.1
    mbs_sum_power_dbm: float = 46.0
    sbs_sum_power_dbm: float = 33.0
    peak_power_dbm: Optional[float] = None
    noise_dbm: float = -114.0
    qos_nats: Union[float, Sequence[float]] = 2.0
    seed: int = 0
    fading: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> 'ScenarioConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        try:
            cfg = cls(**data)
        except TypeError as e:
            raise ConfigError(f"bad scenario config: {e}") from e
        return cfg.validate()

    @classmethod
    def from_json(cls, path) -> 'ScenarioConfig':
        try:
            with open(path, encoding='utf-8') as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read scenario config {path}: {e}") from e
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['qos_nats'] = self.qos_vector().tolist()
        return data

    def qos_vector(self) -> np.ndarray:
        gamma = np.asarray(self.qos_nats, dtype=float)
        if gamma.ndim == 0:
            return np.full(self.num_channels, float(gamma))
        return gamma.copy()

    def validate(self) -> 'ScenarioConfig':
        if not isinstance(self.num_sbs, (int, np.integer)) or self.num_sbs < 1:
            raise ConfigError(f"num_sbs must be a positive integer, got {self.num_sbs!r}")
        if not isinstance(self.num_channels, (int, np.integer)) or self.num_channels < 1:
            raise ConfigError(f"num_channels must be a positive integer, got {self.num_channels!r}")
        if self.macro_radius_km <= 0 or self.small_radius_km <= 0:
            raise ConfigError("cell radii must be positive")
        if self.small_radius_km >= self.macro_radius_km:
            raise ConfigError("small-cell radius must be below the macrocell radius")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        gamma = np.asarray(self.qos_nats, dtype=float)
        if gamma.ndim > 1 or (gamma.ndim == 1 and gamma.shape[0] != self.num_channels):
            raise ConfigError(f"qos_nats must be a scalar or have {self.num_channels} entries")
        if np.any(gamma < 0) or not np.all(np.isfinite(gamma)):
            raise ConfigError("qos_nats entries must be finite and nonnegative")
        return self


@dataclass
class Topology:
    """Positions in km; the MBS sits at the origin"""

    mbs_position: np.ndarray
    sbs_positions: np.ndarray   # (M, 2)
    mue_positions: np.ndarray   # (N, 2)
    sue_positions: np.ndarray   # (M, N, 2)

    def bs_position(self, i: int) -> np.ndarray:
        return self.mbs_position if i == 0 else self.sbs_positions[i - 1]

    def user_position(self, j: int, n: int) -> np.ndarray:
        """User served by BS j on channel n: MUE n for j = 0, SUE (j, n) otherwise"""
        return self.mue_positions[n] if j == 0 else self.sue_positions[j - 1, n]


def _stream(seed: int, stream: int, *entity: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=(PRNG_STREAM_VERSION, stream, *entity))
    return np.random.Generator(np.random.PCG64(seq))


def sample_in_disk(rng: np.random.Generator, center, radius: float, size: Optional[int] = None) -> np.ndarray:
    """Uniform points in a disk (polar sampling, radius drawn as R*sqrt(U))"""
    shape = () if size is None else (size,)
    r = radius * np.sqrt(rng.random(shape))
    theta = 2.0 * np.pi * rng.random(shape)
    offset = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
    return np.asarray(center, dtype=float) + offset


def generate_topology(cfg: ScenarioConfig) -> Topology:
    cfg.validate()
    origin = np.zeros(2)
    sbs = np.array([
        sample_in_disk(_stream(cfg.seed, STREAM_SBS, i), origin, cfg.macro_radius_km)
        for i in range(cfg.num_sbs)
    ])
    mue = np.array([
        sample_in_disk(_stream(cfg.seed, STREAM_MUE, n), origin, cfg.macro_radius_km)
        for n in range(cfg.num_channels)
    ])
    sue = np.array([
        [sample_in_disk(_stream(cfg.seed, STREAM_SUE, i, n), sbs[i], cfg.small_radius_km)
         for n in range(cfg.num_channels)]
        for i in range(cfg.num_sbs)
    ])
    return Topology(origin, sbs, mue, sue)


def path_loss_linear(d_km):
    """Linear power gain 10^(-(128.1 + 37.6 log10 d)/10), d in km clamped at 1 m"""
    d = np.asarray(d_km, dtype=float)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise DomainError(f"distance must be positive and finite, got {d_km!r}")
    d = np.maximum(d, MIN_DISTANCE_KM)
    gain = 10.0 ** (-(128.1 + 37.6 * np.log10(d)) / 10.0)
    return float(gain) if gain.ndim == 0 else gain


def dbm_to_watt(x_dbm):
    watts = 10.0 ** ((np.asarray(x_dbm, dtype=float) - 30.0) / 10.0)
    return float(watts) if watts.ndim == 0 else watts


def sample_gains(topology: Topology, cfg: ScenarioConfig) -> ChannelGains:
    num_bs = cfg.num_sbs + 1
    n_ch = cfg.num_channels
    users = np.empty((num_bs, n_ch, 2))
    users[0] = topology.mue_positions
    users[1:] = topology.sue_positions
    bs = np.vstack([topology.mbs_position[None, :], topology.sbs_positions])

    # dist[i, j, n] between BS i and the user served by BS j on channel n
    dist = np.linalg.norm(bs[:, None, None, :] - users[None, :, :, :], axis=-1)
    h = path_loss_linear(np.maximum(dist, MIN_DISTANCE_KM))
    if cfg.fading:
        for i in range(num_bs):
            for j in range(num_bs):
                h[i, j] *= _stream(cfg.seed, STREAM_FADING, i, j).exponential(1.0, n_ch)
    sigma = np.full((num_bs, n_ch), dbm_to_watt(cfg.noise_dbm))
    return ChannelGains(h, sigma).validate()


def budgets_from_config(cfg: ScenarioConfig) -> Budgets:
    p_sum = np.array([dbm_to_watt(cfg.mbs_sum_power_dbm)] + [dbm_to_watt(cfg.sbs_sum_power_dbm)] * cfg.num_sbs)
    if cfg.peak_power_dbm is None:
        p_peak = np.repeat(p_sum[:, None], cfg.num_channels, axis=1)
    else:
        p_peak = np.full((cfg.num_sbs + 1, cfg.num_channels), dbm_to_watt(cfg.peak_power_dbm))
    return Budgets(p_sum, p_peak).validate()


def build_network(cfg: ScenarioConfig, topology: Optional[Topology] = None) -> NetworkInstance:
    """Scenario config -> gains, budgets and QoS targets of one realization"""
    topology = topology or generate_topology(cfg)
    gains = sample_gains(topology, cfg)
    budgets = budgets_from_config(cfg)
    qos = QosSpec.from_gains(cfg.qos_vector(), gains)
    logger.debug(f"Scenario seed={cfg.seed}: M={cfg.num_sbs}, N={cfg.num_channels}")
    return NetworkInstance(gains, budgets, qos)
