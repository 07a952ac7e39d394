"""
Game core
Power/price data model, rates, QoS slack, feasibility and the sum-rate objective
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

# Relative slack on the sum-power invariant
BUDGET_TOLERANCE = 1e-9


@dataclass
class ChannelGains:
    """Gain tensor h[i][j][n] (BS i -> user served by BS j on channel n) and noise sigma[i][n]"""

    h: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)

    @property
    def num_bs(self) -> int:
        return self.h.shape[0]

    @property
    def num_channels(self) -> int:
        return self.h.shape[2]

    def validate(self):
        if self.h.ndim != 3 or self.h.shape[0] != self.h.shape[1]:
            raise DomainError(f"gain tensor must be (M+1)x(M+1)xN, got {self.h.shape}")
        if self.sigma.shape != (self.h.shape[0], self.h.shape[2]):
            raise DomainError(f"noise matrix must be (M+1)xN, got {self.sigma.shape}")
        if not np.all(np.isfinite(self.h)) or np.any(self.h < 0):
            raise DomainError("gains must be finite and nonnegative")
        if not np.all(np.isfinite(self.sigma)) or np.any(self.sigma <= 0):
            raise DomainError("noise powers must be finite and positive")
        return self

    def direct(self) -> np.ndarray:
        """h_ii(n) as an (M+1)xN matrix"""
        idx = np.arange(self.num_bs)
        return self.h[idx, idx, :]

    def cross(self) -> np.ndarray:
        """Gain tensor with the direct links zeroed"""
        h = self.h.copy()
        idx = np.arange(self.num_bs)
        h[idx, idx, :] = 0.0
        return h


@dataclass
class Budgets:
    """Per-BS sum budgets and per-channel peak powers (W)"""

    p_sum: np.ndarray
    p_peak: np.ndarray

    def __post_init__(self):
        self.p_sum = np.asarray(self.p_sum, dtype=float)
        self.p_peak = np.asarray(self.p_peak, dtype=float)

    @property
    def p_max(self) -> np.ndarray:
        return np.minimum(self.p_sum[:, None], self.p_peak)

    def tol_budget(self, i: Optional[int] = None):
        if i is None:
            return BUDGET_TOLERANCE * self.p_sum
        return BUDGET_TOLERANCE * self.p_sum[i]

    def validate(self):
        if self.p_sum.ndim != 1 or self.p_peak.ndim != 2 or self.p_peak.shape[0] != self.p_sum.shape[0]:
            raise ConfigError(f"budget shapes disagree: p_sum {self.p_sum.shape}, p_peak {self.p_peak.shape}")
        if np.any(self.p_sum <= 0) or np.any(self.p_peak <= 0):
            raise ConfigError("sum and peak budgets must be positive")
        return self

    def with_peak(self, p_peak: np.ndarray) -> 'Budgets':
        """Copy with tightened peaks (zero peaks allowed, used by the QoS-NEP caps)"""
        return Budgets(self.p_sum.copy(), np.asarray(p_peak, dtype=float))


@dataclass
class PowerProfile:
    """(M+1)xN power matrix in W"""

    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)

    def satisfies(self, budgets: Budgets) -> bool:
        p = self.p
        return bool(
            np.all(p >= 0)
            and np.all(p <= budgets.p_peak * (1 + BUDGET_TOLERANCE))
            and np.all(p.sum(axis=1) <= budgets.p_sum + budgets.tol_budget())
        )


@dataclass
class PriceVector:
    """QoS prices mu_n, one per MUE channel"""

    mu: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)

    def validate(self):
        if not np.all(np.isfinite(self.mu)) or np.any(self.mu < 0):
            raise DomainError("prices must be finite and nonnegative")
        return self


@dataclass
class QosSpec:
    """MUE rate targets gamma_n and the scaled direct gain h00_tilde(n)

    gamma_n = 0 drops the QoS row of channel n: its slack is -inf, its
    h00_tilde is stored as 0 and its price stays 0.
    """

    gamma: np.ndarray
    h00_tilde: np.ndarray = field(default=None)

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        if np.any(self.gamma < 0) or not np.all(np.isfinite(self.gamma)):
            raise ConfigError("QoS targets must be finite and nonnegative")

    @classmethod
    def from_gains(cls, gamma, gains: ChannelGains) -> 'QosSpec':
        gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (gains.num_channels,)).copy()
        qos = cls(gamma)
        h00 = gains.h[0, 0, :]
        active = qos.active
        tilde = np.zeros_like(gamma)
        tilde[active] = h00[active] / np.expm1(gamma[active])
        qos.h00_tilde = tilde
        return qos

    @property
    def active(self) -> np.ndarray:
        return self.gamma > 0


@dataclass
class NetworkInstance:
    """Everything an algorithm needs about one network realization"""

    gains: ChannelGains
    budgets: Budgets
    qos: QosSpec

    @property
    def num_bs(self) -> int:
        return self.gains.num_bs

    @property
    def num_channels(self) -> int:
        return self.gains.num_channels

    def tol_qos(self) -> float:
        return 1e-6 * float(np.min(self.gains.sigma[0]))


class Feasibility(NamedTuple):
    feasible: bool
    witness: np.ndarray


def interference(gains: ChannelGains, p: np.ndarray) -> np.ndarray:
    """I_{i,n}(p_{-i}) = sigma_i(n) + sum_{j != i} h_ji(n) p_j(n)"""
    return gains.sigma + np.einsum('jin,jn->in', gains.cross(), p)


def total_interference(gains: ChannelGains, p: np.ndarray) -> np.ndarray:
    """I_{i,n}(p) = sigma_i(n) + sum_j h_ji(n) p_j(n), own signal included"""
    return gains.sigma + np.einsum('jin,jn->in', gains.h, p)


def rates_matrix(gains: ChannelGains, p: np.ndarray) -> np.ndarray:
    """R_{i,n}(p) for every BS and channel, in nats"""
    return np.log1p(gains.direct() * p / interference(gains, p))


def rate_per_channel(gains: ChannelGains, p: np.ndarray, i: int, n: int) -> float:
    p = np.asarray(p, dtype=float)
    signal = gains.h[i, i, n] * p[i, n]
    noise = gains.sigma[i, n] + sum(
        gains.h[j, i, n] * p[j, n] for j in range(gains.num_bs) if j != i
    )
    return float(np.log1p(signal / noise))


def total_rate(gains: ChannelGains, p: np.ndarray, i: int) -> float:
    return float(rates_matrix(gains, p)[i].sum())


def total_rates(gains: ChannelGains, p: np.ndarray) -> np.ndarray:
    return rates_matrix(gains, p).sum(axis=1)


def sum_rate(gains: ChannelGains, p: np.ndarray) -> float:
    return float(rates_matrix(gains, p).sum())


def qos_slacks(gains: ChannelGains, p: np.ndarray, qos: QosSpec) -> np.ndarray:
    """g_n(p) for every channel; -inf on channels without a QoS target"""
    p = np.asarray(p, dtype=float)
    interference_at_mue = gains.sigma[0] + np.einsum('jn,jn->n', gains.h[1:, 0, :], p[1:])
    g = interference_at_mue - qos.h00_tilde * p[0]
    return np.where(qos.active, g, -np.inf)


def qos_slack(gains: ChannelGains, p: np.ndarray, qos: QosSpec, n: int) -> float:
    return float(qos_slacks(gains, p, qos)[n])


def feasibility_check(gains: ChannelGains, budgets: Budgets, qos: QosSpec) -> Feasibility:
    """Whether the MBS alone can meet every MUE target within its power set

    The witness is the minimal per-channel MBS power r(n) = sigma_0 (e^gamma - 1) / h00.
    """
    h00 = gains.h[0, 0, :]
    with np.errstate(divide='ignore'):
        required = np.where(qos.active, gains.sigma[0] * np.expm1(qos.gamma) / h00, 0.0)
    feasible = bool(
        np.all(required <= budgets.p_peak[0])
        and required.sum() <= budgets.p_sum[0]
    )
    if not feasible:
        logger.warning(f"QoS targets infeasible: MBS needs {required.sum():.6g} W of {budgets.p_sum[0]:.6g} W")
    return Feasibility(feasible, required)


def project_budget(p_i_raw, budgets: Budgets, i: int) -> np.ndarray:
    """Euclidean projection onto {0 <= p <= p_peak_i, sum(p) <= p_sum_i}"""
    p_raw = np.asarray(p_i_raw, dtype=float)
    peak = budgets.p_peak[i]
    clipped = np.clip(p_raw, 0.0, peak)
    if clipped.sum() <= budgets.p_sum[i]:
        return clipped

    # Shift theta >= 0 so that the clipped sum hits the budget exactly
    def excess(theta):
        return np.clip(p_raw - theta, 0.0, peak).sum() - budgets.p_sum[i]

    theta = brentq(excess, 0.0, float(np.max(p_raw)), xtol=1e-300, rtol=1e-15)
    return np.clip(p_raw - theta, 0.0, peak)


def project_profile(p_raw, budgets: Budgets) -> np.ndarray:
    p_raw = np.asarray(p_raw, dtype=float)
    return np.vstack([project_budget(p_raw[i], budgets, i) for i in range(p_raw.shape[0])])


@dataclass
class NetworkScaling:
    """Maps a network to unit powers (fractions of each sum budget) and noise-relative gains

    Rates are unchanged by the map; slacks scale by 1 / noise[0] and prices by noise[0].
    """

    power: np.ndarray
    noise: np.ndarray

    def to_unit(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) / self.power[:, None]

    def to_watts(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.power[:, None]

    def prices_to_raw(self, mu_unit) -> np.ndarray:
        return np.asarray(mu_unit, dtype=float) / self.noise[0]

    def prices_from_raw(self, mu) -> np.ndarray:
        return np.asarray(mu, dtype=float) * self.noise[0]


def normalize_network(net: NetworkInstance):
    """(unit network, scaling); every sum budget becomes 1 and each receiver's weakest noise 1"""
    scaling = NetworkScaling(net.budgets.p_sum.copy(), np.min(net.gains.sigma, axis=1))
    h = net.gains.h * scaling.power[:, None, None] / scaling.noise[None, :, None]
    gains = ChannelGains(h, net.gains.sigma / scaling.noise[:, None])
    budgets = Budgets(np.ones(net.num_bs), net.budgets.p_peak / scaling.power[:, None])
    qos = QosSpec.from_gains(net.qos.gamma, gains)
    return NetworkInstance(gains, budgets, qos), scaling
