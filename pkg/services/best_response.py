"""
Best responses
Closed-form per-BS maximizers for the priced, proximal and penalized (NUM) objectives

All four kinds maximize, channel by channel,

    log(h p + I) - w p - (a/2) p^2 + (a z) p - lambda p      over 0 <= p <= p_peak

where w collects the price (and NUM penalty) terms, a the proximal weights and a z the
anchors. lambda is the water level that enforces the sum budget.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NumericError
from .game_core import Budgets, ChannelGains, QosSpec, interference, total_interference

logger = logging.getLogger(__name__)

MAX_DOUBLINGS = 60
# brentq accepts rtol down to 4 machine epsilons
LAMBDA_RTOL = 1e-15


class BestResponseKind(Enum):
    PRICED = 'priced'
    PROXIMAL = 'proximal'
    NUM_PRICED = 'num_priced'
    NUM_PROXIMAL = 'num_proximal'


REQUIRED_PARAMETERS = {
    BestResponseKind.PRICED: set(),
    BestResponseKind.PROXIMAL: {'c', 'p_anchor'},
    BestResponseKind.NUM_PRICED: {'tau', 'q_anchor', 'penalty'},
    BestResponseKind.NUM_PROXIMAL: {'tau', 'q_anchor', 'penalty', 'c', 'p_anchor'},
}
OPTIONAL_PARAMETERS = {'c', 'tau', 'p_anchor', 'q_anchor', 'penalty'}


@dataclass
class BestResponseParams:
    """Kind plus the parameters it needs; mu is in raw QoS units and may be omitted (zero prices)"""

    kind: BestResponseKind
    mu: Optional[np.ndarray] = None
    c: Optional[float] = None
    tau: Optional[float] = None
    p_anchor: Optional[np.ndarray] = None
    q_anchor: Optional[np.ndarray] = None
    penalty: Optional[np.ndarray] = None

    def validate(self) -> 'BestResponseParams':
        required = REQUIRED_PARAMETERS[self.kind]
        for name in OPTIONAL_PARAMETERS:
            present = getattr(self, name) is not None
            if present != (name in required):
                state = 'missing' if name in required else 'not allowed'
                raise DomainError(f"{self.kind.value} best response: parameter '{name}' {state}")
        if self.c is not None and self.c <= 0:
            raise DomainError(f"proximal weight c must be positive, got {self.c}")
        if self.tau is not None and self.tau < 0:
            raise DomainError(f"tau must be nonnegative, got {self.tau}")
        if self.mu is not None and np.any(np.asarray(self.mu) < 0):
            raise DomainError("prices must be nonnegative")
        return self

    @property
    def quadratic_weight(self) -> float:
        return (self.c or 0.0) + (self.tau or 0.0)


@dataclass
class PenaltyGradient:
    b: np.ndarray
    omega: np.ndarray


def penalty_gradient(gains: ChannelGains, p: np.ndarray) -> PenaltyGradient:
    """omega_ij(n) = h_ij h_jj p_j / (I_j(p_-j) I_j(p)), b_i(n) = sum_{j != i} omega_ij(n)"""
    p = np.asarray(p, dtype=float)
    others = interference(gains, p)
    total = total_interference(gains, p)
    sensitivity = gains.direct() * p / (others * total)
    omega = gains.cross() * sensitivity[None, :, :]
    return PenaltyGradient(b=omega.sum(axis=1), omega=omega)


def solve_channels(h, noise, w, a: float, az, lam: float, peak) -> np.ndarray:
    """Per-channel maximizer at water level lam, clipped to [0, peak]"""
    h = np.asarray(h, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        if a == 0:
            denom = lam + w
            # A nonpositive denominator means the objective keeps increasing
            root = np.where(denom > 0, 1.0 / denom - noise / h, np.inf)
        else:
            phi = az - w - lam
            big_a = 2.0 * a * h
            big_b = h * phi - a * noise
            big_c = noise * phi + h
            sqrt_disc = np.sqrt((h * phi + a * noise) ** 2 + 4.0 * a * h ** 2)
            root = np.where(big_b >= 0, (big_b + sqrt_disc) / big_a, 2.0 * big_c / (sqrt_disc - big_b))
    if np.any(np.isnan(root)):
        raise NumericError(f"degenerate closed-form root at lambda={lam!r}")
    return np.clip(root, 0.0, peak)


def bisect_lambda(eval_p: Callable[[float], np.ndarray], p_sum: float,
                  tol_budget: Optional[float] = None) -> Tuple[float, np.ndarray]:
    """Smallest water level lambda >= 0 with sum(eval_p(lambda)) <= p_sum"""
    tol_budget = 1e-9 * p_sum if tol_budget is None else tol_budget
    p_free = eval_p(0.0)
    if p_free.sum() <= p_sum:
        return 0.0, p_free

    lo, hi = 0.0, 1.0
    for doubling in range(MAX_DOUBLINGS + 1):
        if eval_p(hi).sum() <= p_sum:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NumericError("no water-level bracket found", iterations=MAX_DOUBLINGS)

    try:
        lam = brentq(lambda x: eval_p(x).sum() - p_sum, lo, hi, xtol=1e-300, rtol=LAMBDA_RTOL, maxiter=500)
    except RuntimeError as e:
        raise NumericError(f"water-level search stalled: {e}") from e
    p_star = eval_p(lam)
    if p_star.sum() > p_sum + tol_budget:
        lam = lam * (1.0 + 1e-9)
        p_star = eval_p(lam)
        if p_star.sum() > p_sum + tol_budget:
            raise NumericError(f"budget residual {p_star.sum() - p_sum:.3g} above tolerance")
    return float(lam), p_star


def channel_response_map(i: int, gains: ChannelGains, p: np.ndarray, budgets: Budgets,
                         qos: QosSpec, params: BestResponseParams) -> Callable[[float], np.ndarray]:
    """lambda -> per-channel response of BS i against the other rows of p"""
    params.validate()
    p = np.asarray(p, dtype=float)
    h = gains.h[i, i]
    noise = gains.sigma[i] + np.einsum('jn,jn->n', gains.cross()[:, i, :], p)
    mu = np.zeros(gains.num_channels) if params.mu is None else np.asarray(params.mu, dtype=float)
    if i == 0:
        w = -mu * qos.h00_tilde
    else:
        w = mu * gains.h[i, 0]
    if params.penalty is not None:
        w = w + np.asarray(params.penalty)[i]
    a = params.quadratic_weight
    az = np.zeros(gains.num_channels)
    if params.c is not None:
        az = az + params.c * np.asarray(params.p_anchor)[i]
    if params.tau is not None:
        az = az + params.tau * np.asarray(params.q_anchor)[i]
    peak = budgets.p_peak[i]
    return lambda lam: solve_channels(h, noise, w, a, az, lam, peak)


def best_response(i: int, gains: ChannelGains, p: np.ndarray, budgets: Budgets,
                  qos: QosSpec, params: BestResponseParams) -> np.ndarray:
    """Best response of BS i; row i of p is ignored"""
    eval_p = channel_response_map(i, gains, p, budgets, qos, params)
    _, p_i = bisect_lambda(eval_p, budgets.p_sum[i], budgets.tol_budget(i))
    return p_i


def br_priced(i, gains, p_minus_i, mu, budgets, qos):
    params = BestResponseParams(BestResponseKind.PRICED, mu=mu)
    return best_response(i, gains, p_minus_i, budgets, qos, params)


def br_proximal(i, gains, p_minus_i, mu, p_k_anchor, c, budgets, qos):
    params = BestResponseParams(BestResponseKind.PROXIMAL, mu=mu, c=c, p_anchor=p_k_anchor)
    return best_response(i, gains, p_minus_i, budgets, qos, params)


def br_num_priced(i, gains, p_minus_i, mu, b, q_v_anchor, tau, budgets, qos):
    if tau <= 0:
        raise DomainError(f"penalized priced response needs tau > 0, got {tau}")
    params = BestResponseParams(BestResponseKind.NUM_PRICED, mu=mu, tau=tau, q_anchor=q_v_anchor, penalty=b)
    return best_response(i, gains, p_minus_i, budgets, qos, params)


def br_num_proximal(i, gains, p_minus_i, mu, b, q_v_anchor, tau, p_k_anchor, c, budgets, qos):
    params = BestResponseParams(BestResponseKind.NUM_PROXIMAL, mu=mu, tau=tau, q_anchor=q_v_anchor,
                                penalty=b, c=c, p_anchor=p_k_anchor)
    return best_response(i, gains, p_minus_i, budgets, qos, params)
