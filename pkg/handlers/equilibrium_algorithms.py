#!/usr/bin/env python3
"""
Equilibrium algorithms
Distributed best-response, pricing, proximal and penalized (NUM) power-control flows

Algorithms 2-5 iterate on the unit copy of the network (powers as fractions of each sum
budget, gains relative to receiver noise), so epsilon, c and tau are dimensionless. Prices
run in "price coordinates": with the default deficit scaling every QoS row is divided by
h00_tilde(n), so the slack reads as the share of the MBS budget missing on channel n.
Traces and summaries always carry watts and raw prices.
"""

import logging
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Callable, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from services.best_response import BestResponseKind, BestResponseParams, best_response, penalty_gradient
from services.certificates import Certificates, build_certificates, derived_constants
from services.errors import ConfigError, NumericError
from services.game_core import (NetworkInstance, feasibility_check, normalize_network, project_profile,
                                qos_slacks, rates_matrix, total_rates)
from services.oracle import KktReport, kkt_residual_P, kkt_residual_ve
from services.signaling import SignalingCounter

logger = logging.getLogger(__name__)

PRICE_SIGNS = ('projection', 'paper')
PRICE_STEPS = ('secant', 'constant')
PRICE_SCALINGS = ('deficit', 'raw')
INNER_SOLVERS = ('alg2', 'alg3')

# Complementarity max |mu_n g_n| (nats) accepted together with g_n <= tol_qos
KKT_TOL = 1e-6
# Step (unit powers) at which inner equilibrium sweeps stop
INNER_TOL = 1e-12
# Sweeps / fixed-point steps without a new smallest step before a loop is abandoned
STALL_WINDOW = 50
FIXED_POINT_STALL_WINDOW = 10
# Range for the certificate-derived proximal weights (unit powers); c and tau still double on stalls
PROXIMAL_C_FLOOR = 1.0
PROXIMAL_C_START = 10.0
PROXIMAL_TAU_START = 10.0
# Secant price steps stay within these multiples of the first step
STEP_FLOOR = 1e-6
STEP_CEILING = 1e8


class RunStatus(Enum):
    CONVERGED = 'Converged'
    MAX_ITERS = 'MaxIters'
    CERTIFICATE_FAILED = 'CertificateFailed'
    NUMERIC_ERROR = 'NumericError'


@dataclass
class AlgoParams:
    epsilon: float = 1e-7
    max_iters: int = 500
    max_outer_iters: int = 300
    max_fixed_point_iters: int = 100
    eta: Union[None, float, List[float]] = None
    c: Optional[float] = None
    tau: Optional[float] = None
    kappa: Union[None, float, List[float]] = None
    price_sign: str = 'projection'
    price_step: str = 'secant'
    price_scaling: str = 'deficit'
    warm_start: bool = True
    inner: str = 'alg2'
    c_coc_samples: int = 12
    seed: int = 0
    divergence_factor: float = 1e6
    c_growth_limit: int = 12
    jacobi: bool = True

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> 'AlgoParams':
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown algorithm parameters: {sorted(unknown)}")
        return cls(**data).validate()

    def with_overrides(self, **overrides) -> 'AlgoParams':
        return replace(self, **{k: v for k, v in overrides.items() if v is not None}).validate()

    def validate(self) -> 'AlgoParams':
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iters < 1 or self.max_outer_iters < 1 or self.max_fixed_point_iters < 1:
            raise ConfigError("iteration limits must be at least 1")
        if self.price_sign not in PRICE_SIGNS:
            raise ConfigError(f"price_sign must be one of {PRICE_SIGNS}, got {self.price_sign!r}")
        if self.price_step not in PRICE_STEPS:
            raise ConfigError(f"price_step must be one of {PRICE_STEPS}, got {self.price_step!r}")
        if self.price_scaling not in PRICE_SCALINGS:
            raise ConfigError(f"price_scaling must be one of {PRICE_SCALINGS}, got {self.price_scaling!r}")
        if self.inner not in INNER_SOLVERS:
            raise ConfigError(f"inner must be one of {INNER_SOLVERS}, got {self.inner!r}")
        if not self.jacobi:
            raise ConfigError("only Jacobi (simultaneous) updates are supported")
        for name in ('eta', 'kappa'):
            values = self._schedule(getattr(self, name))
            if values is not None and (len(values) == 0 or any(x <= 0 for x in values)):
                raise ConfigError(f"{name} schedule must be nonempty and positive")
        if self.c is not None and self.c <= 0:
            raise ConfigError(f"c must be positive, got {self.c}")
        if self.tau is not None and self.tau < 0:
            raise ConfigError(f"tau must be nonnegative, got {self.tau}")
        return self

    @staticmethod
    def _schedule(value) -> Optional[Sequence[float]]:
        if value is None:
            return None
        if isinstance(value, (int, float)):
            return [float(value)]
        return [float(x) for x in value]

    @staticmethod
    def _at(schedule, index: int) -> float:
        return schedule[min(index - 1, len(schedule) - 1)]

    def eta_at(self, k: int) -> Optional[float]:
        schedule = self._schedule(self.eta)
        return None if schedule is None else self._at(schedule, k)

    def kappa_at(self, v: int) -> Optional[float]:
        schedule = self._schedule(self.kappa)
        return None if schedule is None else self._at(schedule, v)


@dataclass
class IterationRecord:
    k: int
    t: int
    u: int
    v: int
    p: np.ndarray
    mu: np.ndarray
    rates: np.ndarray
    g: np.ndarray
    sum_rate: float
    step_norm: float
    price_broadcasts: int
    omega_exchanges: int


@dataclass
class RunSummary:
    algorithm: str
    status: RunStatus
    p: np.ndarray
    mu: np.ndarray
    rates: np.ndarray
    mue_rates: np.ndarray
    g: np.ndarray
    sum_rate: float
    violation_fraction: float
    iterations: int
    inner_iterations: int
    price_broadcasts: int
    omega_exchanges: int
    kkt_problem: str
    kkt: KktReport
    certificate_warnings: List[str] = field(default_factory=list)
    message: str = ''

    def to_dict(self) -> dict:
        return {
            'algorithm': self.algorithm,
            'status': self.status.value,
            'p': self.p.tolist(),
            'mu': self.mu.tolist(),
            'rates': self.rates.tolist(),
            'mue_rates': self.mue_rates.tolist(),
            'g': [float(x) for x in self.g],
            'sum_rate': self.sum_rate,
            'violation_fraction': self.violation_fraction,
            'iterations': self.iterations,
            'inner_iterations': self.inner_iterations,
            'price_broadcasts': self.price_broadcasts,
            'omega_exchanges': self.omega_exchanges,
            'kkt_problem': self.kkt_problem,
            'kkt': self.kkt.to_dict(),
            'certificate_warnings': list(self.certificate_warnings),
            'message': self.message,
        }


class RunTrace:
    """Per-iteration snapshots, signaling totals and the final summary of one run"""

    def __init__(self, algorithm: str, net: NetworkInstance):
        self.algorithm = algorithm
        self.net = net
        self.records: List[IterationRecord] = []
        self.signaling = SignalingCounter()
        self.summary: Optional[RunSummary] = None

    def record(self, p, mu, step_norm: float, k: int = -1, t: int = -1, u: int = -1, v: int = -1,
               pending: Optional[SignalingCounter] = None):
        """pending holds counts of a nested loop that are not absorbed yet"""
        rates = total_rates(self.net.gains, p)
        counts = self.signaling.snapshot()
        if pending is not None:
            extra = pending.snapshot()
            counts = {key: counts[key] + extra[key] for key in counts}
        self.records.append(IterationRecord(
            k=k, t=t, u=u, v=v,
            p=np.array(p, dtype=float),
            mu=np.array(mu, dtype=float),
            rates=rates,
            g=qos_slacks(self.net.gains, p, self.net.qos),
            sum_rate=float(rates.sum()),
            step_norm=float(step_norm),
            price_broadcasts=counts['price_broadcasts'],
            omega_exchanges=counts['omega_exchanges'],
        ))

    def finish(self, p, mu, converged: bool, iterations: int, inner_iterations: int = 0,
               problem: str = 'VE', warnings: Optional[List[str]] = None, message: str = '',
               enforce_qos: bool = False) -> 'RunTrace':
        """Converged needs the stop test and the KKT check; QoS rows count only with enforce_qos"""
        warnings = list(warnings or [])
        summary = self._summarize(p, mu, RunStatus.CONVERGED, iterations, inner_iterations, problem,
                                  warnings, message)
        if converged:
            failures = self._kkt_failures(summary.kkt, enforce_qos)
            if failures:
                converged = False
                summary.message = message or f"stop test met but KKT check failed: {'; '.join(failures)}"
        if not converged:
            summary.status = RunStatus.CERTIFICATE_FAILED if warnings else RunStatus.MAX_ITERS
        self.summary = summary
        logger.info(f"{self.algorithm}: {summary.status.value} after {iterations} iterations, "
                    f"sum rate {summary.sum_rate:.6g}")
        return self

    def fail(self, error: NumericError, p_fallback, mu_fallback, problem: str = 'VE',
             warnings: Optional[List[str]] = None) -> 'RunTrace':
        if self.records:
            p, mu = self.records[-1].p, self.records[-1].mu
        else:
            p, mu = np.asarray(p_fallback, dtype=float), np.asarray(mu_fallback, dtype=float)
        iterations = error.iterations if error.iterations is not None else len(self.records)
        logger.error(f"{self.algorithm}: numeric failure: {error}")
        self.summary = self._summarize(p, mu, RunStatus.NUMERIC_ERROR, iterations, 0, problem,
                                       list(warnings or []), str(error))
        return self

    def _kkt_failures(self, kkt: KktReport, enforce_qos: bool) -> List[str]:
        failures = []
        if kkt.budget_violation > float(np.max(self.net.budgets.tol_budget())):
            failures.append(f"budget violation {kkt.budget_violation:.3g}")
        if enforce_qos:
            if kkt.qos_violation > self.net.tol_qos():
                failures.append(f"QoS violation {kkt.qos_violation:.3g} above {self.net.tol_qos():.3g}")
            if kkt.complementarity > KKT_TOL:
                failures.append(f"complementarity {kkt.complementarity:.3g}")
        return failures

    def _summarize(self, p, mu, status, iterations, inner_iterations, problem, warnings, message) -> RunSummary:
        net = self.net
        p = np.asarray(p, dtype=float)
        mu = np.asarray(mu, dtype=float)
        rates = rates_matrix(net.gains, p)
        g = qos_slacks(net.gains, p, net.qos)
        active = net.qos.active
        violated = np.count_nonzero(g[active] > net.tol_qos())
        kkt = kkt_residual_P(net, p, mu) if problem == 'P' else kkt_residual_ve(net, p, mu)
        counts = self.signaling.snapshot()
        return RunSummary(
            algorithm=self.algorithm,
            status=status,
            p=p,
            mu=mu,
            rates=rates.sum(axis=1),
            mue_rates=rates[0],
            g=g,
            sum_rate=float(rates.sum()),
            violation_fraction=violated / active.sum() if active.any() else 0.0,
            iterations=int(iterations),
            inner_iterations=int(inner_iterations),
            price_broadcasts=counts['price_broadcasts'],
            omega_exchanges=counts['omega_exchanges'],
            kkt_problem=problem,
            kkt=kkt,
            certificate_warnings=warnings,
            message=message,
        )


class PriceCoordinates:
    """Maps prices between raw QoS units and the coordinates the price iterations use"""

    def __init__(self, net: NetworkInstance, mode: str = 'deficit'):
        if mode not in PRICE_SCALINGS:
            raise ConfigError(f"unknown price scaling {mode!r}")
        self.net = net
        self.active = net.qos.active
        if mode == 'deficit':
            self.factor = np.where(self.active, net.qos.h00_tilde, 1.0)
        else:
            self.factor = np.ones(net.num_channels)

    def to_raw(self, mu_scaled: np.ndarray) -> np.ndarray:
        return np.where(self.active, mu_scaled / self.factor, 0.0)

    def from_raw(self, mu: np.ndarray) -> np.ndarray:
        return np.where(self.active, np.asarray(mu, dtype=float) * self.factor, 0.0)

    def slacks(self, p: np.ndarray) -> np.ndarray:
        g = qos_slacks(self.net.gains, p, self.net.qos)
        return np.where(self.active, g, 0.0) / self.factor


class UnitRun:
    """A network, its unit copy and the price coordinates the loops iterate in"""

    def __init__(self, net: NetworkInstance, price_scaling: str = 'deficit'):
        self.net = net
        self.unit, self.scaling = normalize_network(net)
        self.coords = PriceCoordinates(self.unit, price_scaling)

    def to_unit(self, p) -> np.ndarray:
        return self.scaling.to_unit(p)

    def watts(self, x) -> np.ndarray:
        return self.scaling.to_watts(x)

    def raw_prices(self, mu_loop) -> np.ndarray:
        return self.scaling.prices_to_raw(self.coords.to_raw(mu_loop))

    def loop_prices(self, mu_raw) -> np.ndarray:
        return self.coords.from_raw(self.scaling.prices_from_raw(mu_raw))

    def certificates(self) -> Certificates:
        return build_certificates(self.unit.gains, self.unit.budgets)

    def recorder(self, trace: RunTrace, pending: Optional[SignalingCounter] = None, **levels) -> Callable:
        """on_iteration callback writing (k, t) rows with the given outer levels"""
        def on_iteration(k, t, x, mu_loop, step):
            trace.record(self.watts(x), self.raw_prices(mu_loop), step, k=k, t=t, pending=pending, **levels)
        return on_iteration


class LoopOutcome(NamedTuple):
    p: np.ndarray
    mu: np.ndarray
    iterations: int
    inner_iterations: int
    converged: bool


class _DivergenceGuard:
    def __init__(self, factor: float, reference: float = 0.0):
        self.factor = factor
        self.reference = reference

    def check(self, mu: np.ndarray, iteration: int):
        norm = float(np.linalg.norm(mu))
        if not np.isfinite(norm):
            raise NumericError("non-finite price iterate", iterations=iteration)
        if self.reference == 0.0:
            self.reference = norm
        elif norm > self.factor * self.reference:
            raise NumericError(f"price norm grew to {norm:.3g} ({self.factor:.0e}x its reference {self.reference:.3g})",
                               iterations=iteration)


class PriceStep:
    """Per-channel price steps

    With the secant rule each channel's step becomes dmu / (-dg) from its last two
    iterates, clipped to [STEP_FLOOR, STEP_CEILING] times the first step. A channel whose
    slack did not move doubles its step.
    """

    def __init__(self, eta0: float, num_channels: int, params: AlgoParams):
        self.eta0 = eta0
        self.params = params
        self.eta = np.full(num_channels, eta0)
        self.previous = None

    def restart(self):
        self.previous = None

    def __call__(self, k: int, mu: np.ndarray, slack: np.ndarray) -> np.ndarray:
        if self.params.price_step == 'constant':
            return np.full_like(self.eta, self.params.eta_at(k) or self.eta0)
        if self.previous is not None:
            mu_prev, slack_prev = self.previous
            d_mu = mu - mu_prev
            d_slack = slack_prev - slack
            usable = (d_mu != 0) & (d_mu * d_slack > 0)
            self.eta[usable] = np.clip(d_mu[usable] / d_slack[usable],
                                       STEP_FLOOR * self.eta0, STEP_CEILING * self.eta0)
            flat = (d_mu != 0) & (d_slack == 0)
            self.eta[flat] = np.minimum(2.0 * self.eta[flat], STEP_CEILING * self.eta0)
        self.previous = (mu.copy(), slack.copy())
        return self.eta


def _zeros_like_prices(net: NetworkInstance) -> np.ndarray:
    return np.zeros(net.num_channels)


def initial_profile(net: NetworkInstance) -> np.ndarray:
    """Uniform split of each budget over the channels"""
    return project_profile(net.budgets.p_max / net.num_channels, net.budgets)


def kkt_satisfied(net: NetworkInstance, p: np.ndarray, mu: np.ndarray) -> bool:
    """g_n <= tol_qos and |mu_n g_n| <= KKT_TOL on every channel with a target (raw prices of net)"""
    active = net.qos.active
    if not active.any():
        return True
    g = qos_slacks(net.gains, p, net.qos)[active]
    return float(np.max(g)) <= net.tol_qos() and float(np.max(np.abs(mu[active] * g))) <= KKT_TOL


def best_response_iteration(net: NetworkInstance, p_start, mu_start, build: Callable[[np.ndarray], BestResponseParams],
                            params: AlgoParams, price_map: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                            on_sweep: Optional[Callable] = None, tol: Optional[float] = None) -> LoopOutcome:
    """Jacobi sweeps p_i <- BR_i(p_-i); an optional price player updates mu <- price_map(p) in the same sweep

    Steps are measured in unit powers (p / p_sum); with a price player the tolerance scales
    with max(1, |mu|). Sweeps that make no new smallest step for STALL_WINDOW sweeps give up.
    """
    tol = params.epsilon if tol is None else tol
    scale = net.budgets.p_sum[:, None]
    p = np.array(p_start, dtype=float)
    mu = np.array(mu_start, dtype=float)
    best, best_t = np.inf, 0
    for t in range(1, params.max_iters + 1):
        response = build(mu)
        p_next = np.vstack([
            best_response(i, net.gains, p, net.budgets, net.qos, response) for i in range(net.num_bs)
        ])
        mu_next = price_map(p) if price_map is not None else mu
        step = float(np.sqrt(np.sum(((p_next - p) / scale) ** 2) + np.sum((mu_next - mu) ** 2)))
        p, mu = p_next, mu_next
        if not np.all(np.isfinite(p)):
            raise NumericError("non-finite power iterate", iterations=t)
        if on_sweep is not None:
            on_sweep(t, p, mu, step)
        level = max(1.0, float(np.linalg.norm(mu))) if price_map is not None else 1.0
        if step <= tol * level:
            return LoopOutcome(p, mu, t, t, True)
        if step < best:
            best, best_t = step, t
        elif t - best_t >= STALL_WINDOW:
            logger.debug(f"best-response sweeps stalled at step {best:.3g} after {t} sweeps")
            return LoopOutcome(p, mu, t, t, False)
    return LoopOutcome(p, mu, params.max_iters, params.max_iters, False)


def _default_mu_scale(net: NetworkInstance, coords: PriceCoordinates) -> float:
    """Typical price (price coordinates) that silences an SBS on its channel"""
    if net.num_bs < 2 or not coords.active.any():
        return 1.0
    h = net.gains.h
    with np.errstate(divide='ignore'):
        shutoff = coords.factor[None, :] * net.gains.direct()[1:] / (net.gains.sigma[1:] * h[1:, 0, :])
    values = shutoff[:, coords.active]
    values = values[np.isfinite(values)]
    return float(np.median(values)) if values.size else 1.0


def _pricing_loop(net: NetworkInstance, p_start, mu_start, params: AlgoParams, coords: PriceCoordinates,
                  make_response: Callable[[np.ndarray], BestResponseParams], stepper: PriceStep,
                  signaling: SignalingCounter, on_iteration: Optional[Callable] = None) -> LoopOutcome:
    """Outer price loop: solve the priced NEP, stop once it is a KKT point, else mu <- [mu + eta g]_+

    The 'paper' sign steps with [mu - eta g]_+. A price step below epsilon max(1, |mu|) also
    ends the loop; RunTrace.finish then decides whether the point passes the KKT check.
    """
    sign = 1.0 if params.price_sign == 'projection' else -1.0
    guard = _DivergenceGuard(params.divergence_factor, _default_mu_scale(net, coords))
    inner_tol = min(params.epsilon, INNER_TOL)
    p = np.array(p_start, dtype=float)
    mu = np.array(mu_start, dtype=float)
    sweeps = 0
    for k in range(1, params.max_outer_iters + 1):
        ne = best_response_iteration(net, p if params.warm_start else p_start, mu,
                                     lambda m: make_response(coords.to_raw(m)), params, tol=inner_tol)
        sweeps += ne.iterations
        p = ne.p
        signaling.record_price_broadcast(net.num_channels)
        if ne.converged and kkt_satisfied(net, p, coords.to_raw(mu)):
            if on_iteration is not None:
                on_iteration(k, ne.iterations, p, mu, 0.0)
            return LoopOutcome(p, mu, k, sweeps, True)

        slack = coords.slacks(p)
        eta = stepper(k, mu, slack)
        mu_next = np.where(coords.active, np.maximum(mu + sign * eta * slack, 0.0), 0.0)
        step = float(np.linalg.norm(mu_next - mu))
        settled = step <= params.epsilon * max(1.0, float(np.linalg.norm(mu)))
        mu = mu_next
        guard.check(mu, k)
        if on_iteration is not None:
            on_iteration(k, ne.iterations, p, mu, step)
        if settled:
            return LoopOutcome(p, mu, k, sweeps, ne.converged)
    return LoopOutcome(p, mu, params.max_outer_iters, sweeps, False)


def _proximal_loop(net: NetworkInstance, p_start, mu_start, params: AlgoParams, coords: PriceCoordinates,
                   make_response: Callable[[np.ndarray, np.ndarray, float], BestResponseParams], c: float,
                   signaling: SignalingCounter, on_iteration: Optional[Callable] = None):
    """Proximal point outer loop around the regularized NEP with a price player; returns (outcome, final c)

    Stops when max(c, 1) times the averaged step is below epsilon max(1, |mu|) and the iterate
    is a KKT point; c doubles whenever the regularized game does not settle.
    """
    guard = _DivergenceGuard(params.divergence_factor, _default_mu_scale(net, coords))
    inner_tol = min(params.epsilon, INNER_TOL)
    p_k = np.array(p_start, dtype=float)
    mu_k = np.array(mu_start, dtype=float)
    sweeps = 0
    growth = 0
    k = 0
    while k < params.max_outer_iters:
        def price_map(p, mu_k=mu_k, c=c):
            return np.where(coords.active, np.maximum(mu_k + coords.slacks(p) / c, 0.0), 0.0)

        inner = best_response_iteration(
            net, p_k, mu_k,
            lambda m, p_k=p_k, c=c: make_response(coords.to_raw(m), p_k, c),
            params, price_map=price_map, tol=inner_tol,
        )
        sweeps += inner.iterations
        signaling.record_price_broadcast(inner.iterations * net.num_channels)
        if not inner.converged and growth < params.c_growth_limit:
            growth += 1
            c *= 2.0
            logger.warning(f"regularized NEP did not settle after {inner.iterations} sweeps, raising c to {c:.6g}")
            continue

        k += 1
        eta = params.eta_at(k) or 1.0
        if not 0 < eta < 2:
            raise ConfigError(f"proximal averaging step must lie in (0, 2), got {eta}")
        p_next = (1.0 - eta) * p_k + eta * inner.p
        mu_next = (1.0 - eta) * mu_k + eta * inner.mu
        if eta > 1:
            p_next = project_profile(p_next, net.budgets)
            mu_next = np.maximum(mu_next, 0.0)
        step = float(np.sqrt(np.sum(((p_next - p_k) / net.budgets.p_sum[:, None]) ** 2)
                             + np.sum((mu_next - mu_k) ** 2)))
        p_k, mu_k = p_next, mu_next
        guard.check(mu_k, k)
        if on_iteration is not None:
            on_iteration(k, inner.iterations, p_k, mu_k, step)
        if (max(c, 1.0) * step <= params.epsilon * max(1.0, float(np.linalg.norm(mu_k))) and inner.converged
                and kkt_satisfied(net, p_k, coords.to_raw(mu_k))):
            return LoopOutcome(p_k, mu_k, k, sweeps, True), c
    return LoopOutcome(p_k, mu_k, params.max_outer_iters, sweeps, False), c


def default_c(certs: Certificates) -> float:
    """1.1 |lambda_min| of sym(Psi) bordered by a zero price block, at least 1e-3"""
    return max(1.1 * abs(min(certs.lambda_min_psi, 0.0)), 1e-3)


def default_tau(certs: Certificates) -> float:
    return 2.0 * max(abs(certs.lambda_min_psi_minus_upsilon), certs.tau_psi)


def default_kappa(certs: Certificates, tau: float) -> float:
    bound = derived_constants(certs, tau).kappa_bound
    if bound <= 0:
        logger.warning(f"no positive kappa bound at tau={tau:.6g}, falling back to kappa=0.5")
        return 0.5
    return 0.9 * min(1.0, bound)


def proximal_c(unit_certs: Certificates) -> float:
    """Starting c for a run on the unit network"""
    return min(max(default_c(unit_certs), PROXIMAL_C_FLOOR), PROXIMAL_C_START)


def proximal_tau(unit_certs: Certificates) -> float:
    """Starting tau for a run on the unit network"""
    return min(default_tau(unit_certs), PROXIMAL_TAU_START)


def price_slack_map(net: NetworkInstance, params: AlgoParams,
                    coords: PriceCoordinates) -> Callable[[np.ndarray], np.ndarray]:
    """Active-channel price (price coordinates) -> slacks at the NE of the priced game"""
    start = initial_profile(net)
    active = coords.active

    def slack_map(mu_active: np.ndarray) -> np.ndarray:
        mu = np.zeros(net.num_channels)
        mu[active] = mu_active
        ne = best_response_iteration(
            net, start, mu,
            lambda m: BestResponseParams(BestResponseKind.PRICED, mu=coords.to_raw(m)),
            params,
        )
        return coords.slacks(ne.p)[active]

    return slack_map


def estimate_c_coc(net: NetworkInstance, samples: Optional[int] = None, params: Optional[AlgoParams] = None,
                   slack_map: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                   mu_scale: Optional[float] = None, dim: Optional[int] = None) -> float:
    """Empirical co-coercivity constant of mu -> -g(mu) over sampled price pairs (inf if g looks constant)

    Measured on the unit copy of net, in its price coordinates.
    """
    params = params or AlgoParams()
    samples = samples or params.c_coc_samples
    unit, _ = normalize_network(net)
    coords = PriceCoordinates(unit, params.price_scaling)
    if slack_map is None:
        slack_map = price_slack_map(unit, params, coords)
        dim = int(coords.active.sum())
    dim = int(coords.active.sum()) if dim is None else dim
    if dim == 0:
        return float('inf')
    mu_scale = _default_mu_scale(unit, coords) if mu_scale is None else mu_scale
    rng = np.random.default_rng(params.seed)

    ratios = []
    for _ in range(samples):
        mu1, mu2 = rng.uniform(0.0, mu_scale, size=(2, dim))
        dg = slack_map(mu2) - slack_map(mu1)
        denom = float(dg @ dg)
        if denom <= 1e-30 * max(1.0, float(mu_scale) ** 2):
            continue
        ratios.append(float((mu1 - mu2) @ dg) / denom)
    if not ratios:
        logger.warning("slack map looks constant over the sampled prices; c_coc = inf")
        return float('inf')
    return max(min(ratios), 0.0)


def auto_eta(net: NetworkInstance, params: AlgoParams) -> float:
    c_coc = estimate_c_coc(net, params=params)
    if not np.isfinite(c_coc) or c_coc <= 0:
        logger.warning(f"c_coc estimate {c_coc!r} unusable, price step falls back to 0.5")
        return 0.5
    return min(0.5, 0.9 * 2.0 * c_coc)


def _price_step(run: UnitRun, params: AlgoParams) -> PriceStep:
    eta0 = params.eta_at(1) or auto_eta(run.unit, params)
    return PriceStep(eta0, run.unit.num_channels, params)


def _certificates(net: NetworkInstance, certs: Optional[Certificates]) -> Certificates:
    return certs if certs is not None else build_certificates(net.gains, net.budgets)


def _feasibility_warnings(net: NetworkInstance) -> List[str]:
    if not net.qos.active.any():
        return []
    return [] if feasibility_check(net.gains, net.budgets, net.qos).feasible else ['QoS targets infeasible']


def alg1_ne(net: NetworkInstance, p0=None, params: Optional[AlgoParams] = None,
            response: Optional[BestResponseParams] = None, algorithm: str = 'alg1') -> RunTrace:
    """Distributed best-response iteration on a game whose players use a fixed response kind"""
    params = params or AlgoParams()
    response = response or BestResponseParams(BestResponseKind.PRICED)
    response.validate()
    p0 = initial_profile(net) if p0 is None else np.asarray(p0, dtype=float)
    mu = _zeros_like_prices(net) if response.mu is None else np.asarray(response.mu, dtype=float)
    trace = RunTrace(algorithm, net)
    try:
        ne = best_response_iteration(
            net, p0, mu, lambda m: response, params,
            on_sweep=lambda t, p, m, step: trace.record(p, m, step, t=t),
        )
    except NumericError as e:
        return trace.fail(e, p0, mu)
    return trace.finish(ne.p, mu, ne.converged, ne.iterations)


def alg2_pricing(net: NetworkInstance, p0=None, mu0=None, params: Optional[AlgoParams] = None,
                 certs: Optional[Certificates] = None) -> RunTrace:
    """Distributed pricing: NEP for fixed prices, then a projected price step on the QoS slacks"""
    params = params or AlgoParams()
    certs = _certificates(net, certs)
    warnings = [] if certs.psi_is_P else [f"Psi is not a P-matrix (rho(Phi) = {certs.rho_phi:.6g})"]
    warnings += _feasibility_warnings(net)
    run = UnitRun(net, params.price_scaling)
    p0 = initial_profile(net) if p0 is None else np.asarray(p0, dtype=float)
    mu0 = _zeros_like_prices(net) if mu0 is None else np.asarray(mu0, dtype=float)
    trace = RunTrace('alg2', net)
    try:
        outcome = _pricing_loop(
            run.unit, run.to_unit(p0), run.loop_prices(mu0), params, run.coords,
            lambda mu_raw: BestResponseParams(BestResponseKind.PRICED, mu=mu_raw),
            _price_step(run, params), trace.signaling,
            on_iteration=run.recorder(trace),
        )
    except NumericError as e:
        return trace.fail(e, p0, mu0, warnings=warnings)
    return trace.finish(run.watts(outcome.p), run.raw_prices(outcome.mu), outcome.converged, outcome.iterations,
                        outcome.inner_iterations, warnings=warnings, enforce_qos=True)


def alg3_proximal(net: NetworkInstance, p0=None, mu0=None, params: Optional[AlgoParams] = None,
                  certs: Optional[Certificates] = None) -> RunTrace:
    """Distributed proximal algorithm: regularized NEP with a price player, then averaging"""
    params = params or AlgoParams()
    certs = _certificates(net, certs)
    warnings = [] if certs.psi_psd else ['symmetric part of Psi is not positive semidefinite']
    warnings += _feasibility_warnings(net)
    run = UnitRun(net, params.price_scaling)
    p0 = initial_profile(net) if p0 is None else np.asarray(p0, dtype=float)
    mu0 = _zeros_like_prices(net) if mu0 is None else np.asarray(mu0, dtype=float)
    trace = RunTrace('alg3', net)
    try:
        c = params.c or proximal_c(run.certificates())
        outcome, c = _proximal_loop(
            run.unit, run.to_unit(p0), run.loop_prices(mu0), params, run.coords,
            lambda mu_raw, anchor, c_: BestResponseParams(BestResponseKind.PROXIMAL, mu=mu_raw, c=c_, p_anchor=anchor),
            c, trace.signaling,
            on_iteration=run.recorder(trace),
        )
    except NumericError as e:
        return trace.fail(e, p0, mu0, warnings=warnings)
    logger.debug(f"alg3 finished with c={c:.6g}")
    return trace.finish(run.watts(outcome.p), run.raw_prices(outcome.mu), outcome.converged, outcome.iterations,
                        outcome.inner_iterations, warnings=warnings, enforce_qos=True)


def _solve_penalized_ve(run: UnitRun, p_start, mu_start, params: AlgoParams, penalty: np.ndarray, tau: float,
                        q_anchor: np.ndarray, c: float, stepper: PriceStep, signaling: SignalingCounter,
                        on_iteration: Optional[Callable] = None):
    """VE of the game with the penalty frozen at b (and proximal pull tau toward q)"""
    if params.inner == 'alg2':
        stepper.restart()
        outcome = _pricing_loop(
            run.unit, p_start, mu_start, params, run.coords,
            lambda mu_raw: BestResponseParams(BestResponseKind.NUM_PRICED, mu=mu_raw, tau=tau,
                                              q_anchor=q_anchor, penalty=penalty),
            stepper, signaling, on_iteration,
        )
        return outcome, c
    return _proximal_loop(
        run.unit, p_start, mu_start, params, run.coords,
        lambda mu_raw, anchor, c_: BestResponseParams(BestResponseKind.NUM_PROXIMAL, mu=mu_raw, tau=tau,
                                                      q_anchor=q_anchor, penalty=penalty, c=c_, p_anchor=anchor),
        c, signaling, on_iteration,
    )


def _penalty_fixed_point(run: UnitRun, p_start, mu_start, params: AlgoParams, tau: float, q_anchor: np.ndarray,
                         c: float, stepper: PriceStep, trace: RunTrace, v: int = -1, tol: Optional[float] = None):
    """p <- VE(p) with the penalty b(p) refreshed once per iteration; returns (outcome, final c)

    Works in unit powers. Every inner price iteration is traced with its (k, t) and the
    outer (u, v); the inner loop's signaling is absorbed into the trace after each solve.
    """
    net = run.unit
    tol = params.epsilon if tol is None else tol
    p = np.array(p_start, dtype=float)
    mu = np.array(mu_start, dtype=float)
    exchanges = net.num_bs * (net.num_bs - 1)
    inner_total = 0
    best, best_u = np.inf, 0
    for u in range(1, params.max_fixed_point_iters + 1):
        b = penalty_gradient(net.gains, p).b
        trace.signaling.record_omega_exchange(exchanges)
        start_p, start_mu = (p, mu) if params.warm_start else (p_start, _zeros_like_prices(net))
        nested = SignalingCounter()
        inner, c = _solve_penalized_ve(run, start_p, start_mu, params, b, tau, q_anchor, c, stepper, nested,
                                       on_iteration=run.recorder(trace, pending=nested, u=u, v=v))
        trace.signaling.absorb(nested)
        inner_total += inner.iterations
        step = float(np.linalg.norm(inner.p - p))
        p, mu = inner.p, inner.mu
        logger.debug(f"fixed point u={u}: |dp|={step:.3g} after {inner.iterations} inner iterations")
        if step <= tol and inner.converged:
            return LoopOutcome(p, mu, u, inner_total, True), c
        if step < best:
            best, best_u = step, u
        elif u - best_u >= FIXED_POINT_STALL_WINDOW:
            logger.debug(f"penalty fixed point stalled at |dp|={best:.3g}")
            return LoopOutcome(p, mu, u, inner_total, False), c
    return LoopOutcome(p, mu, params.max_fixed_point_iters, inner_total, False), c


def alg4_num(net: NetworkInstance, p0=None, params: Optional[AlgoParams] = None,
             certs: Optional[Certificates] = None, inner: Optional[str] = None) -> RunTrace:
    """Distributed NUM fixed point: repeatedly solve the VE of the penalized game"""
    params = params or AlgoParams()
    if inner is not None:
        params = params.with_overrides(inner=inner)
    certs = _certificates(net, certs)
    warnings = []
    if certs.rho_psi_inv_upsilon is None or certs.rho_psi_inv_upsilon >= 1:
        warnings.append(f"rho(Psi^-1 Upsilon) = {certs.rho_psi_inv_upsilon} does not certify convergence")
    warnings += _feasibility_warnings(net)
    run = UnitRun(net, params.price_scaling)
    p0 = initial_profile(net) if p0 is None else np.asarray(p0, dtype=float)
    mu0 = _zeros_like_prices(net)
    trace = RunTrace('alg4', net)
    try:
        stepper = _price_step(run, params) if params.inner == 'alg2' else None
        c = params.c or (proximal_c(run.certificates()) if params.inner == 'alg3' else 1.0)
        x0 = run.to_unit(p0)
        outcome, _ = _penalty_fixed_point(run, x0, mu0, params, 0.0, np.zeros_like(x0), c, stepper, trace)
    except NumericError as e:
        return trace.fail(e, p0, mu0, problem='P', warnings=warnings)
    return trace.finish(run.watts(outcome.p), run.raw_prices(outcome.mu), outcome.converged, outcome.iterations,
                        outcome.inner_iterations, problem='P', warnings=warnings, enforce_qos=True)


def alg5_proximal_num(net: NetworkInstance, p0=None, q0=None, params: Optional[AlgoParams] = None,
                      certs: Optional[Certificates] = None, inner: Optional[str] = None) -> RunTrace:
    """Proximal NUM: fixed point of the penalized game pulled toward q, then q <- (1 - kappa) q + kappa p

    tau is in unit powers and doubles (up to c_growth_limit times) when the inner fixed point
    stalls. Early fixed points are solved to max(epsilon, |dq| / 10) of the previous q step.
    The run ends when max(tau, 1) |dq| <= epsilon; the reported profile is the last inner
    solution, which lies within epsilon of q.
    """
    params = params or AlgoParams()
    if inner is not None:
        params = params.with_overrides(inner=inner)
    run = UnitRun(net, params.price_scaling)
    unit_certs = run.certificates()
    tau = proximal_tau(unit_certs) if params.tau is None else params.tau
    constants = derived_constants(unit_certs, tau)
    warnings = [] if constants.tau_ok else [f"tau={tau:.6g} below {constants.tau_lower_bound:.6g}"]
    if constants.kappa_bound <= 0:
        warnings.append(f"no positive kappa satisfies the step condition at tau={tau:.6g}")
    warnings += _feasibility_warnings(net)
    kappa_default = default_kappa(unit_certs, tau) if params.kappa is None else None
    p0 = initial_profile(net) if p0 is None else np.asarray(p0, dtype=float)
    q = run.to_unit(p0 if q0 is None else q0)
    p = run.to_unit(p0)
    mu = _zeros_like_prices(net)
    trace = RunTrace('alg5', net)
    inner_total = 0
    try:
        stepper = _price_step(run, params) if params.inner == 'alg2' else None
        c = params.c or (proximal_c(unit_certs) if params.inner == 'alg3' else 1.0)
        growth = 0
        last_dq = None
        v = 0
        while v < params.max_outer_iters:
            tol = params.epsilon if last_dq is None else max(params.epsilon, 0.1 * last_dq)
            outcome, c = _penalty_fixed_point(run, p, mu, params, tau, q, c, stepper, trace, v=v + 1, tol=tol)
            p, mu = outcome.p, outcome.mu
            inner_total += outcome.iterations
            if not outcome.converged and growth < params.c_growth_limit:
                growth += 1
                tau *= 2.0
                logger.warning(f"penalized fixed point stalled, raising tau to {tau:.6g}")
                continue
            v += 1
            kappa = params.kappa_at(v) or kappa_default
            q_next = (1.0 - kappa) * q + kappa * p
            last_dq = float(np.linalg.norm(q_next - q))
            q = q_next
            logger.debug(f"alg5 v={v}: |dq|={last_dq:.3g} after {outcome.iterations} fixed-point steps")
            if max(tau, 1.0) * last_dq <= params.epsilon and outcome.converged:
                return trace.finish(run.watts(p), run.raw_prices(mu), True, v, inner_total, problem='P',
                                    warnings=warnings, enforce_qos=True)
    except NumericError as e:
        return trace.fail(e, p0, run.raw_prices(mu), problem='P', warnings=warnings)
    return trace.finish(run.watts(p), run.raw_prices(mu), False, params.max_outer_iters, inner_total,
                        problem='P', warnings=warnings, enforce_qos=True)


def recommended_parameters(net: NetworkInstance, params: Optional[AlgoParams] = None) -> dict:
    """Starting (eta, c, tau, kappa) in unit powers, the certificate values and the checks those pass"""
    params = params or AlgoParams()
    unit, _ = normalize_network(net)
    certs = build_certificates(unit.gains, unit.budgets)
    certified_tau = default_tau(certs)
    certified_kappa = default_kappa(certs, certified_tau)
    constants = derived_constants(certs, certified_tau)
    tau = proximal_tau(certs)
    c_coc = estimate_c_coc(unit, params=params)
    eta = min(0.5, 0.9 * 2.0 * c_coc) if np.isfinite(c_coc) and c_coc > 0 else 0.5
    return {
        'eta': eta,
        'c': proximal_c(certs),
        'tau': tau,
        'kappa': default_kappa(certs, tau),
        'certified': {'c': default_c(certs), 'tau': certified_tau, 'kappa': certified_kappa},
        'c_coc_estimate': c_coc,
        'derived': constants.to_dict(),
        'checks': {
            'tau_condition': constants.tau_ok,
            'kappa_condition': constants.kappa_ok(certified_kappa),
            'strong_convexity_positive': constants.L_sc > 0,
        },
    }
