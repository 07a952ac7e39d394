"""
Baselines
Unconstrained NEP, the QoS-NEP with fixed per-SBS interference caps, and the centralized oracle
"""

import logging
from typing import Optional

import numpy as np

from services.best_response import BestResponseKind, BestResponseParams
from services.errors import NumericError
from services.game_core import NetworkInstance
from services.oracle import OracleParams, solve_P_stationary

from .equilibrium_algorithms import AlgoParams, RunTrace, best_response_iteration, initial_profile

logger = logging.getLogger(__name__)


def _unpriced_nep(net: NetworkInstance, play_net: NetworkInstance, p0, params: AlgoParams, algorithm: str) -> RunTrace:
    """Jacobi best responses on play_net with zero prices, reported against net"""
    trace = RunTrace(algorithm, net)
    mu = np.zeros(net.num_channels)
    response = BestResponseParams(BestResponseKind.PRICED)
    try:
        ne = best_response_iteration(
            play_net, p0, mu, lambda m: response, params,
            on_sweep=lambda t, p, m, step: trace.record(p, m, step, t=t),
        )
    except NumericError as e:
        return trace.fail(e, p0, mu)
    return trace.finish(ne.p, mu, ne.converged, ne.iterations)


def baseline_nep(net: NetworkInstance, p0=None, params: Optional[AlgoParams] = None) -> RunTrace:
    """Every BS water-fills against the others; QoS slacks are only reported"""
    params = params or AlgoParams()
    p0 = initial_profile(net) if p0 is None else np.asarray(p0, dtype=float)
    return _unpriced_nep(net, net, p0, params, 'nep')


def qos_interference_caps(net: NetworkInstance) -> np.ndarray:
    """zeta_{i,n} = (h00_tilde(n) p0_sum / N - sigma_0(n)) / M, clamped at 0; inf without a QoS target"""
    num_sbs = net.num_bs - 1
    active = net.qos.active
    if num_sbs == 0:
        return np.zeros((0, net.num_channels))
    share = (net.qos.h00_tilde * net.budgets.p_sum[0] / net.num_channels - net.gains.sigma[0]) / num_sbs
    zeta = np.where(active, np.maximum(share, 0.0), np.inf)
    return np.repeat(zeta[None, :], num_sbs, axis=0)


def baseline_qos_nep(net: NetworkInstance, p0=None, params: Optional[AlgoParams] = None) -> RunTrace:
    """NEP where each SBS keeps its interference at the MUE below an equal share zeta"""
    params = params or AlgoParams()
    zeta = qos_interference_caps(net)
    peak = net.budgets.p_peak.copy()
    with np.errstate(divide='ignore', invalid='ignore'):
        caps = np.where(net.gains.h[1:, 0, :] > 0, zeta / net.gains.h[1:, 0, :], np.inf)
    peak[1:] = np.minimum(peak[1:], caps)
    capped = NetworkInstance(net.gains, net.budgets.with_peak(peak), net.qos)
    p0 = initial_profile(net) if p0 is None else np.asarray(p0, dtype=float)
    p0 = np.minimum(p0, peak)
    return _unpriced_nep(net, capped, p0, params, 'qos_nep')


def run_oracle(net: NetworkInstance, p0=None, params: Optional[OracleParams] = None) -> RunTrace:
    """Centralized penalty solver wrapped as a one-record trace; MaxIters when stationarity is not reached"""
    trace = RunTrace('oracle', net)
    p0 = initial_profile(net) if p0 is None else np.asarray(p0, dtype=float)
    try:
        result = solve_P_stationary(net, p0, params)
    except NumericError as e:
        return trace.fail(e, p0, np.zeros(net.num_channels), problem='P')
    trace.record(result.p, result.mu, result.kkt.stationarity)
    message = '' if result.converged else f"stationarity {result.kkt.stationarity:.3g} above tolerance"
    return trace.finish(result.p, result.mu, result.converged, result.iterations, problem='P',
                        enforce_qos=True, message=message)
