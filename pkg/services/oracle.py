"""
Centralized oracle
Reference solvers for the QoS-constrained sum-rate problem, finite-difference gradients and
KKT residuals. Used by tests, the oracle baseline and summaries of every algorithm.
"""

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np
from scipy.optimize import Bounds, minimize, nnls

from .best_response import penalty_gradient
from .errors import NumericError
from .game_core import (NetworkInstance, feasibility_check, project_budget, project_profile, qos_slacks,
                        sum_rate, total_interference)

logger = logging.getLogger(__name__)

# Natural residual (x = p / p_sum coordinates) below which a stationary point is accepted
STATIONARITY_TOL = 1e-6


@dataclass
class KktReport:
    """Projected-gradient stationarity (power coordinates scaled by p_sum) plus feasibility"""

    stationarity: float
    qos_violation: float
    budget_violation: float
    complementarity: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class OracleParams:
    tol: float = 1e-10
    max_iter: int = 2000
    penalty_start: float = 1.0
    penalty_growth: float = 10.0
    penalty_cap: float = 1e10
    polish: bool = True
    polish_max_iter: int = 500


@dataclass
class OracleResult:
    p: np.ndarray
    mu: np.ndarray
    kkt: KktReport
    penalty_weight: float
    iterations: int
    converged: bool = True


def own_rate_gradient(net: NetworkInstance, p: np.ndarray) -> np.ndarray:
    """grad_{p_i} R_i = h_ii / I_i(p), i.e. -f_i"""
    return net.gains.direct() / total_interference(net.gains, p)


def sum_rate_gradient(net: NetworkInstance, p: np.ndarray) -> np.ndarray:
    """grad_{p_i} sum_j R_j = -f_i - b_i"""
    return own_rate_gradient(net, p) - penalty_gradient(net.gains, p).b


def qos_jacobian(net: NetworkInstance) -> np.ndarray:
    """dg_n/dp_i(n) as an (M+1)xN matrix; zero on channels without a target"""
    jac = np.empty((net.num_bs, net.num_channels))
    jac[0] = -net.qos.h00_tilde
    jac[1:] = net.gains.h[1:, 0, :]
    jac[:, ~net.qos.active] = 0.0
    return jac


def numeric_gradient(field: Callable[[np.ndarray], float], p: np.ndarray, h_rel: float = 1e-5,
                     scale=None, lower=None, upper=None) -> np.ndarray:
    """Central differences, one-sided where a step would leave [lower, upper]"""
    p = np.asarray(p, dtype=float)
    if scale is None:
        top = float(np.max(np.abs(p)))
        scale = np.full(p.shape, top if top > 0 else 1.0)
    step = h_rel * np.broadcast_to(np.asarray(scale, dtype=float), p.shape)
    lower = np.full(p.shape, -np.inf) if lower is None else np.broadcast_to(lower, p.shape)
    upper = np.full(p.shape, np.inf) if upper is None else np.broadcast_to(upper, p.shape)

    grad = np.empty_like(p)
    for idx in np.ndindex(p.shape):
        hi_point = p.copy()
        lo_point = p.copy()
        forward = p[idx] - step[idx] < lower[idx]
        backward = p[idx] + step[idx] > upper[idx]
        hi_point[idx] = p[idx] if backward else p[idx] + step[idx]
        lo_point[idx] = p[idx] if forward else p[idx] - step[idx]
        grad[idx] = (field(hi_point) - field(lo_point)) / (hi_point[idx] - lo_point[idx])
    return grad


def _kkt_report(net: NetworkInstance, p: np.ndarray, mu: np.ndarray, rate_gradient: np.ndarray) -> KktReport:
    p = np.asarray(p, dtype=float)
    mu = np.asarray(mu, dtype=float)
    scale = net.budgets.p_sum[:, None]
    ascent = rate_gradient - mu[None, :] * qos_jacobian(net)

    # Natural residual in x = p / p_sum coordinates
    x = p / scale
    moved = project_profile((x + scale * ascent) * scale, net.budgets) / scale
    stationarity = float(np.linalg.norm(moved - x))

    g = qos_slacks(net.gains, p, net.qos)
    active = net.qos.active
    qos_violation = float(max(0.0, np.max(g[active]))) if np.any(active) else 0.0
    complementarity = float(np.max(np.abs(mu[active] * g[active]))) if np.any(active) else 0.0
    budget_violation = float(max(
        0.0,
        np.max(p.sum(axis=1) - net.budgets.p_sum),
        np.max(p - net.budgets.p_peak),
        np.max(-p),
    ))
    return KktReport(stationarity, qos_violation, budget_violation, complementarity)


def kkt_residual_P(net: NetworkInstance, p: np.ndarray, mu: np.ndarray) -> KktReport:
    """KKT residual of the sum-rate problem with Lagrangian sum R - mu^T g"""
    return _kkt_report(net, p, mu, sum_rate_gradient(net, p))


def kkt_residual_ve(net: NetworkInstance, p: np.ndarray, mu: np.ndarray) -> KktReport:
    """KKT residual of the variational equilibrium (each BS maximizes its own rate)"""
    return _kkt_report(net, p, mu, own_rate_gradient(net, p))


class AscentResult(NamedTuple):
    x: np.ndarray
    iterations: int
    converged: bool


def projected_gradient_ascent(value: Callable[[np.ndarray], float],
                              gradient: Callable[[np.ndarray], np.ndarray],
                              x0: np.ndarray,
                              project: Callable[[np.ndarray], np.ndarray],
                              tol: float = 1e-12,
                              max_iter: int = 20000) -> AscentResult:
    """Maximize a smooth function over a convex set (Barzilai-Borwein steps, Armijo backtracking)

    converged is False when the line search or the iteration budget runs out first.
    """
    x = project(np.asarray(x0, dtype=float))
    f = value(x)
    grad = gradient(x)
    step = 1.0
    for iteration in range(1, max_iter + 1):
        if np.max(np.abs(project(x + grad) - x)) <= tol:
            return AscentResult(x, iteration, True)
        direction = project(x + step * grad) - x
        slope = float(np.sum(grad * direction))
        t = 1.0
        for _ in range(60):
            candidate = x + t * direction
            f_candidate = value(candidate)
            if f_candidate >= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            logger.debug(f"projected gradient ascent: line search failed at iteration {iteration}")
            return AscentResult(x, iteration, False)
        grad_new = gradient(candidate)
        s = candidate - x
        y = grad - grad_new
        sy = float(np.sum(s * y))
        step = float(np.clip(np.sum(s * s) / sy, 1e-12, 1e12)) if sy > 0 else 1e12
        x, f, grad = candidate, f_candidate, grad_new
    logger.debug(f"projected gradient ascent stopped at max_iter={max_iter}")
    return AscentResult(x, max_iter, False)


def _slack_scale(net: NetworkInstance) -> np.ndarray:
    """h00_tilde(n) p_sum_0 on channels with a target: slacks read as shares of the MBS budget"""
    return np.where(net.qos.active, net.qos.h00_tilde * net.budgets.p_sum[0], 1.0)


def restore_qos(net: NetworkInstance, p: np.ndarray) -> np.ndarray:
    """Push every slack back within tol_qos

    Short channels first get MBS power from the unused budget and peak headroom; SBS power
    on channels that are still short is then scaled down. Raises NumericError when even
    silent SBSs leave a channel short.
    """
    tol = net.tol_qos()
    active = net.qos.active
    g = qos_slacks(net.gains, p, net.qos)
    violated = active & (g > tol)
    if not np.any(violated):
        return p

    restored = np.array(p, dtype=float)
    tilde = net.qos.h00_tilde
    budgets = net.budgets
    unused = max(0.0, float(budgets.p_sum[0] - restored[0].sum()))
    need = np.where(violated, g / np.where(violated, tilde, 1.0), 0.0)
    raise_by = np.minimum(need, np.maximum(budgets.p_peak[0] - restored[0], 0.0))
    if raise_by.sum() > unused:
        raise_by *= unused / raise_by.sum()
    restored[0] += raise_by

    g = qos_slacks(net.gains, restored, net.qos)
    short = active & (g > tol)
    if np.any(short):
        sbs_load = np.einsum('jn,jn->n', net.gains.h[1:, 0, :], restored[1:])
        room = tilde * restored[0] - net.gains.sigma[0]
        with np.errstate(divide='ignore', invalid='ignore'):
            factor = np.where(sbs_load > 0, np.clip(room / sbs_load, 0.0, 1.0), 1.0)
        restored[1:, short] *= factor[short]
        g = qos_slacks(net.gains, restored, net.qos)
        if np.any(active & (g > tol)):
            raise NumericError("penalty solution cannot be restored to QoS feasibility")
    logger.info(f"Restored QoS on {int(violated.sum())} channel(s), "
                f"{int(short.sum())} by backing off SBS power")
    return restored


def recover_multipliers(net: NetworkInstance, p: np.ndarray,
                        rate_gradient: Optional[np.ndarray] = None) -> np.ndarray:
    """Nonnegative QoS prices fitted to the stationarity of the interior power coordinates (NNLS)"""
    active = net.qos.active
    mu = np.zeros(net.num_channels)
    if not np.any(active):
        return mu
    p = np.asarray(p, dtype=float)
    scale = net.budgets.p_sum[:, None]
    slack_scale = _slack_scale(net)
    rate_gradient = sum_rate_gradient(net, p) if rate_gradient is None else rate_gradient
    grad = scale * rate_gradient
    jac = scale * qos_jacobian(net) / slack_scale[None, :]
    interior = (p > 1e-12 * scale) & (p < net.budgets.p_peak * (1 - 1e-12))
    channels = np.flatnonzero(active)
    column = {n: a for a, n in enumerate(channels)}
    rows = np.argwhere(interior)
    if rows.size == 0:
        return mu

    system = np.zeros((len(rows), len(channels) + net.num_bs))
    for r, (i, n) in enumerate(rows):
        if active[n]:
            system[r, column[n]] = jac[i, n]
        system[r, len(channels) + i] = 1.0
    try:
        z, _ = nnls(system, grad[interior])
    except RuntimeError as e:
        logger.warning(f"multiplier fit failed: {e}")
        return mu
    mu[channels] = z[:len(channels)] / slack_scale[channels]
    return mu


def _polish(net: NetworkInstance, p: np.ndarray, params: OracleParams) -> np.ndarray:
    """SLSQP on the sum-rate problem in x = p / p_sum; the QoS rows and budgets are linear there"""
    budgets = net.budgets
    shape = p.shape
    scale = budgets.p_sum[:, None]
    active = net.qos.active
    channels = np.flatnonzero(active)
    slack_scale = _slack_scale(net)

    qos_rows = np.zeros((len(channels), *shape))
    for a, n in enumerate(channels):
        qos_rows[a, :, n] = qos_jacobian(net)[:, n] * budgets.p_sum / slack_scale[n]
    qos_rows = qos_rows.reshape(len(channels), -1)
    budget_rows = np.kron(np.eye(net.num_bs), np.ones(net.num_channels))

    def objective(z):
        return -sum_rate(net.gains, z.reshape(shape) * scale)

    def gradient(z):
        return -(scale * sum_rate_gradient(net, z.reshape(shape) * scale)).ravel()

    def qos_margin(z):
        g = qos_slacks(net.gains, z.reshape(shape) * scale, net.qos)
        return -g[channels] / slack_scale[channels]

    constraints = [{'type': 'ineq', 'fun': lambda z: 1.0 - budget_rows @ z, 'jac': lambda z: -budget_rows}]
    if len(channels):
        constraints.append({'type': 'ineq', 'fun': qos_margin, 'jac': lambda z: -qos_rows})
    bounds = Bounds(np.zeros(p.size), (budgets.p_max / scale).ravel())
    result = minimize(objective, (p / scale).ravel(), jac=gradient, method='SLSQP', bounds=bounds,
                      constraints=constraints, options={'ftol': 1e-15, 'maxiter': params.polish_max_iter})
    logger.debug(f"SLSQP polish: {result.message} after {result.nit} iterations")
    x = np.clip(result.x.reshape(shape), 0.0, budgets.p_max / scale)
    return project_profile(x * scale, budgets)


def _best_report(net: NetworkInstance, p: np.ndarray, candidates) -> Tuple[np.ndarray, KktReport]:
    reports = [(mu, kkt_residual_P(net, p, mu)) for mu in candidates]
    return min(reports, key=lambda pair: pair[1].stationarity)


def solve_P_stationary(net: NetworkInstance, p0: Optional[np.ndarray] = None,
                       params: Optional[OracleParams] = None) -> OracleResult:
    """Stationary point of max sum R s.t. g <= 0 and the power budgets

    A quadratic penalty method works in x = p / p_sum with slacks normalized by
    h00_tilde(n) p_sum_0; the penalty weight grows until the raw slacks are within tol_qos
    or the cap is reached, and mu_n = 2 beta [g_n]_+ is mapped back to raw units. The point
    is then polished with SLSQP and pushed back within tol_qos. The candidate with the
    smaller stationarity residual wins; converged reports whether it is below
    STATIONARITY_TOL.
    """
    params = params or OracleParams()
    budgets = net.budgets
    scale = budgets.p_sum[:, None]
    active = net.qos.active
    if np.any(active) and not feasibility_check(net.gains, budgets, net.qos).feasible:
        raise NumericError("QoS targets are infeasible for the MBS budget")
    slack_scale = _slack_scale(net)
    jac = qos_jacobian(net)
    p_start = budgets.p_max / net.num_channels if p0 is None else np.asarray(p0, dtype=float)

    def project(x):
        return np.vstack([project_budget(x[i] * scale[i], budgets, i) / scale[i] for i in range(net.num_bs)])

    def scaled_slacks(p):
        return np.where(active, qos_slacks(net.gains, p, net.qos), 0.0) / slack_scale

    beta = params.penalty_start if np.any(active) else 0.0
    x = project(p_start / scale)
    total_iterations = 0
    while True:
        def value(x_, beta=beta):
            p = x_ * scale
            return sum_rate(net.gains, p) - beta * np.sum(np.maximum(scaled_slacks(p), 0.0) ** 2)

        def gradient(x_, beta=beta):
            p = x_ * scale
            weights = 2.0 * beta * np.maximum(scaled_slacks(p), 0.0) / slack_scale
            return scale * (sum_rate_gradient(net, p) - weights[None, :] * jac)

        ascent = projected_gradient_ascent(value, gradient, x, project, params.tol, params.max_iter)
        x = ascent.x
        total_iterations += ascent.iterations
        p = x * scale
        violation = float(np.max(qos_slacks(net.gains, p, net.qos)[active])) if np.any(active) else 0.0
        logger.debug(f"penalty beta={beta:.3g}: max slack {violation:.3g} after {ascent.iterations} iterations "
                     f"(converged={ascent.converged})")
        if violation <= net.tol_qos() or beta == 0.0:
            break
        if beta >= params.penalty_cap:
            logger.warning(f"penalty weight reached its cap {params.penalty_cap:.3g} with max slack {violation:.3g}")
            break
        beta *= params.penalty_growth

    mu_penalty = 2.0 * beta * np.maximum(scaled_slacks(p), 0.0) / slack_scale
    starts = [p]
    if params.polish:
        starts.append(_polish(net, p, params))

    best = None
    for candidate in starts:
        try:
            restored = restore_qos(net, candidate)
        except NumericError as e:
            logger.warning(f"oracle candidate dropped: {e}")
            continue
        mu, report = _best_report(net, restored, [mu_penalty, recover_multipliers(net, restored)])
        if best is None or report.stationarity < best[2].stationarity:
            best = (restored, mu, report)
    if best is None:
        raise NumericError("penalty solution cannot be restored to QoS feasibility", iterations=total_iterations)

    p, mu, report = best
    converged = report.stationarity <= STATIONARITY_TOL and report.qos_violation <= net.tol_qos()
    if not converged:
        logger.warning(f"oracle stationarity {report.stationarity:.3g} above {STATIONARITY_TOL:g}")
    return OracleResult(p=p, mu=mu, kkt=report, penalty_weight=beta, iterations=total_iterations,
                        converged=converged)
