import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import make_network, two_bs_gains
from services.best_response import (BestResponseKind, BestResponseParams, best_response, bisect_lambda,
                                    br_num_priced, br_num_proximal, br_priced, br_proximal,
                                    channel_response_map, penalty_gradient)
from services.errors import DomainError, NumericError
from services.game_core import PowerProfile, interference, project_budget, rates_matrix
from services.oracle import numeric_gradient, projected_gradient_ascent


def player_objective(net, i, p, params):
    """Objective of BS i as a function of its own row, other rows fixed at p"""
    gains, qos = net.gains, net.qos
    mu = np.zeros(net.num_channels) if params.mu is None else np.asarray(params.mu)
    noise = interference(gains, p)[i]
    price = -mu * qos.h00_tilde if i == 0 else mu * gains.h[i, 0]

    def value(x):
        total = np.sum(np.log1p(gains.h[i, i] * x / noise)) - np.sum(price * x)
        if params.penalty is not None:
            total -= np.sum(params.penalty[i] * x)
        if params.c is not None:
            total -= 0.5 * params.c * np.sum((x - params.p_anchor[i]) ** 2)
        if params.tau is not None:
            total -= 0.5 * params.tau * np.sum((x - params.q_anchor[i]) ** 2)
        return float(total)

    def gradient(x):
        grad = gains.h[i, i] / (noise + gains.h[i, i] * x) - price
        if params.penalty is not None:
            grad = grad - params.penalty[i]
        if params.c is not None:
            grad = grad - params.c * (x - params.p_anchor[i])
        if params.tau is not None:
            grad = grad - params.tau * (x - params.q_anchor[i])
        return grad

    return value, gradient


def random_params(rng, net, kind):
    shape = (net.num_bs, net.num_channels)
    params = BestResponseParams(kind, mu=rng.uniform(0.0, 0.5, size=net.num_channels))
    if kind in (BestResponseKind.PROXIMAL, BestResponseKind.NUM_PROXIMAL):
        params.c = rng.uniform(0.1, 2.0)
        params.p_anchor = rng.uniform(0.0, 1.0, size=shape)
    if kind in (BestResponseKind.NUM_PRICED, BestResponseKind.NUM_PROXIMAL):
        params.tau = rng.uniform(0.1, 2.0)
        params.q_anchor = rng.uniform(0.0, 1.0, size=shape)
        params.penalty = rng.uniform(0.0, 0.3, size=shape)
    return params.validate()


def test_lambda_zero_when_budget_inactive():
    lam, p = bisect_lambda(lambda x: np.array([0.2, 0.3]), 1.0)
    assert lam == 0.0
    assert_allclose(p, [0.2, 0.3])


def test_lambda_of_linear_map():
    lam, p = bisect_lambda(lambda x: np.maximum(0.0, 5.0 - x) * np.ones(1), 2.0)
    assert_allclose(lam, 3.0, rtol=1e-9)
    assert_allclose(p, [2.0], rtol=1e-9)


def test_lambda_without_bracket_fails():
    with pytest.raises(NumericError):
        bisect_lambda(lambda x: np.array([10.0]), 1.0)


def test_waterfilling_budget_residual(strong_network):
    response = BestResponseParams(BestResponseKind.PRICED)
    eval_p = channel_response_map(1, strong_network.gains, np.ones((2, 2)), strong_network.budgets,
                                  strong_network.qos, response)
    _, p = bisect_lambda(eval_p, strong_network.budgets.p_sum[1])
    assert abs(p.sum() - strong_network.budgets.p_sum[1]) <= 1e-9 * strong_network.budgets.p_sum[1]


def test_priced_response_single_channel_uses_whole_budget():
    net = make_network(two_bs_gains([1.0], [1.0], [0.2], [0.1]), 1.0, [2.0, 0.7], 0.0)
    p = np.array([[0.0], [0.5]])
    assert_allclose(br_priced(0, net.gains, p, np.zeros(1), net.budgets, net.qos), [2.0], rtol=1e-8)
    assert_allclose(br_priced(1, net.gains, p, np.zeros(1), net.budgets, net.qos), [0.7], rtol=1e-8)


def test_priced_response_respects_peak():
    h = two_bs_gains([1.0], [1.0], [0.2], [0.1])
    net = make_network(h, 1.0, [2.0, 0.7], 0.0, p_peak=[[0.5], [0.7]])
    p = np.zeros((2, 1))
    assert_allclose(br_priced(0, net.gains, p, np.zeros(1), net.budgets, net.qos), [0.5])


def test_priced_response_splits_equal_channels():
    net = make_network(two_bs_gains([1.0, 1.0], [1.0, 1.0], [0.1, 0.1], [0.1, 0.1]), 1.0, [1.0, 1.0], 0.5)
    p = np.full((2, 2), 0.5)
    response = br_priced(1, net.gains, p, np.zeros(2), net.budgets, net.qos)
    assert_allclose(response[0], response[1], rtol=1e-10)
    assert_allclose(response.sum(), 1.0, rtol=1e-9)


def test_single_bs_waterfilling_levels():
    net = make_network(np.array([[[1.0, 0.5, 0.25]]]), 1.0, [2.0], 0.0)
    response = br_priced(0, net.gains, np.zeros((1, 3)), np.zeros(3), net.budgets, net.qos)
    # water level 2.5 over noise-to-gain ratios 1, 2, 4
    assert_allclose(response, [1.5, 0.5, 0.0], atol=1e-9)


@pytest.mark.parametrize('kind', list(BestResponseKind))
def test_closed_form_matches_numeric_maximizer(kind, random_network_factory):
    rng = np.random.default_rng(sum(map(ord, kind.value)))
    for trial in range(50):
        net = random_network_factory(rng, with_peaks=trial % 2 == 1)
        p = rng.uniform(0.0, 1.0, size=(net.num_bs, net.num_channels))
        params = random_params(rng, net, kind)
        for i in range(net.num_bs):
            closed = best_response(i, net.gains, p, net.budgets, net.qos, params)
            value, gradient = player_objective(net, i, p, params)
            numeric, _, _ = projected_gradient_ascent(
                value, gradient, np.zeros(net.num_channels),
                lambda x, i=i: project_budget(x, net.budgets, i), tol=1e-12,
            )
            gap = value(numeric) - value(closed)
            assert gap <= 1e-6 * max(1.0, abs(value(numeric)))
            assert PowerProfile(closed[None, :]).satisfies(
                type(net.budgets)(net.budgets.p_sum[i:i + 1], net.budgets.p_peak[i:i + 1]))


@pytest.mark.parametrize('kind', [BestResponseKind.PROXIMAL, BestResponseKind.NUM_PRICED,
                                  BestResponseKind.NUM_PROXIMAL])
def test_stationarity_at_interior_channels(kind, random_network_factory):
    rng = np.random.default_rng(7)
    interior = 0
    for _ in range(20):
        net = random_network_factory(rng)
        p = rng.uniform(0.0, 1.0, size=(net.num_bs, net.num_channels))
        params = random_params(rng, net, kind)
        for i in range(net.num_bs):
            eval_p = channel_response_map(i, net.gains, p, net.budgets, net.qos, params)
            lam, p_i = bisect_lambda(eval_p, net.budgets.p_sum[i])
            _, gradient = player_objective(net, i, p, params)
            inside = (p_i > 1e-9) & (p_i < net.budgets.p_peak[i] - 1e-9)
            assert_allclose(gradient(p_i)[inside], lam, atol=1e-9)
            interior += int(inside.sum())
    assert interior > 0


def test_large_proximal_weight_pulls_to_anchor(weak_network):
    p = np.array([[0.4, 0.4], [0.2, 0.2]])
    anchor = np.array([[0.3, 0.4], [0.1, 0.2]])
    c = 1e6
    for i in range(2):
        response = br_proximal(i, weak_network.gains, p, np.zeros(2), anchor, c,
                               weak_network.budgets, weak_network.qos)
        assert np.linalg.norm(response - anchor[i]) <= 10.0 / c


def test_priced_optimum_is_proximal_fixed_point(strong_network):
    net = strong_network
    p = np.array([[3.0, 4.0], [1.0, 2.0]])
    anchor = p.copy()
    for i in range(2):
        anchor[i] = br_priced(i, net.gains, p, np.zeros(2), net.budgets, net.qos)
    for i in range(2):
        response = br_proximal(i, net.gains, p, np.zeros(2), anchor, 0.7, net.budgets, net.qos)
        assert_allclose(response, anchor[i], rtol=1e-6, atol=1e-9)


def test_num_priced_coincides_with_proximal(strong_network):
    net = strong_network
    p = np.array([[3.0, 4.0], [1.0, 2.0]])
    anchor = np.array([[2.0, 2.0], [0.5, 1.5]])
    mu = np.array([0.05, 0.1])
    zero_b = np.zeros((2, 2))
    for i in range(2):
        proximal = br_proximal(i, net.gains, p, mu, anchor, 0.8, net.budgets, net.qos)
        num = br_num_priced(i, net.gains, p, mu, zero_b, anchor, 0.8, net.budgets, net.qos)
        num_prox = br_num_proximal(i, net.gains, p, mu, zero_b, np.zeros((2, 2)), 0.0, anchor, 0.8,
                                   net.budgets, net.qos)
        assert_allclose(num, proximal, rtol=1e-12)
        assert_allclose(num_prox, proximal, rtol=1e-12)


def test_num_priced_needs_positive_tau(strong_network):
    with pytest.raises(DomainError):
        br_num_priced(0, strong_network.gains, np.ones((2, 2)), np.zeros(2), np.zeros((2, 2)),
                      np.ones((2, 2)), 0.0, strong_network.budgets, strong_network.qos)


@pytest.mark.parametrize('params', [
    BestResponseParams(BestResponseKind.PROXIMAL, c=1.0),
    BestResponseParams(BestResponseKind.PRICED, c=1.0),
    BestResponseParams(BestResponseKind.PROXIMAL, c=0.0, p_anchor=np.zeros((1, 1))),
    BestResponseParams(BestResponseKind.NUM_PRICED, tau=-1.0, q_anchor=np.zeros((1, 1)), penalty=np.zeros((1, 1))),
    BestResponseParams(BestResponseKind.PRICED, mu=np.array([-0.1])),
])
def test_invalid_response_parameters(params):
    with pytest.raises(DomainError):
        params.validate()


@pytest.mark.parametrize('kind', list(BestResponseKind))
def test_channel_map_nonincreasing_in_lambda(kind, random_network_factory):
    rng = np.random.default_rng(8)
    ladder = np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 99)])
    for _ in range(10):
        net = random_network_factory(rng, with_peaks=True)
        p = rng.uniform(0.0, 1.0, size=(net.num_bs, net.num_channels))
        params = random_params(rng, net, kind)
        for i in range(net.num_bs):
            eval_p = channel_response_map(i, net.gains, p, net.budgets, net.qos, params)
            powers = np.array([eval_p(lam) for lam in ladder])
            assert np.all(np.diff(powers, axis=0) <= 1e-12)


def test_raising_price_never_raises_sbs_power(strong_network):
    net = strong_network
    p = np.array([[3.0, 4.0], [1.0, 2.0]])
    for lam in (0.05, 0.2, 1.0):
        low = channel_response_map(1, net.gains, p, net.budgets, net.qos,
                                   BestResponseParams(BestResponseKind.PRICED, mu=np.array([0.1, 0.1])))(lam)
        high = channel_response_map(1, net.gains, p, net.budgets, net.qos,
                                    BestResponseParams(BestResponseKind.PRICED, mu=np.array([0.5, 0.1])))(lam)
        assert high[0] <= low[0]
        assert_allclose(high[1], low[1])


def test_penalty_gradient_vanishes_without_other_power(strong_network):
    p = np.array([[2.0, 1.0], [0.0, 0.0]])
    assert_allclose(penalty_gradient(strong_network.gains, p).b[0], 0.0)


def test_penalty_gradient_matches_finite_differences(strong_network):
    net = strong_network
    p = np.array([[3.0, 4.0], [1.0, 2.0]])
    b = penalty_gradient(net.gains, p).b
    for i in range(2):
        def others_rate(x, i=i):
            rates = rates_matrix(net.gains, x)
            return float(rates.sum() - rates[i].sum())

        numeric = -numeric_gradient(others_rate, p, h_rel=1e-5)[i]
        assert_allclose(b[i], numeric, atol=1e-6)
    assert np.all(b >= 0)


def test_penalty_gradient_symmetric_instance():
    net = make_network(two_bs_gains([1.0, 0.6], [1.0, 0.6], [0.3, 0.2], [0.3, 0.2]), 1.0, [1.0, 1.0], 0.5)
    p = np.array([[0.4, 0.6], [0.4, 0.6]])
    b = penalty_gradient(net.gains, p).b
    assert_allclose(b[0], b[1], rtol=1e-12)
