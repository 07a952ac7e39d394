"""Shared fixtures: hand-built two-tier networks and a seeded default scenario"""

import csv
import os

import numpy as np
import pytest

from services.game_core import Budgets, ChannelGains, NetworkInstance, QosSpec
from services.scenario import ScenarioConfig, build_network


def make_network(h, sigma, p_sum, gamma, p_peak=None) -> NetworkInstance:
    """NetworkInstance from raw arrays; peaks default to the sum budgets"""
    h = np.asarray(h, dtype=float)
    num_bs, _, num_channels = h.shape
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (num_bs, num_channels)).copy()
    p_sum = np.asarray(p_sum, dtype=float)
    if p_peak is None:
        p_peak = np.repeat(p_sum[:, None], num_channels, axis=1)
    gains = ChannelGains(h, sigma).validate()
    budgets = Budgets(p_sum, p_peak).validate()
    return NetworkInstance(gains, budgets, QosSpec.from_gains(gamma, gains))


def read_csv(path):
    with open(path, encoding='utf-8', newline='') as fh:
        return list(csv.reader(fh))


def two_bs_gains(h00, h11, h10, h01):
    """2x2xN tensor; h10 is SBS -> MUE, h01 is MBS -> SUE"""
    h = np.empty((2, 2, len(h00)))
    h[0, 0], h[1, 1], h[1, 0], h[0, 1] = h00, h11, h10, h01
    return h


def grid_sum_rate_max(net: NetworkInstance, points: int = 50):
    """Best QoS-feasible sum rate of a 2-BS 2-channel network over a uniform power grid

    Returns (value, p) with p the maximizing 2x2 profile.
    """
    assert net.num_bs == 2 and net.num_channels == 2
    levels = np.linspace(0.0, 1.0, points)
    mbs = levels * net.budgets.p_sum[0]
    sbs = levels * net.budgets.p_sum[1]
    h, sigma = net.gains.h, net.gains.sigma

    tables = []
    for n in range(2):
        p0, p1 = mbs[:, None], sbs[None, :]
        table = (np.log1p(h[0, 0, n] * p0 / (sigma[0, n] + h[1, 0, n] * p1))
                 + np.log1p(h[1, 1, n] * p1 / (sigma[1, n] + h[0, 1, n] * p0)))
        if net.qos.active[n]:
            slack = sigma[0, n] + h[1, 0, n] * p1 - net.qos.h00_tilde[n] * p0
            table = np.where(slack <= 0, table, -np.inf)
        peak_ok = (p0 <= net.budgets.p_peak[0, n]) & (p1 <= net.budgets.p_peak[1, n])
        tables.append(np.where(peak_ok, table, -np.inf))

    # axes: MBS level on channel 0, MBS level on channel 1, SBS level on channel 0, SBS level on channel 1
    total = tables[0][:, None, :, None] + tables[1][None, :, None, :]
    index = np.arange(points)
    within = index[:, None] + index[None, :] <= points - 1
    total = np.where(within[:, :, None, None] & within[None, None, :, :], total, -np.inf)
    a0, a1, b0, b1 = np.unravel_index(np.argmax(total), total.shape)
    p = np.array([[mbs[a0], mbs[a1]], [sbs[b0], sbs[b1]]])
    return float(total[a0, a1, b0, b1]), p


@pytest.fixture
def weak_network():
    """Weak interference, Psi is a P-matrix, QoS binds on channel 1 at the plain NE"""
    h = two_bs_gains([1.0, 0.8], [1.0, 1.0], [0.2, 0.2], [0.05, 0.05])
    return make_network(h, 1.0, [1.0, 0.5], 0.3)


@pytest.fixture
def strong_network():
    h = two_bs_gains([1.0, 0.8], [1.0, 1.0], [0.2, 0.2], [0.05, 0.05])
    return make_network(h, 1.0, [10.0, 5.0], 1.5)


@pytest.fixture
def grid_network():
    """Small enough for an exhaustive 50^4 grid over the power space"""
    h = two_bs_gains([1.0, 0.8], [1.2, 1.0], [0.1, 0.05], [0.05, 0.1])
    return make_network(h, 1.0, [4.0, 2.0], 0.5)


@pytest.fixture
def uncoupled_network():
    h = two_bs_gains([1.0, 0.5], [0.8, 1.2], [0.0, 0.0], [0.0, 0.0])
    return make_network(h, 1.0, [2.0, 1.0], 0.0)


@pytest.fixture
def random_network_factory():
    """Random 3-BS 3-channel networks with optional finite peaks"""

    def factory(rng, num_bs=3, num_channels=3, with_peaks=False, gamma=None):
        h = rng.uniform(0.0, 0.3, size=(num_bs, num_bs, num_channels))
        idx = np.arange(num_bs)
        h[idx, idx, :] = rng.uniform(0.5, 2.0, size=(num_bs, num_channels))
        sigma = rng.uniform(0.5, 1.5, size=(num_bs, num_channels))
        p_sum = rng.uniform(1.0, 5.0, size=num_bs)
        p_peak = None
        if with_peaks:
            p_peak = rng.uniform(0.3, 1.0, size=(num_bs, num_channels)) * p_sum[:, None]
        gamma = rng.uniform(0.2, 1.0, size=num_channels) if gamma is None else gamma
        return make_network(h, sigma, p_sum, gamma, p_peak)

    return factory


@pytest.fixture(scope='session')
def seeded_network():
    """Default macro/small-cell scenario (M=6, N=10, gamma=2)"""
    return build_network(ScenarioConfig(seed=0))


def pytest_collection_modifyitems(config, items):
    if os.getenv('RUN_SLOW') == '1':
        return
    skip_slow = pytest.mark.skip(reason="set RUN_SLOW=1 to run ensemble checks")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)
