import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from services.errors import ConfigError, DomainError
from services.scenario import (MIN_DISTANCE_KM, ScenarioConfig, budgets_from_config, build_network,
                               dbm_to_watt, generate_topology, path_loss_linear, sample_gains,
                               sample_in_disk)


def test_topology_is_deterministic():
    cfg = ScenarioConfig(seed=42)
    first, second = generate_topology(cfg), generate_topology(cfg)
    assert_array_equal(first.sbs_positions, second.sbs_positions)
    assert_array_equal(first.mue_positions, second.mue_positions)
    assert_array_equal(first.sue_positions, second.sue_positions)


def test_topology_counts_for_default_layout():
    topology = generate_topology(ScenarioConfig(num_sbs=6, num_channels=10))
    assert topology.sbs_positions.shape == (6, 2)
    assert topology.mue_positions.shape == (10, 2)
    assert topology.sue_positions.shape == (6, 10, 2)
    assert topology.sue_positions.reshape(-1, 2).shape[0] == 60


def test_users_lie_inside_their_cells():
    cfg = ScenarioConfig(seed=3)
    topology = generate_topology(cfg)
    assert np.all(np.linalg.norm(topology.sbs_positions, axis=1) <= cfg.macro_radius_km)
    assert np.all(np.linalg.norm(topology.mue_positions, axis=1) <= cfg.macro_radius_km)
    offsets = topology.sue_positions - topology.sbs_positions[:, None, :]
    assert np.all(np.linalg.norm(offsets, axis=2) <= cfg.small_radius_km)


def test_disk_sampling_is_area_uniform():
    rng = np.random.default_rng(11)
    points = sample_in_disk(rng, [0.0, 0.0], 1.0, size=10_000)
    inner = np.mean(np.linalg.norm(points, axis=1) <= 0.5)
    assert abs(inner - 0.25) <= 0.02


def test_adding_a_small_cell_keeps_existing_draws():
    small = ScenarioConfig(num_sbs=2, num_channels=4, seed=5)
    large = ScenarioConfig(num_sbs=3, num_channels=4, seed=5)
    topo_small, topo_large = generate_topology(small), generate_topology(large)
    assert_array_equal(topo_small.sbs_positions, topo_large.sbs_positions[:2])
    assert_array_equal(topo_small.mue_positions, topo_large.mue_positions)
    h_small = sample_gains(topo_small, small).h
    h_large = sample_gains(topo_large, large).h
    assert_array_equal(h_small, h_large[:3, :3])


@pytest.mark.parametrize('d_km, expected', [
    (0.1, 10 ** -9.05),
    (0.5, 10 ** (-(128.1 + 37.6 * np.log10(0.5)) / 10)),
    (1.0, 10 ** -12.81),
])
def test_path_loss(d_km, expected):
    assert_allclose(path_loss_linear(d_km), expected, rtol=1e-12)


def test_path_loss_reference_values():
    assert_allclose(path_loss_linear(0.1), 8.913e-10, rtol=1e-3)
    assert_allclose(path_loss_linear(0.5), 2.098e-12, rtol=1e-3)


def test_path_loss_clamps_at_one_metre():
    assert path_loss_linear(0.0002) == path_loss_linear(MIN_DISTANCE_KM)


@pytest.mark.parametrize('d_km', [0.0, -0.3, float('nan')])
def test_path_loss_rejects_bad_distance(d_km):
    with pytest.raises(DomainError):
        path_loss_linear(d_km)


def test_path_loss_accepts_arrays():
    d = np.array([0.1, 1.0])
    assert_allclose(path_loss_linear(d), [10 ** -9.05, 10 ** -12.81], rtol=1e-12)


@pytest.mark.parametrize('dbm, watts', [(0.0, 1e-3), (46.0, 39.81), (-114.0, 3.981e-15)])
def test_dbm_to_watt(dbm, watts):
    assert_allclose(dbm_to_watt(dbm), watts, rtol=1e-3)


def test_gains_without_fading_are_pure_path_loss():
    cfg = ScenarioConfig(num_sbs=2, num_channels=3, fading=False, seed=9)
    topology = generate_topology(cfg)
    gains = sample_gains(topology, cfg)
    for i in range(3):
        for j in range(3):
            for n in range(3):
                d = np.linalg.norm(topology.bs_position(i) - topology.user_position(j, n))
                assert_allclose(gains.h[i, j, n], path_loss_linear(max(d, MIN_DISTANCE_KM)), rtol=1e-12)
    assert_allclose(gains.sigma, dbm_to_watt(cfg.noise_dbm))


def test_fading_power_has_unit_mean():
    faded = ScenarioConfig(num_sbs=1, num_channels=25_000, seed=1)
    flat = ScenarioConfig(num_sbs=1, num_channels=25_000, seed=1, fading=False)
    topology = generate_topology(faded)
    ratio = sample_gains(topology, faded).h / sample_gains(topology, flat).h
    # 100000 unit-mean exponential draws, standard error ~0.0032
    assert abs(ratio.mean() - 1.0) <= 0.01


def test_same_seed_gives_identical_gains():
    cfg = ScenarioConfig(num_sbs=3, num_channels=4, seed=21)
    assert_array_equal(build_network(cfg).gains.h, build_network(cfg).gains.h)


def test_budgets_default_peak_is_sum_budget():
    budgets = budgets_from_config(ScenarioConfig(num_sbs=2, num_channels=3))
    assert_allclose(budgets.p_sum, [dbm_to_watt(46.0)] + [dbm_to_watt(33.0)] * 2)
    assert_allclose(budgets.p_peak, np.repeat(budgets.p_sum[:, None], 3, axis=1))
    peaked = budgets_from_config(ScenarioConfig(num_sbs=2, num_channels=3, peak_power_dbm=30.0))
    assert_allclose(peaked.p_peak, 1.0)


@pytest.mark.parametrize('overrides', [
    {'num_sbs': 0},
    {'num_channels': 0},
    {'small_radius_km': 0.6},
    {'macro_radius_km': -1.0},
    {'qos_nats': [1.0, 2.0]},
    {'qos_nats': -0.5},
    {'seed': -1},
])
def test_invalid_scenario_rejected(overrides):
    with pytest.raises(ConfigError):
        ScenarioConfig(**overrides).validate()


def test_unknown_scenario_key_rejected():
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({'num_sbs': 2, 'antenna_gain_db': 3})


def test_scenario_from_json(tmp_path):
    path = tmp_path / 'scenario.json'
    path.write_text(json.dumps({'num_sbs': 2, 'num_channels': 3, 'qos_nats': [1.0, 2.0, 0.0]}))
    cfg = ScenarioConfig.from_json(path)
    assert cfg.num_sbs == 2
    assert_allclose(cfg.qos_vector(), [1.0, 2.0, 0.0])
    assert cfg.to_dict()['qos_nats'] == [1.0, 2.0, 0.0]


def test_scenario_from_missing_json(tmp_path):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_json(tmp_path / 'missing.json')
