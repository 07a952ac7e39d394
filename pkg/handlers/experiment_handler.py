#!/usr/bin/env python3
"""
Experiment Handler
Loads experiment configs, runs sweep points x seeds x algorithms, writes traces, summaries,
aggregates and certificate reports
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pytz

from scheduler import run_experiment_jobs
from services.certificate_cache import certificate_cache
from services.errors import ConfigError, SolverError
from services.scenario import ScenarioConfig, build_network
from services.storage import write_csv, write_json

from .baselines import baseline_nep, baseline_qos_nep, run_oracle
from .equilibrium_algorithms import (AlgoParams, RunStatus, RunTrace, alg2_pricing, alg3_proximal, alg4_num,
                                     alg5_proximal_num, recommended_parameters)
from .report_schema import ALGORITHM_NAMES, SCHEMA_VERSION, SUMMARY_KEYS, SWEEP_PARAMETERS, get_columns

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = 20
DEFAULT_OUTPUT_DIR = 'results'

# Algorithm name -> runner(net, params, certs)
ALGORITHM_RUNNERS: Dict[str, Callable[..., RunTrace]] = {
    'alg2': lambda net, params, certs: alg2_pricing(net, params=params, certs=certs),
    'alg3': lambda net, params, certs: alg3_proximal(net, params=params, certs=certs),
    'alg4': lambda net, params, certs: alg4_num(net, params=params, certs=certs),
    'alg5': lambda net, params, certs: alg5_proximal_num(net, params=params, certs=certs),
    'nep': lambda net, params, certs: baseline_nep(net, params=params),
    'qos_nep': lambda net, params, certs: baseline_qos_nep(net, params=params),
    'oracle': lambda net, params, certs: run_oracle(net),
}


@dataclass
class AlgorithmSpec:
    name: str
    params: AlgoParams


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig
    algorithms: List[AlgorithmSpec]
    sweep_parameter: Optional[str] = None
    sweep_values: List = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> 'ExperimentConfig':
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object")
        unknown = set(data) - {'scenario', 'algorithms', 'sweep', 'seeds', 'output_dir'}
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        scenario = ScenarioConfig.from_dict(data.get('scenario', {}))

        algorithms = []
        for entry in data.get('algorithms', []):
            if isinstance(entry, str):
                entry = {'name': entry}
            name = entry.get('name')
            if name not in ALGORITHM_RUNNERS:
                raise ConfigError(f"unknown algorithm {name!r}; expected one of {ALGORITHM_NAMES}")
            algorithms.append(AlgorithmSpec(name, AlgoParams.from_dict(entry.get('params'))))
        if not algorithms:
            raise ConfigError("at least one algorithm is required")

        sweep_parameter, sweep_values = None, []
        sweep = data.get('sweep')
        if sweep:
            if len(sweep) != 1:
                raise ConfigError("sweep must name exactly one parameter")
            sweep_parameter, sweep_values = next(iter(sweep.items()))
            if sweep_parameter not in SWEEP_PARAMETERS:
                raise ConfigError(f"unknown sweep parameter {sweep_parameter!r}")
            if not isinstance(sweep_values, list) or not sweep_values:
                raise ConfigError("sweep values must be a nonempty list")

        seeds = data.get('seeds', DEFAULT_SEEDS)
        config = cls(scenario, algorithms, sweep_parameter, list(sweep_values), [], data.get('output_dir'))
        config.seeds = config.resolve_seeds(seeds)
        for point in config.points():
            config.scenario_for(point, config.seeds[0]).validate()
        return config

    def resolve_seeds(self, seeds) -> List[int]:
        if isinstance(seeds, int) and not isinstance(seeds, bool):
            if seeds < 1:
                raise ConfigError(f"seed count must be positive, got {seeds}")
            return [self.scenario.seed + s for s in range(seeds)]
        if isinstance(seeds, list) and seeds and all(isinstance(s, int) for s in seeds):
            return list(seeds)
        raise ConfigError(f"seeds must be a positive count or a nonempty list of integers, got {seeds!r}")

    def points(self) -> List[Optional[tuple]]:
        if self.sweep_parameter is None:
            return [None]
        return [(self.sweep_parameter, value) for value in self.sweep_values]

    def seeds_for(self, point) -> List[int]:
        # A seed sweep replaces the seed list
        if point is not None and point[0] == 'seed':
            return [int(point[1])]
        return self.seeds

    def scenario_for(self, point, seed: int) -> ScenarioConfig:
        overrides = {'seed': int(seed)}
        if point is not None and point[0] != 'seed':
            overrides[SWEEP_PARAMETERS[point[0]]] = point[1]
        try:
            return replace(self.scenario, **overrides).validate()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad sweep point {point}: {e}") from e


def load_experiment_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding='utf-8') as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read experiment config {path}: {e}") from e
    return ExperimentConfig.from_dict(data)


def apply_overrides(config: ExperimentConfig, seeds: Optional[int] = None, price_sign: Optional[str] = None,
                    out: Optional[str] = None) -> ExperimentConfig:
    if seeds is not None:
        config.seeds = config.resolve_seeds(seeds)
    if price_sign is not None:
        for spec in config.algorithms:
            spec.params = spec.params.with_overrides(price_sign=price_sign)
    config.output_dir = out or config.output_dir or os.getenv('SOLVER_OUTPUT_DIR', DEFAULT_OUTPUT_DIR)
    return config


def point_label(point) -> str:
    if point is None:
        return 'base'
    value = point[1]
    if isinstance(value, list):
        value = '-'.join(format(float(x), 'g') for x in value)
    return f"{point[0]}_{value}"


def build_jobs(config: ExperimentConfig) -> List[tuple]:
    return [(point, seed) for point in config.points() for seed in config.seeds_for(point)]


def trace_rows(trace: RunTrace):
    for record in trace.records:
        yield ([record.k, record.t, record.u, record.v]
               + list(record.p.ravel())
               + list(record.mu)
               + list(record.rates)
               + list(record.g)
               + [record.sum_rate, record.step_norm, record.price_broadcasts, record.omega_exchanges])


def summary_document(trace: RunTrace, scenario: ScenarioConfig, point, seed: int) -> dict:
    body = trace.summary.to_dict()
    body.update({
        'schema_version': SCHEMA_VERSION,
        'generated_at': datetime.now(pytz.utc).isoformat(),
        'scenario': scenario.to_dict(),
        'sweep_point': None if point is None else {'parameter': point[0], 'value': point[1]},
        'seed': seed,
    })
    return {key: body.get(key) for key in SUMMARY_KEYS}


def _scenario_key(scenario: ScenarioConfig) -> str:
    return json.dumps(scenario.to_dict(), sort_keys=True)


def run_job(config: ExperimentConfig, job) -> dict:
    """Every algorithm on one (sweep point, seed) realization"""
    point, seed = job
    run_dir = os.path.join(config.output_dir, point_label(point), f"seed_{seed}")
    results = []
    try:
        scenario = config.scenario_for(point, seed)
        net = build_network(scenario)
        certs = certificate_cache.get_or_build(_scenario_key(scenario), net)
    except SolverError as e:
        logger.error(f"Scenario {point_label(point)} seed {seed} failed: {e}")
        return {'status': 'error', 'error': str(e), 'results': results}

    for spec in config.algorithms:
        try:
            trace = ALGORITHM_RUNNERS[spec.name](net, spec.params, certs)
            out_dir = os.path.join(run_dir, spec.name)
            write_csv(os.path.join(out_dir, 'trace.csv'), get_columns('trace', net.num_bs, net.num_channels),
                      trace_rows(trace))
            document = summary_document(trace, scenario, point, seed)
            write_json(os.path.join(out_dir, 'summary.json'), document)
            results.append({'status': 'success', 'summary': document})
        except Exception as e:
            logger.error(f"{spec.name} on {point_label(point)} seed {seed} failed: {e}")
            results.append({'status': 'error', 'algorithm': spec.name, 'error': str(e)})
    return {'status': 'success', 'results': results}


def aggregate_summaries(summaries: Sequence[dict]) -> List[list]:
    """One row per (sweep point, algorithm), groups in first-seen order"""
    groups: Dict[tuple, List[dict]] = {}
    for summary in summaries:
        point = summary.get('sweep_point') or {'parameter': 'none', 'value': ''}
        value = point['value']
        label = json.dumps(value) if isinstance(value, list) else value
        groups.setdefault((point['parameter'], label, summary['algorithm']), []).append(summary)

    rows = []
    for (parameter, value, algorithm), members in groups.items():
        usable = [m for m in members if m['status'] != RunStatus.NUMERIC_ERROR.value] or members
        sum_rates = np.array([m['sum_rate'] for m in usable], dtype=float)
        rows.append([
            parameter,
            value,
            algorithm,
            len(members),
            float(np.mean(sum_rates)),
            float(np.std(sum_rates)),
            float(np.mean([m['violation_fraction'] for m in usable])),
            float(np.mean([m['iterations'] for m in usable])),
            float(np.mean([m['price_broadcasts'] for m in usable])),
            float(np.mean([m['omega_exchanges'] for m in usable])),
            sum(m['status'] == RunStatus.CONVERGED.value for m in members),
            sum(m['status'] == RunStatus.NUMERIC_ERROR.value for m in members),
        ])
    return rows


def run_experiment(config_path, seeds: Optional[int] = None, out: Optional[str] = None, jobs: int = 1,
                   price_sign: Optional[str] = None) -> int:
    """Exit status: 0 success, 1 numeric failure, 2 bad config"""
    try:
        config = apply_overrides(load_experiment_config(config_path), seeds, price_sign, out)
    except ConfigError as e:
        logger.error(f"❌ Bad experiment config: {e}")
        return 2

    job_list = build_jobs(config)
    logger.info(f"Running {len(job_list)} job(s) x {len(config.algorithms)} algorithm(s) into {config.output_dir}")
    outcomes = run_experiment_jobs(job_list, lambda job: run_job(config, job), jobs)

    summaries, failed = [], False
    for outcome in outcomes:
        if outcome is None or outcome['status'] != 'success':
            failed = True
            continue
        for result in outcome['results']:
            if result['status'] != 'success':
                failed = True
                continue
            summaries.append(result['summary'])
            failed = failed or result['summary']['status'] == RunStatus.NUMERIC_ERROR.value

    write_csv(os.path.join(config.output_dir, 'aggregate.csv'), get_columns('aggregate'),
              aggregate_summaries(summaries))
    certificate_cache.clear_cache()
    logger.info(f"{'❌' if failed else '✅'} Experiment finished: {len(summaries)} run(s) summarized")
    return 1 if failed else 0


def certificate_document(net, certs, point, seed: int) -> dict:
    values = {
        'schema_version': SCHEMA_VERSION,
        'seed': seed,
        'sweep_point': None if point is None else {'parameter': point[0], 'value': point[1]},
        'psi_is_P': certs.psi_is_P,
        'rho_phi': certs.rho_phi,
        'rho_psi_inv_upsilon': certs.to_dict()['rho_psi_inv_upsilon'],
        'tau_psi': certs.tau_psi,
        'lambda_min_psi_minus_upsilon': certs.lambda_min_psi_minus_upsilon,
        'L_lip': certs.L_lip,
        'recommended': recommended_parameters(net),
        'matrices': certs.to_dict(),
    }
    return {key: values[key] for key in get_columns('certificates')}


def report_certificates(config_path, seeds: Optional[int] = None, out: Optional[str] = None,
                        jobs: int = 1) -> int:
    """certificates.json per (sweep point, seed)"""
    try:
        config = apply_overrides(load_experiment_config(config_path), seeds, None, out)
    except ConfigError as e:
        logger.error(f"❌ Bad experiment config: {e}")
        return 2

    def worker(job):
        point, seed = job
        try:
            scenario = config.scenario_for(point, seed)
            net = build_network(scenario)
            certs = certificate_cache.get_or_build(_scenario_key(scenario), net)
            path = os.path.join(config.output_dir, point_label(point), f"seed_{seed}", 'certificates.json')
            write_json(path, certificate_document(net, certs, point, seed))
            return {'status': 'success', 'path': path}
        except Exception as e:
            logger.error(f"Certificates for {point_label(point)} seed {seed} failed: {e}")
            return {'status': 'error', 'error': str(e)}

    outcomes = run_experiment_jobs(build_jobs(config), worker, jobs)
    certificate_cache.clear_cache()
    return 0 if all(o is not None and o['status'] == 'success' for o in outcomes) else 1
