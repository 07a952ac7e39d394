#!/usr/bin/env python3
"""
Report Schema
Versioned column and key layouts of every file the harness writes
"""

SCHEMA_VERSION = '1.0'

# Loop indices written first in every trace row; unused levels hold -1
LEVEL_COLUMNS = ['k', 't', 'u', 'v']

# Scalar trailer of every trace row
TRACE_TRAILER = ['sum_rate', 'step_norm', 'price_broadcasts', 'omega_exchanges']

SUMMARY_KEYS = [
    'schema_version',
    'generated_at',
    'algorithm',
    'status',
    'scenario',
    'sweep_point',
    'seed',
    'p',
    'mu',
    'rates',
    'mue_rates',
    'g',
    'sum_rate',
    'violation_fraction',
    'iterations',
    'inner_iterations',
    'price_broadcasts',
    'omega_exchanges',
    'kkt_problem',
    'kkt',
    'certificate_warnings',
    'message',
]

AGGREGATE_COLUMNS = [
    'sweep_parameter',
    'sweep_value',
    'algorithm',
    'runs',
    'sum_rate_mean',
    'sum_rate_std',
    'violation_fraction_mean',
    'iterations_mean',
    'price_broadcasts_mean',
    'omega_exchanges_mean',
    'converged_runs',
    'numeric_errors',
]

CERTIFICATE_KEYS = [
    'schema_version',
    'seed',
    'sweep_point',
    'psi_is_P',
    'rho_phi',
    'rho_psi_inv_upsilon',
    'tau_psi',
    'lambda_min_psi_minus_upsilon',
    'L_lip',
    'recommended',
    'matrices',
]

# Sweep parameters and the scenario field each one overrides
SWEEP_PARAMETERS = {
    'gamma': 'qos_nats',
    'sbs_power_dbm': 'sbs_sum_power_dbm',
    'seed': 'seed',
}

ALGORITHM_NAMES = ['alg2', 'alg3', 'alg4', 'alg5', 'nep', 'qos_nep', 'oracle']


def trace_columns(num_bs, num_channels):
    """Header of trace.csv for an (M+1) x N network"""
    columns = list(LEVEL_COLUMNS)
    columns += [f'p_{i}_{n}' for i in range(num_bs) for n in range(num_channels)]
    columns += [f'mu_{n}' for n in range(num_channels)]
    columns += [f'rate_{i}' for i in range(num_bs)]
    columns += [f'g_{n}' for n in range(num_channels)]
    columns += TRACE_TRAILER
    return columns


def get_columns(kind, num_bs=None, num_channels=None):
    """Columns or keys of a report kind"""
    if kind == 'trace':
        return trace_columns(num_bs, num_channels)
    return {
        'summary': SUMMARY_KEYS,
        'aggregate': AGGREGATE_COLUMNS,
        'certificates': CERTIFICATE_KEYS,
    }.get(kind, [])
