#!/usr/bin/env python3
"""
Small-cell GNEP solver - command line entry point
"""

import argparse
import logging
import os
import sys

from dotenv import load_dotenv

# Load environment variables (optional .env file)
load_dotenv()

from handlers.equilibrium_algorithms import PRICE_SIGNS  # noqa: E402
from handlers.experiment_handler import report_certificates, run_experiment  # noqa: E402

LOG_LEVEL = os.getenv('SOLVER_LOG_LEVEL', 'INFO')
SOLVER_JOBS = os.getenv('SOLVER_JOBS', '1')
SOLVER_PRICE_SIGN = os.getenv('SOLVER_PRICE_SIGN')

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='smallcell-gnep',
        description='Distributed power control for two-tier small-cell networks',
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name, help_text in (('run', 'run the experiment described by a config'),
                            ('certify', 'write certificate reports for every scenario of a config')):
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument('config', help='experiment config (JSON)')
        sub.add_argument('--seeds', type=int, default=None, help='number of seeds (overrides the config)')
        sub.add_argument('--out', default=None, help='output directory')
        sub.add_argument('--jobs', type=int, default=None, help='worker threads')
        if name == 'run':
            sub.add_argument('--price-sign', choices=PRICE_SIGNS, default=None,
                             help="price step sign: 'projection' uses [mu + eta g]_+, 'paper' uses [mu - eta g]_+")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    args = build_parser().parse_args(argv)

    try:
        jobs = args.jobs if args.jobs is not None else int(SOLVER_JOBS)
    except ValueError:
        logger.error(f"SOLVER_JOBS must be an integer, got {SOLVER_JOBS!r}")
        return 2

    if args.command == 'run':
        price_sign = args.price_sign or SOLVER_PRICE_SIGN
        if price_sign is not None and price_sign not in PRICE_SIGNS:
            logger.error(f"SOLVER_PRICE_SIGN must be one of {PRICE_SIGNS}, got {price_sign!r}")
            return 2
        logger.info(f"🚀 Running {args.config}")
        return run_experiment(args.config, seeds=args.seeds, out=args.out, jobs=jobs, price_sign=price_sign)

    logger.info(f"🔍 Certifying {args.config}")
    return report_certificates(args.config, seeds=args.seeds, out=args.out, jobs=jobs)


if __name__ == '__main__':
    sys.exit(main())
