import csv
import json
import logging
import math
import os
import time
from functools import wraps
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


def retry_on_os_error(max_retries=3, delay=0.2):
    """Decorator to retry writes that hit transient filesystem errors"""
    def decorator(func):
        @wraps(func)
        def sync_wrapper(*args, **kwargs):
            for attempt in range(max_retries):
                try:
                    return func(*args, **kwargs)
                except OSError as e:
                    if attempt < max_retries - 1:
                        logger.warning(f"Write failed ({e}), retrying in {delay} seconds... "
                                       f"(attempt {attempt + 1}/{max_retries})")
                        time.sleep(delay)
                        continue
                    raise
            return None

        return sync_wrapper
    return decorator


def format_number(value) -> str:
    """17 significant digits for floats, plain digits for integers"""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), '.17g')


def to_jsonable(value):
    """numpy -> builtin types; non-finite floats become null"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _ensure_parent(path):
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


@retry_on_os_error()
def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]):
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8', newline='') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(header)
        count = 0
        for row in rows:
            writer.writerow([cell if isinstance(cell, str) else format_number(cell) for cell in row])
            count += 1
    logger.debug(f"Wrote {count} rows to {path}")
    return count


@retry_on_os_error()
def write_json(path, data: dict):
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8', newline='\n') as fh:
        json.dump(to_jsonable(data), fh, indent=2, allow_nan=False)
        fh.write('\n')
    logger.debug(f"Wrote {path}")
