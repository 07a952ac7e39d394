#!/usr/bin/env python3
"""
Experiment scheduler
Runs (sweep point x seed) jobs on a worker pool and returns results in job order
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Sequence

logger = logging.getLogger(__name__)


class ExperimentScheduler:
    def __init__(self, max_workers: int = 1):
        self.max_workers = max(1, int(max_workers))
        self.running = False
        self._stop_event = threading.Event()

    def run_jobs(self, jobs: Sequence, worker: Callable) -> List:
        """Run worker(job) for every job; skipped jobs (after stop) come back as None"""
        self.running = True
        self._stop_event.clear()
        logger.info(f"Experiment scheduler started: {len(jobs)} job(s) on {self.max_workers} worker(s)")
        results = [None] * len(jobs)

        def guarded(job):
            if self._stop_event.is_set():
                return None
            return worker(job)

        try:
            if self.max_workers == 1:
                for index, job in enumerate(jobs):
                    results[index] = guarded(job)
            else:
                with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                    futures = {pool.submit(guarded, job): index for index, job in enumerate(jobs)}
                    for future in as_completed(futures):
                        results[futures[future]] = future.result()
        except KeyboardInterrupt:
            self.stop_scheduler()
            raise
        finally:
            self.running = False
        logger.info("Experiment scheduler finished")
        return results

    def stop_scheduler(self):
        """Stop the scheduler; jobs not yet started are skipped"""
        self._stop_event.set()
        logger.info("Experiment scheduler stopped")


def run_experiment_jobs(jobs: Sequence, worker: Callable, max_workers: int = 1) -> List:
    """Run jobs on a fresh scheduler (call this from the experiment handler)"""
    return ExperimentScheduler(max_workers).run_jobs(jobs, worker)
