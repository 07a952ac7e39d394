import threading

import pytest

from scheduler import ExperimentScheduler, run_experiment_jobs
from services.certificate_cache import CertificateCache
from services.signaling import SignalingCounter


def test_results_come_back_in_job_order():
    jobs = list(range(20))
    assert run_experiment_jobs(jobs, lambda x: x * x, max_workers=4) == [x * x for x in jobs]


def test_single_worker_runs_inline():
    seen = []
    run_experiment_jobs(['a', 'b'], lambda job: seen.append((job, threading.current_thread().name)))
    assert [job for job, _ in seen] == ['a', 'b']
    assert all(name == threading.current_thread().name for _, name in seen)


def test_stopped_scheduler_skips_remaining_jobs():
    scheduler = ExperimentScheduler(max_workers=1)

    def worker(job):
        if job == 1:
            scheduler.stop_scheduler()
        return job

    assert scheduler.run_jobs([0, 1, 2, 3], worker) == [0, 1, None, None]
    assert not scheduler.running


def test_worker_count_is_at_least_one():
    assert ExperimentScheduler(0).max_workers == 1


def test_signaling_counter_totals():
    counter = SignalingCounter()
    counter.record_price_broadcast(10)
    counter.record_omega_exchange(2)
    nested = SignalingCounter()
    nested.record_price_broadcast(5)
    counter.absorb(nested)
    assert counter.snapshot() == {'price_broadcasts': 15, 'omega_exchanges': 2}
    with pytest.raises(ValueError):
        counter.record_price_broadcast(-1)


def test_certificate_cache_builds_once(weak_network):
    cache = CertificateCache(max_entries=2)
    calls = []

    def builder(gains, budgets):
        calls.append(1)
        return object()

    first = cache.get_or_build('a', weak_network, builder)
    assert cache.get_or_build('a', weak_network, builder) is first
    assert len(calls) == 1
    assert cache.get_cache_stats() == {'total_keys': 1, 'hits': 1, 'misses': 1}


def test_certificate_cache_evicts_oldest(weak_network):
    cache = CertificateCache(max_entries=2)
    for key in 'abc':
        cache.get_or_build(key, weak_network, lambda gains, budgets: key)
    assert cache.get_cached_certificates('a') is None
    assert cache.get_cached_certificates('c') == 'c'
    cache.clear_cache()
    assert cache.get_cache_stats()['total_keys'] == 0


@pytest.mark.parametrize('workers', [1, 2])
def test_interrupt_stops_the_scheduler(workers):
    scheduler = ExperimentScheduler(max_workers=workers)

    def worker(job):
        if job == 0:
            raise KeyboardInterrupt
        return job

    with pytest.raises(KeyboardInterrupt):
        scheduler.run_jobs(list(range(4)), worker)
    assert scheduler._stop_event.is_set()
    assert not scheduler.running
