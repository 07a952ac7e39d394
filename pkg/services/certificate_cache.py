import logging
import threading
from typing import Callable, Dict, Hashable, Optional

from .certificates import Certificates, build_certificates
from .game_core import NetworkInstance

logger = logging.getLogger(__name__)


class CertificateCache:
    """Certificates per scenario, shared by every algorithm run on the same realization"""

    def __init__(self, max_entries: int = 256):
        self._cache: Dict[Hashable, Certificates] = {}
        self._cache_lock = threading.Lock()
        self._max_entries = max_entries
        self.hits = 0
        self.misses = 0

    def get_cached_certificates(self, key: Hashable) -> Optional[Certificates]:
        with self._cache_lock:
            certs = self._cache.get(key)
            if certs is not None:
                self.hits += 1
                logger.debug(f"Certificate cache hit for {key}")
            return certs

    def set_cached_certificates(self, key: Hashable, certs: Certificates):
        with self._cache_lock:
            if len(self._cache) >= self._max_entries:
                # Oldest entry first (dicts keep insertion order)
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = certs

    def get_or_build(self, key: Hashable, net: NetworkInstance,
                     builder: Callable[..., Certificates] = build_certificates) -> Certificates:
        certs = self.get_cached_certificates(key)
        if certs is not None:
            return certs
        with self._cache_lock:
            self.misses += 1
        certs = builder(net.gains, net.budgets)
        self.set_cached_certificates(key, certs)
        return certs

    def clear_cache(self):
        with self._cache_lock:
            self._cache.clear()
            logger.info("Certificate cache cleared")

    def get_cache_stats(self) -> Dict[str, int]:
        with self._cache_lock:
            return {
                'total_keys': len(self._cache),
                'hits': self.hits,
                'misses': self.misses,
            }


# Global certificate cache instance
certificate_cache = CertificateCache()
