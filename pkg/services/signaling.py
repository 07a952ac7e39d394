import logging
import threading
from typing import Dict

logger = logging.getLogger(__name__)


class SignalingCounter:
    """Counts the messages a distributed run would exchange over the air/backhaul"""

    def __init__(self):
        self.price_broadcasts = 0
        self.omega_exchanges = 0
        self.lock = threading.Lock()

    def record_price_broadcast(self, count: int):
        """MUEs broadcast one price each"""
        if count < 0:
            raise ValueError(f"negative signaling count: {count}")
        with self.lock:
            self.price_broadcasts += count

    def record_omega_exchange(self, count: int):
        """BSs forward their omega_ij vectors to every other BS"""
        if count < 0:
            raise ValueError(f"negative signaling count: {count}")
        with self.lock:
            self.omega_exchanges += count
            logger.debug(f"omega exchanges: {self.omega_exchanges}")

    def absorb(self, other: 'SignalingCounter'):
        """Add the totals of a nested run"""
        totals = other.snapshot()
        self.record_price_broadcast(totals['price_broadcasts'])
        self.record_omega_exchange(totals['omega_exchanges'])

    def snapshot(self) -> Dict[str, int]:
        with self.lock:
            return {
                'price_broadcasts': self.price_broadcasts,
                'omega_exchanges': self.omega_exchanges,
            }
