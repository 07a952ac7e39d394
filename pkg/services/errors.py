"""
Solver errors
Exception hierarchy shared by services, handlers and the CLI
"""

from typing import Optional


class SolverError(Exception):
    """Base class for every error raised by the solver"""


class ConfigError(SolverError, ValueError):
    """Invalid scenario, algorithm or experiment configuration"""


class DomainError(SolverError, ValueError):
    """Argument outside the domain of a model function"""


class CertificateError(SolverError):
    """A certificate matrix cannot be built or tested"""


class NumericError(SolverError):
    """Iterative numerics failed (no bracket, divergence, eigen-solver stall)"""

    def __init__(self, message: str, iterations: Optional[int] = None):
        super().__init__(message)
        self.iterations = iterations

    def __str__(self):
        base = super().__str__()
        if self.iterations is None:
            return base
        return f"{base} (after {self.iterations} iterations)"
