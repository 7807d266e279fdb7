"""
Custom exceptions for oppspec.
"""

from typing import Optional


class OppSpecError(Exception):
    """Base exception for oppspec."""
    pass


class InvalidInputError(OppSpecError, ValueError):
    """Argument violates an operation's precondition."""
    pass


class DomainError(OppSpecError, ValueError):
    """Mathematical domain violated (Q inverse argument, vanishing alpha denominator, ...)."""
    pass


class FitError(OppSpecError):
    """Mixture fitting failed."""
    def __init__(self, message: str, level: Optional[int] = None):
        super().__init__(message)
        self.level = level


class IngestError(OppSpecError):
    """Input file could not be parsed."""
    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.path = path
        self.line = line


class InsufficientDataError(IngestError):
    """Input file parsed but holds too little data."""
    pass


class ConfigError(OppSpecError):
    """Run configuration is invalid or references missing files."""
    pass


class SimulationError(OppSpecError):
    """Monte Carlo replay could not be carried out as requested."""
    pass
