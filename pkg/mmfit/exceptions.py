"""
Exception hierarchy for the mmfit services.

Every class carries the exit code the command-line surface reports when the
error escapes a subcommand.
"""
from typing import Optional

import numpy as np


class MMFitError(Exception):
    """Base class for all errors raised by mmfit."""
    exit_code = 1


class InputError(MMFitError, ValueError):
    """Unreadable or inconsistent user input (CSV, flags, dimensions)."""
    exit_code = 2


class DomainError(MMFitError, ValueError):
    """A numerical operation was called outside its domain."""
    exit_code = 2


class DegenerateError(DomainError):
    """Input is valid in form but degenerate (e.g. all-zero weights)."""


class StateError(MMFitError, RuntimeError):
    """A cached object lacks what the requested operation needs."""
    exit_code = 3


class NumericalError(MMFitError, ArithmeticError):
    """Non-finite objective, failed decomposition or divergence."""
    exit_code = 3

    def __init__(self, message: str, snapshot: Optional[np.ndarray] = None):
        super().__init__(message)
        self.snapshot = None if snapshot is None else np.array(snapshot, copy=True)


class FactorizationError(NumericalError):
    """Cholesky factorization failed; a larger ridge usually helps."""


class ConvergenceError(MMFitError):
    """The iteration budget ran out before the stopping rule fired."""
    exit_code = 4
