"""Exception hierarchy shared by the simulator modules.

The CLI maps the two top-level families to exit codes:
ConfigError and argument ValueErrors -> 2, NumericalError -> 3 (OSError -> 4).
"""
from __future__ import annotations


class RatchetError(Exception):
    pass


# --- configuration / modelling ---

class ConfigError(RatchetError):
    """Bad config file, unknown model/observable name, invalid parameters."""


class ModelError(ConfigError, ValueError):
    pass


class DimensionError(RatchetError, ValueError):
    pass


class SpaceMismatchError(RatchetError, ValueError):
    pass


class TruncationError(RatchetError, ValueError):
    def __init__(self, message: str, tail_weight: float | None = None):
        super().__init__(message)
        self.tail_weight = tail_weight


# --- numerics ---

class NumericalError(RatchetError):
    pass


class ToleranceError(NumericalError):
    pass


class PositivityError(NumericalError):
    def __init__(self, message: str, time: float, eigenvalue: float):
        super().__init__(message)
        self.time = time
        self.eigenvalue = eigenvalue


class NormUnderflowError(NumericalError):
    pass


class DegenerateSteadyStateError(NumericalError):
    def __init__(self, message: str, multiplicity: int):
        super().__init__(message)
        self.multiplicity = multiplicity


class ConvergenceError(NumericalError):
    pass


class FitError(NumericalError):
    pass


class RamseyError(NumericalError):
    pass


EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    # DimensionError, SpaceMismatchError, TruncationError and bare argument errors
    if isinstance(exc, ValueError):
        return EXIT_CONFIG
    return 1
