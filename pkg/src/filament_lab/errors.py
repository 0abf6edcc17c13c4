"""Exception hierarchy shared by every module."""


class FilamentLabError(Exception):
    """Base class for all errors raised by filament_lab."""


class ContractError(FilamentLabError, ValueError):
    """An input violates an operation's precondition."""


class DegenerateInputError(ContractError):
    pass


class GridTooCoarseError(ContractError):
    pass


class DomainError(FilamentLabError, ValueError):
    """A parameter lies outside the mathematical domain of the operation."""


class RangeError(FilamentLabError, ValueError):
    """A requested point lies outside the sampled grid."""


class ResolutionError(FilamentLabError, ValueError):
    """Discretization too coarse to resolve the oscillations involved."""


class FitUnstableError(FilamentLabError, ValueError):
    """Too little data for a meaningful fit."""


class ConfigError(FilamentLabError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class HypothesisAuditError(ContractError):
    """Filament data whose decay audit flags one or more norms."""

    def __init__(self, failing):
        self.failing = dict(failing)
        names = ", ".join(f"{k} = {v:.6g}" for k, v in self.failing.items())
        super().__init__(f"hypothesis audit failed: {names}")
