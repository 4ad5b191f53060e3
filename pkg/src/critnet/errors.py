"""Exception and warning types shared across the package."""


class CritnetError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(CritnetError, ValueError):
    """An argument violates its documented range or precondition."""


class ContractError(CritnetError, ValueError):
    """An input violates a structural contract (shape, symmetry, simplex)."""


class NumericError(CritnetError, ArithmeticError):
    """A numerical routine failed: non-convergence or non-finite values."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateGraphError(CritnetError, ValueError):
    """A graph-producing step yielded a degenerate result (e.g. no edges)."""


class EdgeListParseError(CritnetError, ValueError):
    """An edge-list file could not be parsed; carries the offending line."""

    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ConfigError(CritnetError, ValueError):
    """An experiment configuration file or CLI flag is invalid."""


class StageError(CritnetError, RuntimeError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage


class DegenerateInputWarning(UserWarning):
    """Emitted when an input is degenerate but a documented fallback applies."""


class NumericWarning(RuntimeWarning):
    """Emitted when a value was clamped or a 0/0 convention was applied."""
