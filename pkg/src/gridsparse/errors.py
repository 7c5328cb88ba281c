"""Exception types shared across the package."""


class GridSparseError(Exception):
    """Base class for all package-specific errors."""


class ParseError(GridSparseError):
    """Malformed case file. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = "line {}: {}".format(line, message)
        super().__init__(message)


class CaseValidationError(GridSparseError):
    """Structurally invalid grid case (names the offending element)."""


class ConfigError(GridSparseError):
    """Invalid experiment or solver configuration."""


class InfeasibleError(GridSparseError):
    """Constraint set is empty or a requested target cannot be met."""
