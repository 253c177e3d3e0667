"""Exception hierarchy shared by the library and the CLI exit codes."""


class QmotError(Exception):
    exit_code = 1


class ParameterError(QmotError, ValueError):
    exit_code = 2


class DimensionError(ParameterError):
    """An index, vector, or matrix does not match the problem dimensions."""


class SizeError(ParameterError):
    """Problem too large for the requested (exhaustive) backend."""


class FormatError(ParameterError):
    """Malformed or unsupported interchange file."""


class SolverError(QmotError):
    """No feasible sample could be produced."""

    exit_code = 4
