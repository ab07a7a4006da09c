"""
Exception hierarchy shared by the engine and the CLI.
None of these derive from ValueError so pydantic validators re-raise them unchanged.
Each CLI-facing failure maps to an exit code through `exit_code_for`.
"""

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_IO_ERROR = 3


class StepsimError(Exception):
    """Base class for all toolkit errors."""


class DomainError(StepsimError):
    """State outside the domain of a map (negative queue length, off-grid state)."""


class RangeError(StepsimError, IndexError):
    """Time or index outside the evaluable range."""


class DimensionError(StepsimError):
    """Vectors of incompatible dimensions."""


class ParameterError(StepsimError):
    """Violated precondition on a numeric parameter."""


class SpecificationError(StepsimError):
    """A model or Lyapunov specification lacks required information."""


class OracleError(StepsimError):
    """A user-supplied oracle raised or returned an invalid value."""


class ConvergenceError(StepsimError):
    """An iterative procedure hit its iteration or event budget."""


class InternalError(StepsimError):
    """A type invariant was violated."""


class ConfigError(StepsimError):
    """Invalid experiment configuration file."""

    def __init__(self, message: str, path: str = None, line: int = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(prefix + message)


class ArtifactError(StepsimError, OSError):
    """Writing or reading an artifact failed."""


class CheckFailed(StepsimError):
    """An empirical check produced at least one violation."""


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, CheckFailed):
        return EXIT_CHECK_FAILED
    if isinstance(exc, (ArtifactError, OSError)):
        return EXIT_IO_ERROR
    # Everything else raised by the engine stems from the experiment's parameters
    return EXIT_CONFIG_ERROR
