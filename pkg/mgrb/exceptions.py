class MgrbError(Exception):
    """Base class for every error raised by the incremental-learning engine"""


class InvalidArgument(MgrbError, ValueError):
    """An operation was called outside its precondition"""


class HierarchyParseError(InvalidArgument):
    """Malformed ontology or embedding file"""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DatasetError(InvalidArgument):
    """Malformed dataset file or schema"""


class ConfigError(MgrbError):
    """Experiment configuration failed validation"""

    def __init__(self, errors) -> None:
        self.errors = errors
        super().__init__(f"Invalid experiment config: {errors}")


class PhaseError(MgrbError):
    """Failure inside an incremental phase, tagged with the phase index"""

    def __init__(self, phase: int, cause: Exception) -> None:
        self.phase = phase
        self.cause = cause
        super().__init__(f"phase {phase}: {cause}")
