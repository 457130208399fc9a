"""Exception hierarchy shared by all fedsim modules."""


class FedSimError(Exception):
    """Base class for every error raised by fedsim."""


class DimensionError(FedSimError, ValueError):
    """Vector or matrix lengths do not line up."""


class EmptyInputError(FedSimError, ValueError):
    """An operation that needs at least one element received none."""


class EmptyAggregateError(EmptyInputError):
    pass


class EmptyBatchError(EmptyInputError):
    pass


class WeightError(FedSimError, ValueError):
    pass


class ParameterError(FedSimError, ValueError):
    """A scalar argument is outside its admissible range."""


class OracleError(FedSimError, ArithmeticError):
    """A finite-difference probe produced a non-finite value."""


class ProtocolError(FedSimError):
    """Client/server message contract violated (mixed rounds, wrong sender, ...)."""


class CodecError(FedSimError, ValueError):
    pass


class FormatError(CodecError):
    """Malformed input; ``line`` is set for text inputs."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class LengthError(CodecError):
    pass


class CorruptionError(CodecError):
    pass


class LabelError(FedSimError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UndefinedAUCError(FedSimError, ValueError):
    """AUC requested on a set that holds only one class."""


class ValidationError(FedSimError, ValueError):
    """Experiment configuration rejected before any compute."""
