class NoisyTwinsError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(NoisyTwinsError, ValueError):
    pass


class ShapeError(NoisyTwinsError, ValueError):
    pass


class ContractError(NoisyTwinsError, ValueError):
    pass


class NumericError(NoisyTwinsError, ArithmeticError):
    pass


class FormatError(NoisyTwinsError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
