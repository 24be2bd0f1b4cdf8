"""Exception types raised across the package."""


class ILLError(Exception):
    pass


class ContractError(ILLError, ValueError):
    """A documented precondition was violated by the caller."""


class ShapeError(ContractError):
    pass


class ConfigError(ILLError, ValueError):
    pass


class ParseError(ILLError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatVersionError(ParseError):
    pass


class NumericError(ILLError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)


class ScheduleExhaustedError(ILLError, RuntimeError):
    pass


class DegeneratePositionError(ContractError):
    def __init__(self, position):
        self.position = position
        super().__init__(f"position {position}: allowed symbols carry zero mass")


class SizeError(ContractError):
    pass
