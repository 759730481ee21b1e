"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ContractError(TypeError):
    """An operation was invoked on an object kind it does not support."""


class NumericalError(ArithmeticError):
    """A computation produced nonfinite intermediates."""


class ParseError(ValueError):
    """A text input violates its grammar.

    Errors raised while scanning a document carry 1-based ``line`` and
    ``column``; errors about the input as a whole (an unknown option, a
    rejected field value) leave both at 0.
    """

    def __init__(self, message: str, line: int | None = 0, column: int | None = 0):
        line = 0 if line is None else int(line)
        column = 0 if column is None else int(column)
        if line >= 1:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column
