"""Exception types shared across the package.

The CLI maps :class:`ContractError` (and subclasses) to exit code 2 and
:class:`DataError` (and subclasses) to exit code 3.
"""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    pass


class LabelError(ContractError):
    pass


class ConfigError(ContractError):
    pass


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf."""


class DataError(Exception):
    """Input data on disk is unusable."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(ParseError):
    pass


class IntegrityError(DataError):
    pass
