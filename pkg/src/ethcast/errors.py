"""Exception hierarchy shared by all pipeline stages.

Each class carries the CLI exit code it maps to.
"""


class EthcastError(Exception):
    exit_code = 1


class ArgumentError(EthcastError, ValueError):
    """Caller passed arguments that violate an operation's preconditions."""

    exit_code = 1


class ConfigError(EthcastError):
    exit_code = 1


class FormatError(EthcastError):
    """A file does not follow its on-disk layout."""

    exit_code = 2


class DataError(EthcastError):
    """File or array contents violate a value invariant."""

    exit_code = 2


class ParseError(FormatError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StorageError(EthcastError, OSError):
    exit_code = 2

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class NumericFailure(EthcastError, ArithmeticError):
    """A non-finite value appeared where finite numbers are required."""

    exit_code = 3
