"""Exception hierarchy shared by the library and the command line.

Each class carries the process exit code the CLI maps it to.
"""


class CKILError(Exception):
    exit_code = 1


class ConfigError(CKILError, ValueError):
    """Invalid configuration: unknown environment, bad hyperparameter, mismatched expert."""

    exit_code = 2


class InputError(CKILError, ValueError):
    """Bad input data: out-of-range action, empty buffer, unreadable dataset."""

    exit_code = 3


class ParseError(InputError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IntegrityError(InputError):
    """Artifacts that belong together (buffer, cache, checkpoint) do not line up."""


class NumericError(CKILError, ArithmeticError):
    exit_code = 4
