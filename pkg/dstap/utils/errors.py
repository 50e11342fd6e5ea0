"""
Exception hierarchy. Every error raised on purpose by the package derives
from DstapError and carries the process exit code used by run.py.
"""


class DstapError(Exception):
    exit_code = 1


class ConfigurationError(DstapError):
    exit_code = 2


class ShapeError(DstapError):
    exit_code = 3


class DataError(DstapError):
    exit_code = 3


class NumericalError(DstapError):
    exit_code = 4

    def __init__(self, message, **context):
        self.context = context
        if context:
            details = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({details})"
        super().__init__(message)


class InputShapeMismatch(ConfigurationError, ShapeError):
    """A checkpoint and a dataset disagree on the heatmap tensor shape."""
    exit_code = 3
