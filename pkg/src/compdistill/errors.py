"""Exception types shared across the package.

Each maps onto a distinct CLI exit code (see ``compdistill.cli``).
"""


class CompDistillError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(CompDistillError, ValueError):
    exit_code = 2


class DimensionError(ConfigError):
    """Raised when tensor shapes do not line up."""


class FormatError(CompDistillError, ValueError):
    exit_code = 3


class TrainingDivergedError(CompDistillError, FloatingPointError):
    exit_code = 4

    def __init__(self, message, net_id=None, iteration=None):
        super().__init__(message)
        self.net_id = net_id
        self.iteration = iteration


class GradcheckError(CompDistillError, AssertionError):
    exit_code = 5
