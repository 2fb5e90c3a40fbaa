"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code that `posefusion.cli` maps it to.
"""


class PoseFusionError(Exception):
    exit_code = 1


class ParameterError(PoseFusionError, ValueError):
    exit_code = 2


class ConfigError(ParameterError):
    exit_code = 2


class DependencyError(PoseFusionError):
    """A pipeline stage is missing an upstream artifact."""

    exit_code = 3


class NumericalError(PoseFusionError, ArithmeticError):
    exit_code = 4


class DegeneracyError(NumericalError):
    pass


class HorizonError(NumericalError):
    """Image point maps to (or beyond) the ground-plane horizon."""


class GeometryError(ParameterError):
    pass


class OrientationUndefinedError(NumericalError):
    pass


class SamplingError(ParameterError, IndexError):
    pass


class OrderingError(ParameterError):
    pass


class InsufficientDataError(ParameterError):
    pass


class MetricUndefinedError(ParameterError):
    pass
