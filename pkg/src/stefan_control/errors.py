"""Exception hierarchy shared by the solvers.

Each class carries a short ``context`` dict so the CLI can map failures to
exit codes and print the module that raised them.
"""


class StefanControlError(Exception):
    """Base class for every error raised by this package."""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


class DimensionError(StefanControlError, ValueError):
    pass


class GeometryError(StefanControlError, ValueError):
    pass


class ParameterError(StefanControlError, ValueError):
    """A Carleman or physics parameter is below its admissible threshold."""


class CompatibilityError(StefanControlError, ValueError):
    """Terminal/initial data violate a compatibility condition."""


class AdmissibilityError(StefanControlError):
    """The front (or q) dropped below the admissibility floor."""


class SingularityError(StefanControlError, ArithmeticError):
    pass


class NonConvergenceError(StefanControlError):
    pass


class HypothesisViolation(StefanControlError, ValueError):
    """Reference trajectory does not meet the positivity hypothesis."""
