"""Exception types raised by the psde library."""


class PsdeError(Exception):
    """Base class for all psde errors."""


class ParameterOutOfDomain(PsdeError):
    """A parameter vector lies on or outside the boundary of the search domain."""


class InvalidFamilyConfig(PsdeError):
    """A built-in signal family was configured with inadmissible parameters."""


class NonFiniteState(PsdeError):
    """The simulated state became NaN/inf (step too coarse or explosive coefficients)."""


class SingularInformation(PsdeError):
    """An information matrix failed the positive-definiteness / conditioning check."""


class DegenerateObjective(PsdeError):
    """An estimation objective is constant over the search grid (not identifiable)."""


class NoInteriorCube(PsdeError):
    """No dyadic cube of the requested side length fits inside the parameter domain."""


class LinearlyDependentDerivatives(PsdeError):
    """The integrated signal derivatives are linearly dependent in L2([0, T])."""


class DimensionMismatch(PsdeError):
    """Array dimensions do not agree with the model's parameter dimension."""


class ConfigError(PsdeError):
    """An experiment config file failed schema validation."""
