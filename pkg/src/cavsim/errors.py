"""Exception hierarchy shared by all cavsim modules."""


class CavsimError(Exception):
    """Base class for every error raised deliberately by cavsim."""


class InvalidParameterError(CavsimError, ValueError):
    """A physical parameter is missing, non-finite or out of range."""


class SpaceMismatchError(CavsimError, TypeError):
    """Operands live on different Hilbert spaces or on the wrong kind of subsystem."""


class AmbiguityError(CavsimError):
    """The Liouvillian has no unique steady state."""


class StiffnessError(CavsimError):
    """The adaptive integrator could not make progress."""


class UndefinedCorrelationError(CavsimError, ZeroDivisionError):
    """A normalised correlation function has a vanishing denominator."""


class ModelInvalidError(CavsimError):
    """Adiabatic-elimination validity ratios are violated."""
