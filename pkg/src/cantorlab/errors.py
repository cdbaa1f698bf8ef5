"""Exception hierarchy shared by all modules."""


class CantorLabError(Exception):
    """Base class."""


class CapacityError(CantorLabError):
    pass


class DomainError(CantorLabError):
    """A point or object lies outside the domain an operation accepts."""


class LeafError(CantorLabError):
    pass


class ParameterError(CantorLabError):
    pass


class AccuracyError(CantorLabError):
    """Requested quantity cannot be resolved at the current discretization."""


class ConvergenceError(CantorLabError):
    pass


class ConstructionError(CantorLabError):
    pass


class CoverageError(CantorLabError):
    pass


class ClassificationError(CantorLabError):
    pass


class EmptySampleError(CantorLabError):
    """A supremum or average was requested over an empty sample set."""
