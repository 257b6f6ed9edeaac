"""Exception types raised across the package."""


class AkoocError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(AkoocError, ValueError):
    pass


# network
class ZeroImpedanceLine(AkoocError, ValueError):
    pass


class IslandedBusDetected(AkoocError):
    pass


class NonConvergence(AkoocError):
    pass


class SingularJacobian(AkoocError):
    pass


# telemetry
class InsufficientNeighbors(AkoocError, ValueError):
    pass


# koopman
class InsufficientHistory(AkoocError):
    pass


class DegenerateWindow(AkoocError):
    pass


class NonFiniteUpdate(AkoocError, FloatingPointError):
    pass


# control
class RiccatiDivergence(AkoocError):
    pass


class SingularInnerMatrix(AkoocError):
    pass


class NegativeDiscriminant(AkoocError):
    pass


# harness
class PlantCollapse(AkoocError):
    pass


class UnknownChannel(AkoocError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ScenarioError(AkoocError, ValueError):
    pass
