"""Exception hierarchy shared by every solver stage."""


class BumpforgeError(Exception):
    """Base class for all library errors."""


class ConfigError(BumpforgeError, ValueError):
    """Malformed descriptor, inadmissible parameter or violated precondition."""


class DomainError(BumpforgeError, ValueError):
    """A field lies outside the admissible set (e.g. negative values)."""


class SolverError(BumpforgeError, RuntimeError):
    pass


class FitError(BumpforgeError, RuntimeError):
    pass


class EmergingOutsideBalls(BumpforgeError):
    """Part of u above delta is not confined to the balls B_R(x_i)."""


class EmptyBump(BumpforgeError):
    """An emerging part vanishes identically."""


class ThresholdViolated(BumpforgeError):
    """|b|_inf is not below the line-search threshold B1."""


class NotConverged(SolverError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class BumpCollapse(SolverError):
    pass


class IndeterminateVerdict(BumpforgeError):
    pass
