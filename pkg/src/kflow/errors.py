"""Exception hierarchy shared by all kflow modules."""


class KFlowError(Exception):
    """Base class for every error raised by kflow."""


class ValidationError(KFlowError, ValueError):
    """An instance or input violates a structural precondition."""


class UnbalancedDemand(ValidationError):
    def __init__(self, commodity, total):
        self.commodity = commodity
        self.total = total
        super().__init__(
            f"demands of commodity {commodity} sum to {total}, expected 0")


class NotConnected(ValidationError):
    def __init__(self, components):
        self.components = components
        super().__init__(
            f"graph has {components} weakly connected components, expected 1")


class InvalidEps(ValidationError):
    pass


class ParseError(KFlowError, ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class DimensionMismatch(KFlowError, ValueError):
    pass


class NonPositiveWeight(KFlowError, ValueError):
    pass


class SingularSystem(KFlowError, ArithmeticError):
    """A linear system (or a maintained inverse) is numerically singular."""


class Singular(SingularSystem):
    pass


class UpdateSingular(SingularSystem):
    """``I + V^T N^-1 U`` is singular; the caller should reinitialize."""


class Overflow(KFlowError, ArithmeticError):
    pass


class ZeroGradient(KFlowError, ArithmeticError):
    pass


class PathParameterTooSmall(KFlowError, ValueError):
    pass


class NegativeSlack(KFlowError, ArithmeticError):
    pass


class IterationCapExceeded(KFlowError, RuntimeError):
    def __init__(self, iterations, t):
        self.iterations = iterations
        self.t = t
        super().__init__(
            f"iteration cap of {iterations} reached at t={t:.6g}")


class CenteringLost(KFlowError, RuntimeError):
    pass


class IndexOutOfRange(KFlowError, IndexError):
    pass


class BatchExhausted(KFlowError, RuntimeError):
    pass


class PremiseViolated(KFlowError, ValueError):
    pass


class CannotRepair(KFlowError, RuntimeError):
    pass
