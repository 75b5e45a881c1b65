"""Exception types raised across the package."""


class PevoError(Exception):
    """Base class for all errors raised by pevo."""


class GridError(PevoError, ValueError):
    pass


class SymbolError(PevoError, ValueError):
    """Non-finite symbol values or unavailable derivative depth."""


class UnderResolved(PevoError):
    """A sampled quantity changed by more than the tolerance under refinement."""


class HypothesisViolation(PevoError):
    """The problem violates one of the structural hypotheses."""


class CalibrationError(PevoError):
    pass


class NeumannDivergence(PevoError):
    """The remainder of exp(lambda) exp(-lambda) is not a contraction."""


class SingularStep(PevoError):
    pass


class BoundaryMassError(PevoError):
    """The solution carries non-negligible mass near the artificial boundary."""
