"""Exception and warning types shared across the package."""


class EwmaOptError(Exception):
    """Base class for numerical failures raised by this package."""


class NonConvergence(EwmaOptError):
    """A series or iteration hit its term/step cap before stabilizing.

    ``partial`` holds the partial result accumulated so far (a lower bound
    for series with nonnegative terms), ``last_term`` the magnitude of the
    final contribution, ``terms`` the number of terms consumed.
    """

    def __init__(self, message, partial=None, last_term=None, terms=None):
        super().__init__(message)
        self.partial = partial
        self.last_term = last_term
        self.terms = terms


class CancellationDetected(EwmaOptError):
    """A closed-form evaluation lost too much precision to roundoff.

    Raised when the delay-coefficient boundary residual (or a survival
    probability bound) exceeds its tolerance, signalling that the caller
    should switch to the quadrature path or extended precision.
    """

    def __init__(self, message, residual=None, tolerance=None):
        super().__init__(message)
        self.residual = residual
        self.tolerance = tolerance


class SingularSystem(EwmaOptError):
    """The discretized integral operator produced a singular linear system."""


class BracketFailure(EwmaOptError):
    """Threshold calibration could not bracket the target run length."""


class HorizonCap(EwmaOptError):
    """A simulated run exceeded its step cap without crossing the threshold."""


class FlaggedEstimate(EwmaOptError):
    """Too many simulated runs hit the horizon cap for the estimate to be trusted.

    ``estimate`` carries the (flagged) estimate computed from the runs that
    did stop.
    """

    def __init__(self, message, estimate=None, cap_hits=None):
        super().__init__(message)
        self.estimate = estimate
        self.cap_hits = cap_hits


class InsufficientConditioning(EwmaOptError):
    """Too few simulated runs survived past the change point to condition on."""


class DegenerateDesignWarning(UserWarning):
    """The chart is configured so that it stops on the first observation."""
