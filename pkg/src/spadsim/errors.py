"""Exception hierarchy shared by the simulation and analysis modules."""


class SpadSimError(Exception):
    """Base class for all package errors."""


class ParameterError(SpadSimError, ValueError):
    """A parameter is outside its physical domain."""


class UnitMismatchError(SpadSimError, ValueError):
    """Event stream and source parameters disagree on the gate unit."""


class InsufficientDataError(SpadSimError):
    """Not enough events or histogram bins to run an estimator."""


class ConvergenceError(SpadSimError):
    """An iterative fit failed to converge.

    ``trace`` holds one ``(iteration, chi2, params)`` tuple per accepted step.
    """

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class MemoryBudgetError(SpadSimError):
    """A simulation would produce more events than the configured budget allows."""


class DegenerateSpanError(InsufficientDataError):
    """A rate curve has too few points or too narrow a photon-rate span."""
