"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A model, solver or experiment configuration is inconsistent."""


class UnsupportedConfiguration(ConfigurationError):
    """The requested configuration is valid in principle but not implemented."""


class IntegrationDiverged(RuntimeError):
    """A time integrator produced a non-finite state.

    Parameters
    ----------
    step : int
        Index of the first step whose output was non-finite.
    """

    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"non-finite state at step {self.step}")


class OutOfRangeError(ValueError):
    """A table was queried outside its grid."""


class BasisDegeneracyError(RuntimeError):
    """A regression design matrix stayed rank deficient after pruning."""


class InvariantViolation(RuntimeError):
    """An internal invariant of a solver was violated."""
