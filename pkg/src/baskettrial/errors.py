"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class NumericalError(FloatingPointError):
    """Quadrature or other numeric accumulation produced a non-finite value."""


class ConfigError(ValueError):
    """Invalid run configuration or scenario definition."""


class CalibrationError(RuntimeError):
    """A calibration target could not be reached."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class InfeasibleDesign(RuntimeError):
    """No design satisfies the error constraints within the search cap."""


class SingularCovariance(ArithmeticError):
    """Cholesky factorisation failed after the full jitter schedule."""


class InitError(RuntimeError):
    """Log posterior is not finite at the initial state."""


class ChainFailure(RuntimeError):
    """A Markov chain diverged or kept failing to evaluate."""
