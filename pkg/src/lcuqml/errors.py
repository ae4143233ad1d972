"""Exception hierarchy shared across the package."""


class LcuQmlError(Exception):
    """Base class for all package errors."""


class CapacityError(LcuQmlError, ValueError):
    pass


class QubitIndexError(LcuQmlError, IndexError):
    pass


class ParameterError(LcuQmlError, ValueError):
    pass


class DegeneratePostselectionError(LcuQmlError, ArithmeticError):
    """Raised when the accepted ancilla branch carries (numerically) zero mass."""

    def __init__(self, success_prob: float, message: str | None = None):
        self.success_prob = float(success_prob)
        super().__init__(message or f"post-selection annihilated the state (p={success_prob:.3e})")


class UnsupportedVariantError(LcuQmlError, ValueError):
    pass


class InsufficientSamplesError(LcuQmlError, ValueError):
    pass


class FormatError(LcuQmlError, ValueError):
    pass


class ConfigError(LcuQmlError, ValueError):
    pass


class NumericalError(LcuQmlError, FloatingPointError):
    pass
