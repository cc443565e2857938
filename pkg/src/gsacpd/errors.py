"""Exception hierarchy shared by all modules."""


class GsaError(Exception):
    """Base class for every error raised by the package."""

    code = "error"


class ParameterError(GsaError, ValueError):
    code = "parameter"


class DegenerateSampleError(GsaError, ValueError):
    code = "degenerate_sample"


class CalibrationError(GsaError, ValueError):
    code = "calibration"


class ZeroMdeError(CalibrationError):
    code = "zero_mde"


class ValidityError(GsaError, ValueError):
    code = "validity"


class NumericError(GsaError, ArithmeticError):
    code = "numeric"


class StateError(GsaError, RuntimeError):
    code = "state"


class CalibrationFailedError(GsaError, RuntimeError):
    """Threshold search did not converge. ``trace`` holds (h, arl0) pairs."""

    code = "calibration_failed"

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
