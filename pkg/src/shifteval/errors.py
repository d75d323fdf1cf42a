"""Exception types raised by shifteval operations.

Every error carries a short machine-readable name (the class name) that the
CLI maps into structured error output.
"""


class ShiftEvalError(Exception):
    """Base class for all shifteval errors."""

    @property
    def name(self) -> str:
        return type(self).__name__


# dataset construction / validation
class EmptyStratum(ShiftEvalError):
    pass


class MissingnessMismatch(ShiftEvalError):
    pass


class DimensionMismatch(ShiftEvalError):
    pass


class InvalidConfig(ShiftEvalError):
    pass


class InvalidRho(ShiftEvalError):
    pass


class StratumTooSmall(ShiftEvalError):
    pass


# nuisance fitting
class Separation(ShiftEvalError):
    pass


class RankDeficient(ShiftEvalError):
    pass


class NoObservedOutcomes(ShiftEvalError):
    pass


class SolveFailure(ShiftEvalError):
    pass


class InfeasibleBalance(ShiftEvalError):
    def __init__(self, message: str, coordinate: str | None = None):
        super().__init__(message)
        self.coordinate = coordinate


# estimation
class MissingField(ShiftEvalError):
    pass


class DegenerateDenominator(ShiftEvalError):
    pass


class MissingStratum(ShiftEvalError):
    pass


class InvalidLevel(ShiftEvalError):
    pass


class VariantMismatch(ShiftEvalError):
    pass


# calibration
class EmptyCalibration(ShiftEvalError):
    pass


class MissingTreatmentsOutcomes(ShiftEvalError):
    pass
