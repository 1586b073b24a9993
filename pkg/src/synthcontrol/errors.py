"""Exception hierarchy.

Every domain failure raised by the package derives from :class:`SynthControlError`
so callers (and the CLI) can separate domain errors from programming errors.
"""


class SynthControlError(Exception):
    """Base class for all domain errors."""


class PanelFormatError(SynthControlError):
    pass


class MissingCell(PanelFormatError):
    pass


class DuplicateCell(PanelFormatError):
    pass


class NonNumericValue(PanelFormatError):
    pass


class InvalidDesign(SynthControlError):
    pass


class InsufficientPrePeriods(InvalidDesign):
    pass


class EmptyWindow(SynthControlError):
    pass


class EmptyValidationWindow(EmptyWindow):
    pass


class WindowTooShortForDifferencing(SynthControlError):
    pass


class SeriesTooShort(SynthControlError):
    pass


class DimensionMismatch(SynthControlError):
    pass


class DivisionByZeroTreatedValue(SynthControlError):
    pass


class InvalidSpec(SynthControlError):
    pass


class DidNotConverge(SynthControlError):
    """Raised when the simplex solver exhausts its iteration budget."""

    def __init__(self, message, objective=float("nan"), gradient_norm=float("nan")):
        super().__init__(message)
        self.objective = objective
        self.gradient_norm = gradient_norm
