"""Exception types raised at module boundaries."""


class EagrsError(Exception):
    """Base class for all package errors."""


class NonSquareError(EagrsError):
    pass


class AsymmetryError(EagrsError):
    pass


class DimensionMismatchError(EagrsError):
    pass


class NonFiniteError(EagrsError):
    pass


class UnknownActivationError(EagrsError):
    pass


class NonPositiveTemperatureError(EagrsError):
    pass


class InvalidProbabilityError(EagrsError):
    pass


class InvalidRatioError(EagrsError):
    pass


class IndexOutOfRangeError(EagrsError):
    pass


class ZeroVarianceError(EagrsError):
    def __init__(self, roi: int):
        super().__init__(f"ROI {roi} has zero variance; Pearson correlation undefined")
        self.roi = roi


class ParseError(EagrsError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + loc)
        self.line = line
        self.column = column


class MissingFileError(EagrsError):
    pass


class DivergedError(EagrsError):
    pass


class NotTrainedError(EagrsError):
    pass


class UnitOutOfRangeError(EagrsError):
    pass


class MissingCacheError(EagrsError):
    pass


class SingleClassError(EagrsError):
    pass


class NoDiscordantPairsError(EagrsError):
    pass


class ClassTooSmallError(EagrsError):
    pass


class EmptyGroupError(EagrsError):
    pass


class TooFewSubjectsError(EagrsError):
    pass


class CheckpointMismatchError(EagrsError):
    pass
