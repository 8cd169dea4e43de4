"""Exception types raised across the package."""


class LF4DError(Exception):
    """Base class for all package errors."""


class MissingView(LF4DError):
    pass


class DimensionMismatch(LF4DError):
    pass


class BadMeta(LF4DError):
    pass


class BadExtent(LF4DError):
    pass


class OutOfBounds(LF4DError):
    pass


class ShapeMismatch(LF4DError):
    pass


class StaleCache(LF4DError):
    pass


class BadLabel(LF4DError):
    pass


class KernelTooLarge(LF4DError):
    pass


class GeometryConflict(LF4DError):
    pass


class BadLayout(LF4DError):
    pass


class TooFewImages(LF4DError):
    pass


class DivergedLoss(LF4DError):
    def __init__(self, iteration, loss):
        super().__init__(f"loss diverged at iteration {iteration}: {loss!r}")
        self.iteration = iteration
        self.loss = loss


class EmptyTestSet(LF4DError):
    pass


class UnknownPreset(LF4DError):
    pass


class NonConvertibleLayer(LF4DError):
    pass


class InputTooSmall(LF4DError):
    pass


class GridMismatch(LF4DError):
    pass


class BadRadius(LF4DError):
    pass


class BadCheckpoint(LF4DError):
    pass
