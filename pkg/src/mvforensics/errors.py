"""Typed error hierarchy shared by every module.

Everything raised on bad input derives from :class:`MvError` so callers (and
the fuzz harness) can separate data errors from programming bugs.
"""


class MvError(Exception):
    """Base class for all data errors raised by this package."""


# -- bitstream ---------------------------------------------------------------

class BitstreamError(MvError):
    pass


class TruncatedStream(BitstreamError):
    pass


class OutOfBits(BitstreamError):
    pass


class MalformedNal(BitstreamError):
    pass


class MalformedHeader(BitstreamError):
    pass


class UnsupportedFeature(BitstreamError):
    def __init__(self, feature: str):
        super().__init__(f"unsupported feature: {feature}")
        self.feature = feature


class MalformedSlice(BitstreamError):
    pass


class BitstreamDesync(BitstreamError):
    pass


# -- motion fields -----------------------------------------------------------

class GeometryError(MvError):
    pass


# -- file formats ------------------------------------------------------------

class FormatError(MvError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class MissingFrame(MvError):
    pass


# -- preprocessing / model / evaluation -------------------------------------

class BoxTooLarge(MvError):
    pass


class ShapeMismatch(MvError):
    pass


class NonFiniteGradient(MvError):
    def __init__(self, block: str):
        super().__init__(f"non-finite gradient in parameter block {block!r}")
        self.block = block


class EmptySplit(MvError):
    pass


class GridMismatch(MvError):
    pass


class NoPFrames(MvError):
    pass


class MissingCheckpoint(MvError):
    pass
