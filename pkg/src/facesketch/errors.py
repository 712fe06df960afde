"""Exception hierarchy shared by every module."""


class FaceSketchError(Exception):
    """Base class for all package errors."""


class BadShape(FaceSketchError, ValueError):
    pass


class ShapeMismatch(FaceSketchError, ValueError):
    pass


class MissingFile(FaceSketchError, FileNotFoundError):
    pass


class EmptyDataset(FaceSketchError, ValueError):
    pass


class UnknownLabel(FaceSketchError, ValueError):
    pass


class IdMismatch(FaceSketchError, ValueError):
    pass


class NonFinite(FaceSketchError, FloatingPointError):
    def __init__(self, term, message=None):
        self.term = term
        super().__init__(message or f"non-finite value in term '{term}'")


class BadEpoch(FaceSketchError, ValueError):
    pass


class VersionMismatch(FaceSketchError, ValueError):
    pass


class CorruptFile(FaceSketchError, ValueError):
    pass


class InterruptedResume(FaceSketchError, ValueError):
    pass


class ConfigError(FaceSketchError, ValueError):
    pass
