"""Exception hierarchy.

Everything raised on bad input data derives from :class:`HandsOffError`; the
CLI maps those to exit code 2. :class:`InvariantViolation` marks a bug in the
toolkit itself and maps to exit code 3.
"""


class HandsOffError(Exception):
    """Base class for data and format errors."""


class ShapeError(HandsOffError, ValueError):
    def __init__(self, message, layer_index=None, expected=None, actual=None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        if expected is not None or actual is not None:
            message = f"{message} (expected {expected}, got {actual})"
        super().__init__(message)
        self.layer_index = layer_index
        self.expected = expected
        self.actual = actual


class ConfigError(HandsOffError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class WeightsError(HandsOffError):
    pass


class TruncatedWeightsError(WeightsError):
    def __init__(self, layer_index, missing_bytes):
        where = "header" if layer_index is None else f"layer {layer_index}"
        super().__init__(f"weights truncated in {where}: {missing_bytes} bytes missing")
        self.layer_index = layer_index
        self.missing_bytes = missing_bytes


class TrailingBytesError(WeightsError):
    def __init__(self, surplus):
        super().__init__(f"weights file has {surplus} trailing bytes")
        self.surplus = surplus


class NegativeVarianceError(WeightsError):
    def __init__(self, layer_index, channel, value):
        super().__init__(
            f"layer {layer_index}: running variance {value} < 0 at channel {channel}"
        )
        self.layer_index = layer_index


class AnnotationError(HandsOffError):
    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class DetectionsFormatError(HandsOffError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FrameOrderError(HandsOffError):
    pass


class EvaluationError(HandsOffError):
    pass


class InvariantViolation(Exception):
    """Internal consistency check failed."""
