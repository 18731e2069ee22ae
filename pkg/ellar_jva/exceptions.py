import typing as t

from libcloud.common.types import LibcloudError  # noqa
from libcloud.storage.types import ContainerAlreadyExistsError  # noqa
from libcloud.storage.types import ContainerDoesNotExistError  # noqa
from libcloud.storage.types import InvalidContainerNameError  # noqa
from libcloud.storage.types import ObjectDoesNotExistError  # noqa


class JvaError(Exception):
    """Base class for every pipeline error raised by ellar-jva."""


class GazeFormatError(JvaError):
    pass


class MalformedRow(GazeFormatError):
    def __init__(self, line: int, reason: str) -> None:
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class NonMonotonicTimestamp(GazeFormatError):
    def __init__(self, line: int, timestamp: int, previous: int) -> None:
        self.line = line
        self.timestamp = timestamp
        self.previous = previous
        super().__init__(
            f"line {line}: timestamp {timestamp} does not increase after {previous}"
        )


class UnknownFormat(GazeFormatError):
    def __init__(self, format: str) -> None:
        self.format = format
        super().__init__(f"unknown gaze stream format {format!r}")


class BehindCamera(JvaError):
    def __init__(self, timestamp: int) -> None:
        self.timestamp = timestamp
        super().__init__(f"gaze direction at {timestamp} ns points behind the camera")


class DecodeError(JvaError):
    def __init__(self, source: str, reason: str = "") -> None:
        self.source = source
        self.reason = reason
        super().__init__(f"could not decode image {source}: {reason}".rstrip(": "))


class MissingTimestampInName(JvaError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"frame name {name!r} does not encode a timestamp")


class GazeOutOfFrame(JvaError):
    def __init__(self, timestamp: int, gaze: t.Tuple[float, float], reason: str) -> None:
        self.timestamp = timestamp
        self.gaze = gaze
        self.reason = reason
        super().__init__(f"gaze {gaze} at {timestamp} ns: {reason}")


class WindowTooLarge(JvaError):
    def __init__(self, window: int, width: int, height: int) -> None:
        self.window = window
        self.width = width
        self.height = height
        super().__init__(f"window {window} does not fit a {width}x{height} frame")


class NoFramesFound(JvaError):
    def __init__(self, source: str) -> None:
        self.source = source
        super().__init__(f"no frames found in {source}")


class EmbeddingError(JvaError):
    pass


class ZeroVector(EmbeddingError):
    def __init__(self, timestamp: t.Optional[int] = None) -> None:
        self.timestamp = timestamp
        super().__init__(f"feature vector at {timestamp} ns has zero norm")


class MissingEmbedding(EmbeddingError):
    def __init__(self, timestamp: int) -> None:
        self.timestamp = timestamp
        super().__init__(f"no embedding for timestamp {timestamp} ns")


class MissingSlice(EmbeddingError):
    def __init__(self, timestamp: int, participant: str) -> None:
        self.timestamp = timestamp
        self.participant = participant
        super().__init__(f"tube {participant} has no slice at {timestamp} ns")


class DimensionMismatch(EmbeddingError):
    def __init__(self, expected: int, got: int) -> None:
        self.expected = expected
        self.got = got
        super().__init__(f"expected dimension {expected}, got {got}")


class EmbeddingFormatError(EmbeddingError):
    pass


class ExternalBackendError(EmbeddingError):
    pass


class OculomotorError(JvaError):
    pass


class InsufficientSamples(OculomotorError):
    def __init__(self, count: int) -> None:
        self.count = count
        super().__init__(f"event detection needs at least 2 valid samples, got {count}")


class MixedUnits(OculomotorError):
    def __init__(self, units: t.Iterable[str]) -> None:
        self.units = tuple(units)
        super().__init__(f"amplitude units differ within one session: {self.units}")


class TooFewEvents(OculomotorError):
    def __init__(self, fixations: int) -> None:
        self.fixations = fixations
        super().__init__(f"coefficient K needs at least 2 fixations, got {fixations}")


class EmptySeries(OculomotorError):
    def __init__(self) -> None:
        super().__init__("K series is empty")


class SerializationError(JvaError):
    pass


class InvalidSpec(JvaError):
    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(reason)


class SpanMismatch(JvaError):
    pass


class ConfigError(JvaError):
    def __init__(self, reason: str, path: t.Optional[str] = None) -> None:
        self.reason = reason
        self.path = path
        super().__init__(f"{reason}: {path}" if path else reason)


class StageError(JvaError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
