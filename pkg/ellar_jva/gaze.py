"""Gaze stream ingestion, pinhole projection and two-stream time alignment."""

import dataclasses
import enum
import io
import logging
import math
import re
import typing as t
from pathlib import Path

import numpy as np
import pandas as pd
import ellar.common  # noqa: F401  -- loads ellar.pydantic without its circular-import error
from ellar.pydantic import model_validator
from pydantic import BaseModel, ConfigDict

from ellar_jva.constants import GAZE_CSV_COLUMNS, MPS_GAZE_COLUMNS
from ellar_jva.exceptions import (
    BehindCamera,
    MalformedRow,
    NonMonotonicTimestamp,
    UnknownFormat,
)

logger = logging.getLogger(__name__)

GazeSource = t.Union[bytes, str, Path, t.BinaryIO]

_LINE_IN_PARSER_ERROR = re.compile(r"line (\d+)")


class Participant(str, enum.Enum):
    A = "A"
    B = "B"


class Validity(str, enum.Enum):
    VALID = "valid"
    MISSING = "missing"
    OUT_OF_FRAME = "out_of_frame"


@dataclasses.dataclass(frozen=True)
class Direction3:
    dx: float
    dy: float
    dz: float

    def scaled(self, k: float) -> "Direction3":
        return Direction3(self.dx * k, self.dy * k, self.dz * k)


@dataclasses.dataclass(frozen=True)
class Pixel2:
    px: float
    py: float

    def as_tuple(self) -> t.Tuple[float, float]:
        return self.px, self.py


GazePayload = t.Union[Direction3, Pixel2]


@dataclasses.dataclass(frozen=True)
class GazeSample:
    timestamp: int
    participant: Participant
    payload: GazePayload
    validity: Validity = Validity.VALID

    def __post_init__(self) -> None:
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")

    @property
    def is_valid(self) -> bool:
        return self.validity is Validity.VALID

    @property
    def pixel(self) -> Pixel2:
        if not isinstance(self.payload, Pixel2):
            raise TypeError(f"gaze sample at {self.timestamp} ns is not projected")
        return self.payload


class CameraIntrinsics(BaseModel):
    """Pinhole intrinsics of the scene camera, in pixels."""

    model_config = ConfigDict(frozen=True)

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    @model_validator(mode="after")
    def post_intrinsics_validate(self) -> "CameraIntrinsics":
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths fx, fy must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("frame width and height must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the frame")
        return self

    @classmethod
    def from_text(cls, text: str) -> "CameraIntrinsics":
        """Parse the flat `key = value` (or `key: value`) intrinsics file."""
        values: t.Dict[str, str] = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = re.split(r"\s*[=:]\s*|\s+", line, maxsplit=1)
            if len(parts) != 2:
                raise ValueError(f"intrinsics line {line!r} has no value")
            values[parts[0]] = parts[1]
        return cls(**values)  # type:ignore[arg-type]

    def to_text(self) -> str:
        return "".join(
            f"{key}={value!r}\n" for key, value in self.model_dump().items()
        )

    def contains(self, px: float, py: float) -> bool:
        return 0 <= px < self.width and 0 <= py < self.height

    def project(self, direction: Direction3) -> Pixel2:
        return Pixel2(
            self.fx * (direction.dx / direction.dz) + self.cx,
            self.fy * (direction.dy / direction.dz) + self.cy,
        )

    def back_project(self, px: float, py: float) -> np.ndarray:
        """Unit ray through a pixel."""
        ray = np.array(
            [(px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0],
            dtype=np.float64,
        )
        return ray / np.linalg.norm(ray)

    def angle_between(self, a: t.Tuple[float, float], b: t.Tuple[float, float]) -> float:
        """Visual angle in degrees between the rays through two pixels."""
        cos = float(np.dot(self.back_project(*a), self.back_project(*b)))
        return math.degrees(math.acos(min(1.0, max(-1.0, cos))))


def load_intrinsics(source: t.Union[str, Path]) -> CameraIntrinsics:
    return CameraIntrinsics.from_text(Path(source).read_text(encoding="utf-8"))


@dataclasses.dataclass(frozen=True)
class AlignedPair:
    ts_a: int
    ts_b: int
    index_a: int
    index_b: int

    @property
    def skew(self) -> int:
        return abs(self.ts_a - self.ts_b)

    def transposed(self) -> "AlignedPair":
        return AlignedPair(self.ts_b, self.ts_a, self.index_b, self.index_a)


def _read_source(source: GazeSource) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def _read_frame(data: bytes, columns: t.Sequence[str], strict: bool) -> pd.DataFrame:
    try:
        df = pd.read_csv(
            io.BytesIO(data),
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            skip_blank_lines=False,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError as ex:
        raise MalformedRow(1, "missing header") from ex
    except pd.errors.ParserError as ex:
        found = _LINE_IN_PARSER_ERROR.search(str(ex))
        raise MalformedRow(int(found.group(1)) if found else 0, str(ex)) from ex
    except UnicodeDecodeError as ex:
        raise MalformedRow(0, "stream is not UTF-8") from ex

    df.columns = [str(column).strip() for column in df.columns]
    header = tuple(df.columns)
    if (strict and header != tuple(columns)) or not set(columns).issubset(header):
        raise MalformedRow(1, f"expected header {','.join(columns)}")
    return df.fillna("")


def _to_int(value: str, line: int, name: str) -> int:
    try:
        return int(value.strip())
    except ValueError:
        raise MalformedRow(line, f"{name} {value!r} is not an integer") from None


def _to_float(value: str, line: int, name: str) -> float:
    try:
        result = float(value.strip())
    except ValueError:
        raise MalformedRow(line, f"{name} {value!r} is not a number") from None
    if not math.isfinite(result):
        raise MalformedRow(line, f"{name} is not finite")
    return result


def _parse_csv_row(row: t.Dict[str, str], line: int) -> GazeSample:
    timestamp = _to_int(row["timestamp_ns"], line, "timestamp_ns")
    if timestamp < 0:
        raise MalformedRow(line, "timestamp_ns must be >= 0")
    try:
        participant = Participant(row["participant"].strip())
    except ValueError:
        raise MalformedRow(
            line, f"participant {row['participant']!r} is not A or B"
        ) from None

    direction = [row[key].strip() for key in ("dx", "dy", "dz")]
    pixel = [row[key].strip() for key in ("px", "py")]
    has_direction, has_pixel = any(direction), any(pixel)

    if has_direction == has_pixel:
        raise MalformedRow(line, "exactly one of (dx,dy,dz) or (px,py) must be set")
    payload: GazePayload
    if has_direction:
        if not all(direction):
            raise MalformedRow(line, "direction needs dx, dy and dz")
        payload = Direction3(
            *(_to_float(value, line, key) for value, key in zip(direction, ("dx", "dy", "dz")))
        )
    else:
        if not all(pixel):
            raise MalformedRow(line, "pixel needs px and py")
        payload = Pixel2(
            *(_to_float(value, line, key) for value, key in zip(pixel, ("px", "py")))
        )
    return GazeSample(timestamp, participant, payload)


def _parse_mps_row(row: t.Dict[str, str], line: int, participant: Participant) -> GazeSample:
    timestamp = _to_int(row["tracking_timestamp_us"], line, "tracking_timestamp_us")
    if timestamp < 0:
        raise MalformedRow(line, "tracking_timestamp_us must be >= 0")
    yaw = _to_float(row["yaw_rads_cpf"], line, "yaw_rads_cpf")
    pitch = _to_float(row["pitch_rads_cpf"], line, "pitch_rads_cpf")
    return GazeSample(
        timestamp * 1000,
        participant,
        Direction3(math.tan(yaw), math.tan(pitch), 1.0),
    )


def parse_gaze_stream(
    source: GazeSource,
    format: str = "csv",
    participant: t.Optional[t.Union[Participant, str]] = None,
) -> t.List[GazeSample]:
    """
    Parse a gaze stream into samples ordered by timestamp.

    `csv` is the documented `timestamp_ns,participant,dx,dy,dz,px,py` schema.
    `mps` reads Aria MPS eye-gaze exports (yaw/pitch in radians, microsecond
    timestamps); it needs `participant` since those files carry none.
    Timestamps must strictly increase per participant in file order. An
    empty source or a header alone yields no samples.
    """
    if format not in ("csv", "mps"):
        raise UnknownFormat(format)
    data = _read_source(source)
    if not data.strip():
        return []

    if format == "csv":
        df = _read_frame(data, GAZE_CSV_COLUMNS, strict=True)
        parse_row: t.Callable[[t.Dict[str, str], int], GazeSample] = _parse_csv_row
    elif format == "mps":
        if participant is None:
            raise ValueError("the mps format needs an explicit participant")
        who = Participant(participant)
        df = _read_frame(data, MPS_GAZE_COLUMNS, strict=False)

        def parse_row(row: t.Dict[str, str], line: int) -> GazeSample:
            return _parse_mps_row(row, line, who)

    else:
        raise UnknownFormat(format)

    samples: t.List[GazeSample] = []
    last_seen: t.Dict[Participant, int] = {}
    for offset, row in enumerate(df.to_dict(orient="records")):
        line = offset + 2
        sample = parse_row(row, line)
        previous = last_seen.get(sample.participant)
        if previous is not None and sample.timestamp <= previous:
            raise NonMonotonicTimestamp(line, sample.timestamp, previous)
        last_seen[sample.participant] = sample.timestamp
        samples.append(sample)

    samples.sort(key=lambda s: (s.timestamp, s.participant.value))
    return samples


def project_gaze(
    sample: GazeSample, intrinsics: CameraIntrinsics, strict: bool = False
) -> GazeSample:
    """
    Pinhole projection of a Direction3 sample onto the frame.

    Pixel2 samples pass through unchanged. A direction with dz <= 0 raises
    BehindCamera when `strict`, otherwise the sample comes back `missing`.
    """
    payload = sample.payload
    if isinstance(payload, Pixel2):
        return sample

    if payload.dz <= 0:
        if strict:
            raise BehindCamera(sample.timestamp)
        logger.warning(
            "participant %s: gaze at %d ns points behind the camera, marked missing",
            sample.participant.value,
            sample.timestamp,
        )
        return dataclasses.replace(sample, validity=Validity.MISSING)

    pixel = intrinsics.project(payload)
    validity = sample.validity
    if validity is Validity.VALID and not intrinsics.contains(pixel.px, pixel.py):
        validity = Validity.OUT_OF_FRAME
    return dataclasses.replace(sample, payload=pixel, validity=validity)


def project_stream(
    samples: t.Iterable[GazeSample], intrinsics: t.Optional[CameraIntrinsics]
) -> t.List[GazeSample]:
    result = []
    for sample in samples:
        if isinstance(sample.payload, Direction3):
            if intrinsics is None:
                raise ValueError(
                    "gaze stream holds 3D directions but no camera intrinsics were given"
                )
            sample = project_gaze(sample, intrinsics)
        result.append(sample)
    return result


def align_streams(
    a: t.Sequence[GazeSample], b: t.Sequence[GazeSample], tolerance: int
) -> t.List[AlignedPair]:
    """
    Pair samples of two streams one-to-one within `tolerance` nanoseconds.

    Candidates are accepted greedily by ascending skew, ties broken by the
    earlier then the later timestamp of the pair, so every accepted pair is a
    mutual nearest neighbour among the samples still free and swapping the
    streams gives the transposed pairs. Samples that are not valid are left
    out before matching.
    """
    if tolerance < 0:
        raise ValueError("alignment tolerance must be >= 0")

    valid_a = [(i, s.timestamp) for i, s in enumerate(a) if s.is_valid]
    valid_b = [(i, s.timestamp) for i, s in enumerate(b) if s.is_valid]
    if not valid_a or not valid_b:
        return []

    times_b = np.fromiter((ts for _, ts in valid_b), dtype=np.int64, count=len(valid_b))
    candidates = []
    for index_a, ts_a in valid_a:
        lo = int(np.searchsorted(times_b, ts_a - tolerance, side="left"))
        hi = int(np.searchsorted(times_b, ts_a + tolerance, side="right"))
        for index_b, ts_b in valid_b[lo:hi]:
            candidates.append(
                (abs(ts_a - ts_b), min(ts_a, ts_b), max(ts_a, ts_b), index_a, index_b, ts_a, ts_b)
            )
    candidates.sort()

    used_a: t.Set[int] = set()
    used_b: t.Set[int] = set()
    pairs = []
    for _, _, _, index_a, index_b, ts_a, ts_b in candidates:
        if index_a in used_a or index_b in used_b:
            continue
        used_a.add(index_a)
        used_b.add(index_b)
        pairs.append(AlignedPair(ts_a, ts_b, index_a, index_b))

    pairs.sort(key=lambda pair: (pair.ts_a, pair.ts_b))
    return pairs
