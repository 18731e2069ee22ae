"""Frame loading and gaze-centred spatiotemporal tubes."""

import dataclasses
import io
import logging
import typing as t
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from ellar_jva.constants import DEFAULT_ROI_WINDOW, FRAME_EXTENSIONS
from ellar_jva.exceptions import (
    DecodeError,
    GazeOutOfFrame,
    MissingTimestampInName,
    NoFramesFound,
    WindowTooLarge,
)
from ellar_jva.gaze import GazeSample, Pixel2
from ellar_jva.utils import round_half_up

logger = logging.getLogger(__name__)

FrameInput = t.Union[str, Path, bytes, t.BinaryIO]


@dataclasses.dataclass(frozen=True, eq=False)
class Frame:
    timestamp: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"frame raster must be HxWx3, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"frame raster must be uint8, got {self.pixels.dtype}")

    @classmethod
    def from_buffer(cls, timestamp: int, width: int, height: int, buffer: bytes) -> "Frame":
        if len(buffer) != width * height * 3:
            raise ValueError(
                f"RGB8 buffer of {len(buffer)} bytes does not match {width}x{height}"
            )
        pixels = np.frombuffer(buffer, dtype=np.uint8).reshape(height, width, 3)
        return cls(timestamp, pixels)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


@dataclasses.dataclass(frozen=True, eq=False)
class TubeSlice:
    """One gaze-centred window; `timestamp` is the gaze sample's."""

    timestamp: int
    window: np.ndarray
    origin: t.Tuple[int, int]
    gaze: t.Tuple[float, float]
    frame_timestamp: int

    @property
    def size(self) -> int:
        return int(self.window.shape[0])

    def contains_gaze(self) -> bool:
        x0, y0 = self.origin
        px, py = self.gaze
        return x0 <= px < x0 + self.size and y0 <= py < y0 + self.size


@dataclasses.dataclass(frozen=True)
class SkipRecord:
    timestamp: int
    reason: str
    detail: str = ""


@dataclasses.dataclass
class Tube:
    slices: t.List[TubeSlice]
    skipped: t.List[SkipRecord]

    def __len__(self) -> int:
        return len(self.slices)

    def __iter__(self) -> t.Iterator[TubeSlice]:
        return iter(self.slices)

    def by_timestamp(self) -> t.Dict[int, TubeSlice]:
        return {item.timestamp: item for item in self.slices}

    def skip_counts(self) -> t.Dict[str, int]:
        counts: t.Dict[str, int] = {}
        for record in self.skipped:
            counts[record.reason] = counts.get(record.reason, 0) + 1
        return dict(sorted(counts.items()))


def timestamp_from_name(name: str) -> int:
    stem = Path(name).stem
    if not stem.isdigit():
        raise MissingTimestampInName(name)
    return int(stem)


def load_frame(source: FrameInput, timestamp: t.Optional[int] = None) -> Frame:
    """
    Decode a PNG or PPM frame to an RGB8 raster.

    The timestamp comes from the file name (zero-padded nanoseconds) unless
    given. Grayscale and palette images are expanded to three channels.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        if timestamp is None:
            timestamp = timestamp_from_name(path.name)
        fp: t.Union[Path, t.BinaryIO] = path
        label = str(path)
    else:
        fp = io.BytesIO(source) if isinstance(source, bytes) else source
        name = getattr(source, "name", None)
        if timestamp is None:
            if not name:
                raise MissingTimestampInName("<stream>")
            timestamp = timestamp_from_name(str(name))
        label = str(name or "<stream>")

    try:
        with Image.open(fp) as image:
            image.load()
            rgb = image if image.mode == "RGB" else image.convert("RGB")
            pixels = np.array(rgb, dtype=np.uint8)
    except (OSError, SyntaxError, ValueError, Image.DecompressionBombError) as ex:
        raise DecodeError(label, str(ex)) from ex
    return Frame(timestamp, pixels)


class FrameSource(t.Protocol):
    def timestamps(self) -> t.Sequence[int]:
        ...

    def load(self, timestamp: int) -> Frame:
        ...


class FrameDirectory:
    """Frames stored one file per timestamp: `<zero-padded ns>.png|.ppm`."""

    __slots__ = ("_path", "_files")

    def __init__(self, path: t.Union[str, Path]) -> None:
        self._path = Path(path)
        files: t.Dict[int, Path] = {}
        if self._path.is_dir():
            for entry in sorted(self._path.iterdir()):
                if entry.suffix.lower() not in FRAME_EXTENSIONS:
                    continue
                timestamp = timestamp_from_name(entry.name)
                if timestamp in files:
                    raise ValueError(
                        f"{entry.name} and {files[timestamp].name} share a timestamp"
                    )
                files[timestamp] = entry
        self._files = dict(sorted(files.items()))

    def __repr__(self) -> str:
        return f"FrameDirectory({str(self._path)!r})"

    def timestamps(self) -> t.Sequence[int]:
        return list(self._files)

    def load(self, timestamp: int) -> Frame:
        return load_frame(self._files[timestamp], timestamp)


class InMemoryFrames:
    __slots__ = ("_frames",)

    def __init__(self, frames: t.Iterable[Frame]) -> None:
        self._frames = {frame.timestamp: frame for frame in frames}

    def __repr__(self) -> str:
        return f"InMemoryFrames({len(self._frames)} frames)"

    def timestamps(self) -> t.Sequence[int]:
        return sorted(self._frames)

    def load(self, timestamp: int) -> Frame:
        return self._frames[timestamp]


def extract_roi(
    frame: Frame,
    gaze: t.Union[GazeSample, Pixel2, t.Tuple[float, float]],
    window: int = DEFAULT_ROI_WINDOW,
) -> TubeSlice:
    """
    Crop a `window`x`window` region centred on the gaze point.

    Near the borders the window is shifted, never padded, so it always lies
    inside the frame and still contains the gaze point.
    """
    if window < 1:
        raise ValueError("window must be positive")
    if window > min(frame.width, frame.height):
        raise WindowTooLarge(window, frame.width, frame.height)

    timestamp = frame.timestamp
    if isinstance(gaze, GazeSample):
        timestamp = gaze.timestamp
        if not gaze.is_valid:
            raise GazeOutOfFrame(timestamp, (float("nan"), float("nan")), gaze.validity.value)
        gaze = gaze.pixel
    px, py = gaze.as_tuple() if isinstance(gaze, Pixel2) else gaze

    if not (0 <= px < frame.width and 0 <= py < frame.height):
        raise GazeOutOfFrame(
            timestamp, (px, py), f"outside the {frame.width}x{frame.height} frame"
        )

    x0 = min(max(round_half_up(px - window / 2), 0), frame.width - window)
    y0 = min(max(round_half_up(py - window / 2), 0), frame.height - window)
    pixels = np.ascontiguousarray(frame.pixels[y0 : y0 + window, x0 : x0 + window])
    return TubeSlice(timestamp, pixels, (x0, y0), (px, py), frame.timestamp)


def _nearest_frame(times: np.ndarray, timestamp: int, tolerance: int) -> t.Optional[int]:
    index = int(np.searchsorted(times, timestamp))
    best: t.Optional[int] = None
    for candidate in (index - 1, index):
        if 0 <= candidate < len(times):
            skew = abs(int(times[candidate]) - timestamp)
            if skew <= tolerance and (best is None or skew < abs(int(times[best]) - timestamp)):
                best = candidate
    return None if best is None else int(times[best])


def build_tube(
    frames: FrameSource,
    gaze: t.Sequence[GazeSample],
    window: int = DEFAULT_ROI_WINDOW,
    tolerance: int = 0,
    workers: int = 1,
    full_frame: bool = False,
) -> Tube:
    """
    Build one participant's tube: a slice per gaze sample matched to a frame.

    Every input sample ends up either as a slice or as a skip record; slices
    keep the gaze order whatever the number of workers.
    """
    times = np.asarray(sorted(frames.timestamps()), dtype=np.int64)
    if times.size == 0:
        raise NoFramesFound(repr(frames))

    outcomes: t.List[t.Union[TubeSlice, SkipRecord, None]] = []
    jobs: t.List[t.Tuple[int, GazeSample, int]] = []
    for sample in gaze:
        if not sample.is_valid:
            outcomes.append(SkipRecord(sample.timestamp, sample.validity.value))
            continue
        frame_ts = _nearest_frame(times, sample.timestamp, tolerance)
        if frame_ts is None:
            outcomes.append(SkipRecord(sample.timestamp, "no_frame"))
            continue
        jobs.append((len(outcomes), sample, frame_ts))
        outcomes.append(None)

    def work(job: t.Tuple[int, GazeSample, int]) -> t.Union[TubeSlice, SkipRecord]:
        _, sample, frame_ts = job
        try:
            frame = frames.load(frame_ts)
            size = min(frame.width, frame.height) if full_frame else window
            return extract_roi(frame, sample, size)
        except GazeOutOfFrame as ex:
            return SkipRecord(sample.timestamp, "out_of_frame", ex.reason)
        except DecodeError as ex:
            return SkipRecord(sample.timestamp, "decode_error", ex.reason)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(job) for job in jobs]
    for (position, _, _), result in zip(jobs, results):
        outcomes[position] = result

    slices = [item for item in outcomes if isinstance(item, TubeSlice)]
    skipped = [item for item in outcomes if isinstance(item, SkipRecord)]
    for record in skipped:
        logger.info("skipped gaze at %d ns: %s %s", record.timestamp, record.reason, record.detail)
    if skipped:
        logger.warning("%d of %d gaze samples produced no slice", len(skipped), len(gaze))

    slices.sort(key=lambda item: item.timestamp)
    return Tube(slices, skipped)
