"""
Patch embeddings and the cosine-similarity timeline between two tubes.

Three interchangeable backends map a TubeSlice to a unit FeatureVector:
the builtin grid descriptor, vectors imported from a `JVAE` embedding table
computed offline (e.g. ResNet-50 penultimate features), and an external model
process speaking the frame/vector record protocol on stdin/stdout.
"""

import abc
import dataclasses
import functools
import logging
import os
import subprocess
import typing as t
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ellar_jva.constants import (
    BUILTIN_BACKEND_ID,
    EMBEDDING_MAGIC,
    EMBEDDING_VERSION,
    GRID_CELLS,
    LUMA_WEIGHTS,
    ORIENTATION_BIN_WIDTH,
    ORIENTATION_BINS,
)
from ellar_jva.exceptions import (
    DimensionMismatch,
    EmbeddingError,
    EmbeddingFormatError,
    ExternalBackendError,
    MissingEmbedding,
    MissingSlice,
    ZeroVector,
)
from ellar_jva.gaze import AlignedPair
from ellar_jva.tube import Tube, TubeSlice

logger = logging.getLogger(__name__)

_TABLE_HEADER = np.dtype(
    [("magic", "S4"), ("version", "<u4"), ("dim", "<u4"), ("count", "<u8")]
)
_VECTOR_RECORD_HEADER = np.dtype([("timestamp", "<u8"), ("dim", "<u4")])


@dataclasses.dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    backend_id: str
    zero: bool = False

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @classmethod
    def from_raw(cls, values: t.Any, backend_id: str) -> "FeatureVector":
        """L2-normalise; an all-zero input is flagged rather than normalised."""
        array = np.asarray(values, dtype=np.float64).ravel()
        norm = float(np.linalg.norm(array))
        if norm == 0.0:
            return cls(np.zeros_like(array), backend_id, zero=True)
        return cls(array / norm, backend_id)


@dataclasses.dataclass(frozen=True)
class TimelineEntry:
    ts_a: int
    ts_b: int
    score: float


@dataclasses.dataclass(frozen=True)
class TimelineSkip:
    ts_a: int
    ts_b: int
    reason: str


@dataclasses.dataclass
class SimilarityTimeline:
    entries: t.List[TimelineEntry]
    backend_id: str
    skipped: t.List[TimelineSkip] = dataclasses.field(default_factory=list)

    @property
    def pair_count(self) -> int:
        return len(self.entries)

    def scores(self) -> np.ndarray:
        return np.fromiter(
            (entry.score for entry in self.entries), dtype=np.float64, count=len(self.entries)
        )


@functools.lru_cache(maxsize=16)
def _cell_layout(height: int, width: int) -> t.Tuple[np.ndarray, np.ndarray]:
    rows = np.searchsorted(
        (np.arange(GRID_CELLS + 1) * height) // GRID_CELLS, np.arange(height), side="right"
    ) - 1
    cols = np.searchsorted(
        (np.arange(GRID_CELLS + 1) * width) // GRID_CELLS, np.arange(width), side="right"
    ) - 1
    cells = (rows[:, None] * GRID_CELLS + cols[None, :]).ravel()
    counts = np.bincount(cells, minlength=GRID_CELLS * GRID_CELLS).astype(np.float64)
    cells.setflags(write=False)
    return cells, np.maximum(counts, 1.0)


def describe_window(window: np.ndarray) -> np.ndarray:
    """
    Raw 704-dimensional grid descriptor of an RGB8 window.

    8x8 cells; per cell the mean R, G, B in [0, 1] (first 192 values) then an
    unsigned 8-bin gradient-orientation histogram of the luminance,
    magnitude-weighted and divided by the cell's pixel count (last 512).
    """
    image = window.astype(np.float64) / 255.0
    height, width = image.shape[:2]
    cells, counts = _cell_layout(height, width)
    n_cells = GRID_CELLS * GRID_CELLS

    means = np.stack(
        [
            np.bincount(cells, weights=image[..., channel].ravel(), minlength=n_cells)
            for channel in range(3)
        ],
        axis=1,
    ) / counts[:, None]

    luma = image @ np.asarray(LUMA_WEIGHTS)
    grad_y, grad_x = np.gradient(luma)
    magnitude = np.hypot(grad_x, grad_y).ravel()
    orientation = np.mod(np.arctan2(grad_y, grad_x), np.pi).ravel()
    bins = np.minimum((orientation / ORIENTATION_BIN_WIDTH).astype(np.int64), ORIENTATION_BINS - 1)
    histogram = np.bincount(
        cells * ORIENTATION_BINS + bins,
        weights=magnitude,
        minlength=n_cells * ORIENTATION_BINS,
    ).reshape(n_cells, ORIENTATION_BINS) / counts[:, None]

    return np.concatenate([means.ravel(), histogram.ravel()])


def embed_builtin(item: TubeSlice) -> FeatureVector:
    return FeatureVector.from_raw(describe_window(item.window), BUILTIN_BACKEND_ID)


class EmbeddingTable:
    """Timestamp -> vector map with the `JVAE` binary layout."""

    __slots__ = ("_dim", "_vectors")

    def __init__(self, dim: int, vectors: t.Mapping[int, np.ndarray]) -> None:
        for vector in vectors.values():
            if vector.shape != (dim,):
                raise DimensionMismatch(dim, int(vector.size))
        self._dim = dim
        self._vectors = {int(ts): np.asarray(v, dtype=np.float64) for ts, v in sorted(vectors.items())}

    @classmethod
    def from_mapping(cls, mapping: t.Mapping[int, t.Any]) -> "EmbeddingTable":
        vectors = {int(ts): np.asarray(v, dtype=np.float64).ravel() for ts, v in mapping.items()}
        if not vectors:
            raise EmbeddingFormatError("embedding table is empty")
        dim = next(iter(vectors.values())).size
        return cls(dim, vectors)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EmbeddingTable":
        if len(data) < _TABLE_HEADER.itemsize:
            raise EmbeddingFormatError("embedding table header is truncated")
        header = np.frombuffer(data, dtype=_TABLE_HEADER, count=1)[0]
        if bytes(header["magic"]) != EMBEDDING_MAGIC:
            raise EmbeddingFormatError("not a JVAE embedding table")
        if int(header["version"]) != EMBEDDING_VERSION:
            raise EmbeddingFormatError(f"unsupported table version {int(header['version'])}")
        dim, count = int(header["dim"]), int(header["count"])
        if dim == 0:
            raise EmbeddingFormatError("embedding dimension is zero")

        record = np.dtype([("timestamp", "<u8"), ("values", "<f4", (dim,))])
        expected = _TABLE_HEADER.itemsize + count * record.itemsize
        if len(data) != expected:
            raise EmbeddingFormatError(
                f"table declares {count} records of dim {dim} ({expected} bytes), got {len(data)}"
            )
        if count == 0:
            return cls(dim, {})
        records = np.frombuffer(data, dtype=record, count=count, offset=_TABLE_HEADER.itemsize)
        timestamps = records["timestamp"].astype(np.int64)
        if np.unique(timestamps).size != count:
            raise EmbeddingFormatError("duplicate timestamps in embedding table")
        return cls(dim, {int(ts): row.astype(np.float64) for ts, row in zip(timestamps, records["values"])})

    @classmethod
    def read(cls, path: t.Union[str, Path]) -> "EmbeddingTable":
        return cls.from_bytes(Path(path).read_bytes())

    @property
    def dim(self) -> int:
        return self._dim

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, timestamp: object) -> bool:
        return timestamp in self._vectors

    def timestamps(self) -> t.List[int]:
        return list(self._vectors)

    def get(self, timestamp: int) -> np.ndarray:
        try:
            return self._vectors[timestamp]
        except KeyError:
            raise MissingEmbedding(timestamp) from None

    def to_bytes(self) -> bytes:
        header = np.array(
            [(EMBEDDING_MAGIC, EMBEDDING_VERSION, self._dim, len(self._vectors))],
            dtype=_TABLE_HEADER,
        )
        record = np.dtype([("timestamp", "<u8"), ("values", "<f4", (self._dim,))])
        records = np.empty(len(self._vectors), dtype=record)
        for row, (ts, vector) in enumerate(self._vectors.items()):
            records[row] = (ts, vector.astype(np.float32))
        return header.tobytes() + records.tobytes()


def embed_import(timestamp: int, table: EmbeddingTable) -> FeatureVector:
    return FeatureVector.from_raw(table.get(timestamp), f"import-{table.dim}")


def write_frame_records(items: t.Sequence[TubeSlice]) -> bytes:
    """stdin side of the external contract: u64 timestamp + WxWx3 RGB8 per slice."""
    chunks = []
    for item in items:
        chunks.append(np.array([item.timestamp], dtype="<u8").tobytes())
        chunks.append(np.ascontiguousarray(item.window, dtype=np.uint8).tobytes())
    return b"".join(chunks)


def read_frame_records(data: bytes, window: int) -> t.Iterator[t.Tuple[int, np.ndarray]]:
    record = np.dtype([("timestamp", "<u8"), ("pixels", "u1", (window, window, 3))])
    if len(data) % record.itemsize:
        raise EmbeddingFormatError(
            f"frame stream of {len(data)} bytes is not a multiple of {record.itemsize}"
        )
    for row in np.frombuffer(data, dtype=record):
        yield int(row["timestamp"]), row["pixels"]


def write_vector_records(records: t.Iterable[t.Tuple[int, t.Any]]) -> bytes:
    """stdout side of the external contract: u64 timestamp, u32 dim, dim x f32."""
    chunks = []
    for timestamp, values in records:
        vector = np.asarray(values, dtype="<f4").ravel()
        chunks.append(np.array([(timestamp, vector.size)], dtype=_VECTOR_RECORD_HEADER).tobytes())
        chunks.append(vector.tobytes())
    return b"".join(chunks)


def read_vector_records(data: bytes) -> t.List[t.Tuple[int, np.ndarray]]:
    records = []
    offset = 0
    while offset < len(data):
        if len(data) - offset < _VECTOR_RECORD_HEADER.itemsize:
            raise EmbeddingFormatError("vector record header is truncated")
        header = np.frombuffer(data, dtype=_VECTOR_RECORD_HEADER, count=1, offset=offset)[0]
        offset += _VECTOR_RECORD_HEADER.itemsize
        dim = int(header["dim"])
        if len(data) - offset < 4 * dim:
            raise EmbeddingFormatError("vector record payload is truncated")
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        offset += 4 * dim
        records.append((int(header["timestamp"]), values))
    return records


_Embedded = t.Union[FeatureVector, EmbeddingError]


def _raise_first(results: t.Sequence[_Embedded]) -> t.List[FeatureVector]:
    vectors = []
    for result in results:
        if isinstance(result, EmbeddingError):
            raise result
        vectors.append(result)
    return vectors


class EmbeddingBackend(abc.ABC):
    backend_id: str = ""

    @abc.abstractmethod
    def embed(self, item: TubeSlice) -> FeatureVector:
        ...

    def embed_each(self, items: t.Sequence[TubeSlice], workers: int = 1) -> t.List[_Embedded]:
        """One outcome per slice, the vector or the error that slice raised."""

        def safe_embed(item: TubeSlice) -> _Embedded:
            try:
                return self.embed(item)
            except EmbeddingError as ex:
                return ex

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(safe_embed, items))
        return [safe_embed(item) for item in items]

    def embed_many(self, items: t.Sequence[TubeSlice], workers: int = 1) -> t.List[FeatureVector]:
        return _raise_first(self.embed_each(items, workers))


class BuiltinBackend(EmbeddingBackend):
    backend_id = BUILTIN_BACKEND_ID

    def embed(self, item: TubeSlice) -> FeatureVector:
        return embed_builtin(item)


class ImportBackend(EmbeddingBackend):
    def __init__(self, table: EmbeddingTable) -> None:
        self.table = table
        self.backend_id = f"import-{table.dim}"

    def embed(self, item: TubeSlice) -> FeatureVector:
        return embed_import(item.timestamp, self.table)


class ExternalBackend(EmbeddingBackend):
    """Runs a model process once per batch of slices."""

    def __init__(
        self,
        command: t.Sequence[str],
        timeout: t.Optional[float] = None,
        backend_id: t.Optional[str] = None,
    ) -> None:
        if not command:
            raise ValueError("external backend needs a command")
        self.command = list(command)
        self.timeout = timeout
        self.backend_id = backend_id or f"external-{Path(self.command[-1]).name}"

    def embed(self, item: TubeSlice) -> FeatureVector:
        return self.embed_many([item])[0]

    def embed_each(self, items: t.Sequence[TubeSlice], workers: int = 1) -> t.List[_Embedded]:
        """
        Embed all slices with a single model run.

        A record missing from the model's output, or one whose dimension
        differs from the first record, fails only its own slice. A model
        process that cannot run or exits non-zero fails the whole batch.
        """
        if not items:
            return []
        window = items[0].size
        if any(item.size != window for item in items):
            raise ValueError("all slices sent to an external model must share one window size")

        env = dict(os.environ, JVA_WINDOW=str(window))
        try:
            completed = subprocess.run(
                self.command,
                input=write_frame_records(items),
                capture_output=True,
                timeout=self.timeout,
                env=env,
                check=False,
            )
        except (OSError, subprocess.TimeoutExpired) as ex:
            raise ExternalBackendError(f"could not run {self.command[0]}: {ex}") from ex
        if completed.returncode != 0:
            stderr = completed.stderr.decode("utf-8", "replace").strip().splitlines()[-5:]
            raise ExternalBackendError(
                f"{self.command[0]} exited with {completed.returncode}: {' | '.join(stderr)}"
            )

        vectors = dict(read_vector_records(completed.stdout))
        result: t.List[_Embedded] = []
        dim: t.Optional[int] = None
        for item in items:
            values = vectors.get(item.timestamp)
            if values is None:
                result.append(MissingEmbedding(item.timestamp))
                continue
            if dim is None:
                dim = values.size
            if values.size != dim:
                result.append(DimensionMismatch(dim, values.size))
                continue
            result.append(FeatureVector.from_raw(values, self.backend_id))
        return result


def export_embeddings(
    items: t.Sequence[TubeSlice], backend: EmbeddingBackend, workers: int = 1
) -> EmbeddingTable:
    vectors = backend.embed_many(items, workers)
    return EmbeddingTable.from_mapping(
        {item.timestamp: vector.values for item, vector in zip(items, vectors)}
    )


def cosine_similarity(
    a: t.Union[FeatureVector, t.Sequence[float], np.ndarray],
    b: t.Union[FeatureVector, t.Sequence[float], np.ndarray],
) -> float:
    """dot(a, b) / (|a| |b|), clamped to [-1, 1]."""
    for vector in (a, b):
        if isinstance(vector, FeatureVector) and vector.zero:
            raise ZeroVector()
    va = a.values if isinstance(a, FeatureVector) else np.asarray(a, dtype=np.float64)
    vb = b.values if isinstance(b, FeatureVector) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionMismatch(int(va.size), int(vb.size))

    norm_a = float(np.linalg.norm(va))
    norm_b = float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector()
    score = float(np.dot(va, vb)) / (norm_a * norm_b)
    return min(1.0, max(-1.0, score))


def _embed_tube(
    slices: t.Mapping[int, TubeSlice],
    timestamps: t.Sequence[int],
    backend: EmbeddingBackend,
    workers: int,
) -> t.Dict[int, _Embedded]:
    items = [slices[ts] for ts in timestamps]
    return dict(zip(timestamps, backend.embed_each(items, workers)))


def _slice_map(tube: t.Union[Tube, t.Sequence[TubeSlice]]) -> t.Dict[int, TubeSlice]:
    if isinstance(tube, Tube):
        return tube.by_timestamp()
    return {item.timestamp: item for item in tube}


def similarity_timeline(
    tube_a: t.Union[Tube, t.Sequence[TubeSlice]],
    tube_b: t.Union[Tube, t.Sequence[TubeSlice]],
    pairs: t.Sequence[AlignedPair],
    backend: EmbeddingBackend,
    backend_b: t.Optional[EmbeddingBackend] = None,
    on_error: str = "skip",
    workers: int = 1,
) -> SimilarityTimeline:
    """
    Cosine similarity of every aligned pair, ordered as `pairs`.

    Each slice is embedded once. `backend_b` serves participant B when the two
    tubes need different sources (imported tables). With `on_error="skip"`
    a failing pair is logged and left out, with `"abort"` the error escapes.
    """
    if on_error not in ("skip", "abort"):
        raise ValueError(f"on_error must be 'skip' or 'abort', got {on_error!r}")
    backend_b = backend_b or backend
    slices_a, slices_b = _slice_map(tube_a), _slice_map(tube_b)

    wanted_a = sorted({pair.ts_a for pair in pairs if pair.ts_a in slices_a})
    wanted_b = sorted({pair.ts_b for pair in pairs if pair.ts_b in slices_b})
    vectors_a = _embed_tube(slices_a, wanted_a, backend, workers)
    vectors_b = _embed_tube(slices_b, wanted_b, backend_b, workers)

    entries: t.List[TimelineEntry] = []
    skipped: t.List[TimelineSkip] = []
    for pair in pairs:
        try:
            if pair.ts_a not in vectors_a:
                raise MissingSlice(pair.ts_a, "A")
            if pair.ts_b not in vectors_b:
                raise MissingSlice(pair.ts_b, "B")
            vector_a, vector_b = vectors_a[pair.ts_a], vectors_b[pair.ts_b]
            if isinstance(vector_a, EmbeddingError):
                raise vector_a
            if isinstance(vector_b, EmbeddingError):
                raise vector_b
            score = cosine_similarity(vector_a, vector_b)
        except EmbeddingError as ex:
            if on_error == "abort":
                raise
            logger.warning("pair (%d, %d) skipped: %s", pair.ts_a, pair.ts_b, ex)
            skipped.append(TimelineSkip(pair.ts_a, pair.ts_b, type(ex).__name__))
            continue
        entries.append(TimelineEntry(pair.ts_a, pair.ts_b, score))

    backend_id = backend.backend_id
    if backend_b.backend_id != backend_id:
        backend_id = f"{backend_id}+{backend_b.backend_id}"
    return SimilarityTimeline(entries, backend_id, skipped)
