"""
Canonical report serialization and the plot-ready CSV/JSON side files.

Reports are rendered by hand rather than through `json.dumps` so that key
order, real formatting (six significant digits) and line endings are fixed;
identical reports always produce identical bytes.
"""

import dataclasses
import io
import json
import logging
import typing as t
from pathlib import Path

import pandas as pd

from ellar_jva.analytics import (
    Diagnostics,
    EpochReport,
    Segment,
    SessionReport,
)
from ellar_jva.constants import EVENT_CSV_COLUMNS, GROUND_TRUTH_COLUMNS
from ellar_jva.embedding import TimelineEntry
from ellar_jva.exceptions import SerializationError
from ellar_jva.oculomotor import EventSet, KSample, attention_mode
from ellar_jva.utils import format_real

logger = logging.getLogger(__name__)

ReportSource = t.Union[bytes, str, Path, t.BinaryIO]

SUMMARY_COLUMNS = (
    "session_id",
    "activity_label",
    "total_pairs",
    "jva_pairs",
    "jva_percentage",
)
REPORT_CSV_COLUMNS = (
    "row",
    "session_id",
    "activity_label",
    "total_pairs",
    "jva_pairs",
    "jva_percentage",
    "threshold",
    "epoch_index",
    "start_ns",
    "end_ns",
    "mean_k_A",
    "mean_k_B",
    "convergence",
    "annotation",
)


class Real(float):
    """A float rendered with six significant digits."""


def _optional_real(value: t.Optional[float]) -> t.Optional[Real]:
    return None if value is None else Real(value)


def _render(value: t.Any, indent: int, lossless: bool = False) -> str:
    pad = "  " * (indent + 1)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [
            f"{pad}{json.dumps(str(key), ensure_ascii=False)}: "
            f"{_render(item, indent + 1, lossless)}"
            for key, item in value.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [f"{pad}{_render(item, indent + 1, lossless)}" for item in value]
        return "[\n" + ",\n".join(items) + "\n" + "  " * indent + "]"
    if value is None or isinstance(value, (bool, str)):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if lossless and not isinstance(value, Real):
            return json.dumps(value, allow_nan=False)
        return format_real(value)
    raise SerializationError(f"cannot serialize {type(value).__name__}")


def _k_trace(samples: t.Sequence[KSample]) -> t.List[t.Dict[str, t.Any]]:
    return [
        {
            "fixation_index": sample.fixation_index,
            "timestamp_ns": sample.timestamp,
            "k": Real(sample.k),
        }
        for sample in samples
    ]


def _epoch_document(epoch: EpochReport) -> t.Dict[str, t.Any]:
    return {
        "epoch_index": epoch.epoch_index,
        "start_ns": epoch.time_span[0],
        "end_ns": epoch.time_span[1],
        "mean_k_A": _optional_real(epoch.mean_k_a),
        "mean_k_B": _optional_real(epoch.mean_k_b),
        "convergence": _optional_real(epoch.convergence),
        "annotation": epoch.annotation,
        "fixations_A": epoch.fixations_a,
        "fixations_B": epoch.fixations_b,
        "k_trace_A": _k_trace(epoch.k_trace_a),
        "k_trace_B": _k_trace(epoch.k_trace_b),
    }


def report_document(report: SessionReport) -> t.Dict[str, t.Any]:
    """The report as an ordered mapping, in the documented key order."""
    diagnostics = report.diagnostics
    return {
        "session_id": report.session_id,
        "activity_label": report.activity_label,
        "total_pairs": report.total_pairs,
        "jva_pairs": report.jva_pairs,
        "jva_percentage": Real(report.jva_percentage),
        "threshold": Real(report.threshold),
        "segments": [
            {
                "start_ts_ns": segment.start_ts,
                "end_ts_ns": segment.end_ts,
                "pair_count": segment.pair_count,
                "first_index": segment.first_index,
                "start_ts_b_ns": segment.start_ts_b,
                "end_ts_b_ns": segment.end_ts_b,
            }
            for segment in report.segments
        ],
        "epochs": [_epoch_document(epoch) for epoch in report.epochs],
        "diagnostics": {
            "skipped_frames": diagnostics.skipped_frames,
            "unmatched_frames": diagnostics.unmatched_frames,
            "skipped_pairs": diagnostics.skipped_pairs,
            "aligned_pairs": diagnostics.aligned_pairs,
            "behind_camera": diagnostics.behind_camera,
            "skip_reasons": dict(sorted(diagnostics.skip_reasons.items())),
            "backend_id": diagnostics.backend_id,
        },
        "config_echo": report.config_echo,
        "timeline": [
            {
                "ts_a_ns": entry.ts_a,
                "ts_b_ns": entry.ts_b,
                "score": Real(entry.score),
                "jva": flag,
            }
            for entry, flag in zip(report.timeline, report.flags)
        ],
    }


def _render_json(report: SessionReport) -> str:
    document = report_document(report)
    echo = document.pop("config_echo")
    timeline = document.pop("timeline")
    head = _render(document, 0)[: -len("\n}")]
    return (
        f"{head},\n"
        f'  "config_echo": {_render(echo, 1, lossless=True)},\n'
        f'  "timeline": {_render(timeline, 1)}\n'
        "}\n"
    )


def _csv_bytes(frame: pd.DataFrame) -> bytes:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue().encode("utf-8")


def _cell(value: t.Optional[float]) -> str:
    return "" if value is None else format_real(value)


def _render_csv(report: SessionReport) -> bytes:
    rows = [
        {
            "row": "summary",
            "session_id": report.session_id,
            "activity_label": report.activity_label,
            "total_pairs": str(report.total_pairs),
            "jva_pairs": str(report.jva_pairs),
            "jva_percentage": format_real(report.jva_percentage),
            "threshold": format_real(report.threshold),
        }
    ]
    for epoch in report.epochs:
        rows.append(
            {
                "row": "epoch",
                "session_id": report.session_id,
                "epoch_index": str(epoch.epoch_index),
                "start_ns": str(epoch.time_span[0]),
                "end_ns": str(epoch.time_span[1]),
                "mean_k_A": _cell(epoch.mean_k_a),
                "mean_k_B": _cell(epoch.mean_k_b),
                "convergence": _cell(epoch.convergence),
                "annotation": epoch.annotation or "",
            }
        )
    frame = pd.DataFrame(rows, columns=list(REPORT_CSV_COLUMNS), dtype=object).fillna("")
    return _csv_bytes(frame)


def emit_report(
    report: SessionReport,
    format: str = "json",
    stream: t.Optional[t.BinaryIO] = None,
) -> bytes:
    """
    Render `report` canonically and optionally write it to `stream`.

    JSON follows the documented key order followed by the per-pair
    `timeline`; CSV is one summary row plus one row per epoch.
    """
    try:
        if format == "json":
            content = _render_json(report).encode("utf-8")
        elif format == "csv":
            content = _render_csv(report)
        else:
            raise ValueError(f"unknown report format {format!r}")
    except ValueError as ex:
        raise SerializationError(str(ex)) from ex

    if stream is not None:
        try:
            stream.write(content)
            stream.flush()
        except OSError as ex:
            raise SerializationError(f"could not write report: {ex}") from ex
    return content


def _read_bytes(source: ReportSource) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def load_report(source: ReportSource) -> SessionReport:
    """Parse a JSON report back into a SessionReport."""
    try:
        document = json.loads(_read_bytes(source).decode("utf-8"))
        diagnostics = document["diagnostics"]
        return SessionReport(
            session_id=document["session_id"],
            activity_label=document["activity_label"],
            total_pairs=int(document["total_pairs"]),
            jva_pairs=int(document["jva_pairs"]),
            jva_percentage=float(document["jva_percentage"]),
            threshold=float(document["threshold"]),
            segments=tuple(
                Segment(
                    start_ts=item["start_ts_ns"],
                    end_ts=item["end_ts_ns"],
                    pair_count=item["pair_count"],
                    first_index=item["first_index"],
                    start_ts_b=item["start_ts_b_ns"],
                    end_ts_b=item["end_ts_b_ns"],
                )
                for item in document["segments"]
            ),
            epochs=tuple(_load_epoch(item) for item in document["epochs"]),
            diagnostics=Diagnostics(
                skipped_frames=diagnostics["skipped_frames"],
                unmatched_frames=diagnostics["unmatched_frames"],
                skipped_pairs=diagnostics["skipped_pairs"],
                aligned_pairs=diagnostics["aligned_pairs"],
                behind_camera=diagnostics["behind_camera"],
                skip_reasons=dict(diagnostics["skip_reasons"]),
                backend_id=diagnostics["backend_id"],
            ),
            config_echo=document["config_echo"],
            timeline=tuple(
                TimelineEntry(item["ts_a_ns"], item["ts_b_ns"], float(item["score"]))
                for item in document["timeline"]
            ),
            flags=tuple(bool(item["jva"]) for item in document["timeline"]),
        )
    except (KeyError, TypeError, ValueError) as ex:
        raise SerializationError(f"not a JSON session report: {ex}") from ex


def _load_trace(items: t.Sequence[t.Mapping[str, t.Any]]) -> t.Tuple[KSample, ...]:
    return tuple(
        KSample(item["fixation_index"], float(item["k"]), item["timestamp_ns"]) for item in items
    )


def _load_epoch(item: t.Mapping[str, t.Any]) -> EpochReport:
    def optional(key: str) -> t.Optional[float]:
        return None if item[key] is None else float(item[key])

    return EpochReport(
        epoch_index=item["epoch_index"],
        time_span=(item["start_ns"], item["end_ns"]),
        mean_k_a=optional("mean_k_A"),
        mean_k_b=optional("mean_k_B"),
        annotation=item["annotation"],
        k_trace_a=_load_trace(item["k_trace_A"]),
        k_trace_b=_load_trace(item["k_trace_B"]),
        fixations_a=item["fixations_A"],
        fixations_b=item["fixations_B"],
    )


def events_to_csv(events: EventSet) -> bytes:
    """Fixations and saccades interleaved in time order."""
    rows: t.List[t.Tuple[int, int, t.Dict[str, str]]] = []
    for fixation in events.fixations:
        rows.append(
            (
                fixation.start,
                0,
                {
                    "kind": "fixation",
                    "start_ns": str(fixation.start),
                    "end_ns": str(fixation.end),
                    "duration_ms": format_real(fixation.duration_ms),
                    "amplitude": "",
                    "unit": "",
                    "centroid_x": format_real(fixation.centroid[0]),
                    "centroid_y": format_real(fixation.centroid[1]),
                },
            )
        )
    for saccade in events.saccades:
        rows.append(
            (
                saccade.start,
                1,
                {
                    "kind": "saccade",
                    "start_ns": str(saccade.start),
                    "end_ns": str(saccade.end),
                    "duration_ms": format_real(saccade.duration_ms),
                    "amplitude": format_real(saccade.amplitude),
                    "unit": saccade.unit.value,
                    "centroid_x": "",
                    "centroid_y": "",
                },
            )
        )
    rows.sort(key=lambda row: (row[0], row[1]))
    frame = pd.DataFrame([row[2] for row in rows], columns=list(EVENT_CSV_COLUMNS), dtype=object)
    return _csv_bytes(frame)


def k_trace_to_csv(samples: t.Sequence[KSample], participant: t.Optional[str] = None) -> bytes:
    frame = pd.DataFrame(
        [
            {
                "participant": participant or "",
                "fixation_index": str(sample.fixation_index),
                "timestamp_ns": str(sample.timestamp),
                "k": format_real(sample.k),
                "mode": attention_mode(sample.k),
            }
            for sample in samples
        ],
        columns=["participant", "fixation_index", "timestamp_ns", "k", "mode"],
        dtype=object,
    )
    if participant is None:
        frame = frame.drop(columns=["participant"])
    return _csv_bytes(frame)


def timeline_to_csv(
    entries: t.Sequence[TimelineEntry], flags: t.Optional[t.Sequence[bool]] = None
) -> bytes:
    flags = flags if flags is not None else [False] * len(entries)
    frame = pd.DataFrame(
        [
            {
                "ts_a_ns": str(entry.ts_a),
                "ts_b_ns": str(entry.ts_b),
                "score": format_real(entry.score),
                "jva": "1" if flag else "0",
            }
            for entry, flag in zip(entries, flags)
        ],
        columns=["ts_a_ns", "ts_b_ns", "score", "jva"],
        dtype=object,
    )
    return _csv_bytes(frame)


def summarize_reports(reports: t.Iterable[SessionReport]) -> bytes:
    """One row per session, JVA percentages side by side."""
    frame = pd.DataFrame(
        [
            {
                "session_id": report.session_id,
                "activity_label": report.activity_label,
                "total_pairs": str(report.total_pairs),
                "jva_pairs": str(report.jva_pairs),
                "jva_percentage": format_real(report.jva_percentage),
            }
            for report in reports
        ],
        columns=list(SUMMARY_COLUMNS),
        dtype=object,
    )
    return _csv_bytes(frame)


def _read_table(source: ReportSource, columns: t.Sequence[str]) -> pd.DataFrame:
    data = _read_bytes(source)
    try:
        frame = pd.read_csv(
            io.BytesIO(data), dtype=str, keep_default_na=False, na_filter=False
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as ex:
        raise SerializationError(f"unreadable CSV: {ex}") from ex
    if tuple(frame.columns) != tuple(columns):
        raise SerializationError(
            f"expected columns {','.join(columns)}, got {','.join(map(str, frame.columns))}"
        )
    return frame


def read_annotations(source: ReportSource) -> t.Dict[int, str]:
    """Epoch labels from a CSV `epoch,annotation`."""
    frame = _read_table(source, ("epoch", "annotation"))
    annotations: t.Dict[int, str] = {}
    for epoch, annotation in zip(frame["epoch"], frame["annotation"]):
        try:
            index = int(epoch)
        except ValueError as ex:
            raise SerializationError(f"epoch {epoch!r} is not an integer") from ex
        annotations[index] = annotation
    return annotations


@dataclasses.dataclass(frozen=True)
class GroundTruth:
    timestamps: t.Tuple[int, ...]
    shared_flags: t.Tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.timestamps) != len(self.shared_flags):
            raise ValueError("one shared flag per timestamp is required")

    @property
    def expected_jva_fraction(self) -> float:
        if not self.shared_flags:
            return 0.0
        return sum(self.shared_flags) / len(self.shared_flags)

    def as_mapping(self) -> t.Dict[int, bool]:
        return dict(zip(self.timestamps, self.shared_flags))


def write_ground_truth(truth: GroundTruth) -> bytes:
    frame = pd.DataFrame(
        {
            "timestamp_ns": [str(ts) for ts in truth.timestamps],
            "shared_flag": ["1" if flag else "0" for flag in truth.shared_flags],
        },
        columns=list(GROUND_TRUTH_COLUMNS),
    )
    return _csv_bytes(frame)


def read_ground_truth(source: ReportSource) -> GroundTruth:
    frame = _read_table(source, GROUND_TRUTH_COLUMNS)
    try:
        timestamps = tuple(int(value) for value in frame["timestamp_ns"])
    except ValueError as ex:
        raise SerializationError(f"bad ground-truth timestamp: {ex}") from ex
    flags = []
    for value in frame["shared_flag"]:
        if value not in ("0", "1"):
            raise SerializationError(f"shared_flag must be 0 or 1, got {value!r}")
        flags.append(value == "1")
    return GroundTruth(timestamps, tuple(flags))
