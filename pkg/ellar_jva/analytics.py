"""JVA thresholding, percentages, epoch K analysis and the session report model."""

import dataclasses
import logging
import typing as t

import numpy as np
import pandas as pd

from ellar_jva.constants import DEFAULT_EPOCHS, DEFAULT_JVA_THRESHOLD
from ellar_jva.embedding import SimilarityTimeline, TimelineEntry
from ellar_jva.exceptions import TooFewEvents
from ellar_jva.oculomotor import EventSet, FixationEvent, KSample, coefficient_k, mean_k

logger = logging.getLogger(__name__)

Span = t.Tuple[int, int]


@dataclasses.dataclass(frozen=True)
class Segment:
    """A maximal run of JVA pairs; `start_ts`/`end_ts` on A's clock, `*_b` on B's."""

    start_ts: int
    end_ts: int
    pair_count: int
    first_index: int
    start_ts_b: int
    end_ts_b: int

    def span(self, participant: str = "A") -> Span:
        if participant == "B":
            return self.start_ts_b, self.end_ts_b
        return self.start_ts, self.end_ts


@dataclasses.dataclass(frozen=True)
class JvaSegments:
    frame_flags: t.Tuple[bool, ...]
    segments: t.Tuple[Segment, ...]
    threshold: float
    scores: t.Tuple[float, ...] = ()

    @property
    def jva_pairs(self) -> int:
        return sum(self.frame_flags)


def _validate_threshold(threshold: float) -> None:
    if not (-1.0 < threshold <= 1.0):
        raise ValueError(f"threshold must be in (-1, 1], got {threshold}")


def detect_jva(
    timeline: SimilarityTimeline,
    threshold: float = DEFAULT_JVA_THRESHOLD,
    smoothing_window: t.Optional[int] = None,
) -> JvaSegments:
    """
    Flag pairs whose similarity is strictly above `threshold` and merge runs.

    `smoothing_window` applies a centred moving average (in pairs) before
    thresholding.
    """
    _validate_threshold(threshold)
    scores = timeline.scores()
    if smoothing_window and smoothing_window > 1 and scores.size:
        scores = (
            pd.Series(scores)
            .rolling(smoothing_window, min_periods=1, center=True)
            .mean()
            .to_numpy()
        )
    flags = scores > threshold

    segments: t.List[Segment] = []
    if flags.any():
        padded = np.concatenate(([False], flags, [False])).astype(np.int8)
        edges = np.diff(padded)
        starts = np.flatnonzero(edges == 1)
        stops = np.flatnonzero(edges == -1)
        entries = timeline.entries
        for start, stop in zip(starts, stops):
            first, last = entries[start], entries[stop - 1]
            segments.append(
                Segment(
                    start_ts=first.ts_a,
                    end_ts=last.ts_a,
                    pair_count=int(stop - start),
                    first_index=int(start),
                    start_ts_b=first.ts_b,
                    end_ts_b=last.ts_b,
                )
            )
    return JvaSegments(
        tuple(bool(flag) for flag in flags),
        tuple(segments),
        threshold,
        tuple(float(score) for score in scores),
    )


def jva_percentage(segments: JvaSegments, total_pairs: int) -> float:
    jva_pairs = segments.jva_pairs
    if jva_pairs > total_pairs:
        raise ValueError(f"{jva_pairs} JVA pairs exceed {total_pairs} total pairs")
    if total_pairs == 0:
        return 0.0
    return 100.0 * jva_pairs / total_pairs


def epoch_spans(span: Span, epochs: int = DEFAULT_EPOCHS) -> t.List[Span]:
    """
    Split `span` into `epochs` contiguous intervals.

    Boundaries fall at start + i*duration//epochs, so durations differ by at
    most 1 ns and the last interval absorbs the remainder. All intervals are
    half-open except the last, which includes its end.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    start, end = span
    if end < start:
        raise ValueError(f"session span ends before it starts: {span}")
    duration = end - start
    bounds = [start + (index * duration) // epochs for index in range(epochs)] + [end]
    return list(zip(bounds[:-1], bounds[1:]))


def _in_epoch(timestamp: int, span: Span, last: bool) -> bool:
    return span[0] <= timestamp < span[1] or (last and timestamp == span[1])


def restrict_events(
    events: EventSet, segments: t.Union[JvaSegments, t.Sequence[Segment]], participant: str = "A"
) -> EventSet:
    """Keep fixations starting inside a JVA segment and reconnect them with saccades."""
    items = segments.segments if isinstance(segments, JvaSegments) else segments
    spans = [segment.span(participant) for segment in items]

    def inside(fixation: FixationEvent) -> bool:
        return any(lo <= fixation.start <= hi for lo, hi in spans)

    return events.subset(inside)


@dataclasses.dataclass(frozen=True)
class EpochReport:
    epoch_index: int
    time_span: Span
    mean_k_a: t.Optional[float] = None
    mean_k_b: t.Optional[float] = None
    annotation: t.Optional[str] = None
    k_trace_a: t.Tuple[KSample, ...] = ()
    k_trace_b: t.Tuple[KSample, ...] = ()
    fixations_a: int = 0
    fixations_b: int = 0

    @property
    def convergence(self) -> t.Optional[float]:
        if self.mean_k_a is None or self.mean_k_b is None:
            return None
        return abs(self.mean_k_a - self.mean_k_b)


def _epoch_k(
    events: EventSet, span: Span, last: bool, ddof: int
) -> t.Tuple[t.Optional[float], t.Tuple[KSample, ...], int]:
    window = events.subset(lambda fixation: _in_epoch(fixation.start, span, last))
    try:
        series = coefficient_k(window.fixations, window.saccades, ddof=ddof)
    except TooFewEvents:
        return None, (), len(window.fixations)
    return mean_k(series), series.samples, len(window.fixations)


def epoch_analysis(
    span: Span,
    epochs: int,
    events_a: EventSet,
    events_b: EventSet,
    scope: str = "epoch",
    segments: t.Optional[JvaSegments] = None,
    annotations: t.Optional[t.Mapping[int, str]] = None,
    ddof: int = 0,
) -> t.List[EpochReport]:
    """
    Mean K per epoch and participant, and their convergence |mean_A - mean_B|.

    With scope `jva` only fixations starting inside a JVA segment count. An
    epoch holding fewer than two fixations for a participant reports no mean
    for that participant.
    """
    if scope not in ("jva", "epoch"):
        raise ValueError(f"scope must be 'jva' or 'epoch', got {scope!r}")
    if scope == "jva":
        chosen = segments.segments if segments is not None else ()
        events_a = restrict_events(events_a, chosen, "A")
        events_b = restrict_events(events_b, chosen, "B")

    annotations = annotations or {}
    spans = epoch_spans(span, epochs)
    reports = []
    for index, epoch_span in enumerate(spans, start=1):
        last = index == len(spans)
        mean_a, trace_a, count_a = _epoch_k(events_a, epoch_span, last, ddof)
        mean_b, trace_b, count_b = _epoch_k(events_b, epoch_span, last, ddof)
        for participant, mean, count in (("A", mean_a, count_a), ("B", mean_b, count_b)):
            if mean is None:
                logger.info(
                    "epoch %d: participant %s has %d fixation(s), no mean K",
                    index,
                    participant,
                    count,
                )
        reports.append(
            EpochReport(
                epoch_index=index,
                time_span=epoch_span,
                mean_k_a=mean_a,
                mean_k_b=mean_b,
                annotation=annotations.get(index),
                k_trace_a=trace_a,
                k_trace_b=trace_b,
                fixations_a=count_a,
                fixations_b=count_b,
            )
        )
    return reports


@dataclasses.dataclass(frozen=True)
class Diagnostics:
    skipped_frames: int = 0
    unmatched_frames: int = 0
    skipped_pairs: int = 0
    aligned_pairs: int = 0
    behind_camera: int = 0
    skip_reasons: t.Dict[str, int] = dataclasses.field(default_factory=dict)
    backend_id: str = ""


@dataclasses.dataclass(frozen=True)
class SessionReport:
    session_id: str
    activity_label: str
    total_pairs: int
    jva_pairs: int
    jva_percentage: float
    threshold: float
    segments: t.Tuple[Segment, ...]
    epochs: t.Tuple[EpochReport, ...]
    diagnostics: Diagnostics
    config_echo: t.Dict[str, t.Any]
    timeline: t.Tuple[TimelineEntry, ...] = ()
    flags: t.Tuple[bool, ...] = ()

    def __post_init__(self) -> None:
        if self.jva_pairs > self.total_pairs:
            raise ValueError("jva_pairs cannot exceed total_pairs")
        if self.timeline and len(self.flags) != len(self.timeline):
            raise ValueError("one JVA flag per timeline entry is required")

    @classmethod
    def build(
        cls,
        session_id: str,
        activity_label: str,
        timeline: SimilarityTimeline,
        segments: JvaSegments,
        epochs: t.Sequence[EpochReport],
        diagnostics: Diagnostics,
        config_echo: t.Mapping[str, t.Any],
    ) -> "SessionReport":
        total = timeline.pair_count
        return cls(
            session_id=session_id,
            activity_label=activity_label,
            total_pairs=total,
            jva_pairs=segments.jva_pairs,
            jva_percentage=jva_percentage(segments, total),
            threshold=segments.threshold,
            segments=segments.segments,
            epochs=tuple(epochs),
            diagnostics=diagnostics,
            config_echo=dict(config_echo),
            timeline=tuple(timeline.entries),
            flags=segments.frame_flags,
        )
