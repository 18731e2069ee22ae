"""
Fixation/saccade detection (I-VT) and the ambient-focal coefficient K.

K_i = (d_i - mu_d) / sigma_d - (a_{i+1} - mu_a) / sigma_a for each fixation i
that has a following saccade; positive values lean focal, negative ambient.
"""

import dataclasses
import enum
import math
import typing as t

import numpy as np

from ellar_jva.constants import (
    DEFAULT_VELOCITY_THRESHOLD_DEG,
    DEFAULT_VELOCITY_THRESHOLD_PX,
    NS_PER_MS,
    NS_PER_S,
)
from ellar_jva.exceptions import EmptySeries, InsufficientSamples, MixedUnits, TooFewEvents
from ellar_jva.gaze import CameraIntrinsics, GazeSample
from ellar_jva.schemas import DetectorParams

Point = t.Tuple[float, float]


class AmplitudeUnit(str, enum.Enum):
    DEG = "deg"
    PX = "px"


@dataclasses.dataclass(frozen=True)
class FixationEvent:
    start: int
    end: int
    centroid: Point
    sample_count: int = 0

    @property
    def duration_ms(self) -> float:
        return (self.end - self.start) / NS_PER_MS


@dataclasses.dataclass(frozen=True)
class SaccadeEvent:
    start: int
    end: int
    amplitude: float
    unit: AmplitudeUnit
    from_fixation: int
    to_fixation: int

    @property
    def duration_ms(self) -> float:
        return (self.end - self.start) / NS_PER_MS


def amplitude_between(a: Point, b: Point, intrinsics: t.Optional[CameraIntrinsics]) -> float:
    if intrinsics is not None:
        return intrinsics.angle_between(a, b)
    return math.hypot(b[0] - a[0], b[1] - a[1])


@dataclasses.dataclass(frozen=True)
class EventSet:
    fixations: t.Tuple[FixationEvent, ...]
    saccades: t.Tuple[SaccadeEvent, ...]
    unit: AmplitudeUnit
    intrinsics: t.Optional[CameraIntrinsics] = None

    @classmethod
    def from_fixations(
        cls,
        fixations: t.Sequence[FixationEvent],
        intrinsics: t.Optional[CameraIntrinsics] = None,
    ) -> "EventSet":
        """Connect consecutive fixations with saccades."""
        unit = AmplitudeUnit.DEG if intrinsics is not None else AmplitudeUnit.PX
        saccades = tuple(
            SaccadeEvent(
                start=before.end,
                end=after.start,
                amplitude=amplitude_between(before.centroid, after.centroid, intrinsics),
                unit=unit,
                from_fixation=index,
                to_fixation=index + 1,
            )
            for index, (before, after) in enumerate(zip(fixations, fixations[1:]))
        )
        return cls(tuple(fixations), saccades, unit, intrinsics)

    def subset(self, keep: t.Callable[[FixationEvent], bool]) -> "EventSet":
        """Events restricted to the kept fixations, saccades rebuilt between them."""
        return EventSet.from_fixations(
            [fixation for fixation in self.fixations if keep(fixation)], self.intrinsics
        )


def check_units(*event_sets: EventSet) -> AmplitudeUnit:
    units = {event_set.unit for event_set in event_sets}
    if len(units) > 1:
        raise MixedUnits(sorted(unit.value for unit in units))
    return units.pop()


def detect_events(
    gaze: t.Sequence[GazeSample],
    params: t.Optional[DetectorParams] = None,
    intrinsics: t.Optional[CameraIntrinsics] = None,
) -> EventSet:
    """
    Velocity-threshold (I-VT) classification of projected gaze samples.

    With intrinsics the velocity is the angle between back-projected rays per
    second and amplitudes are degrees; without, both are pixels and the
    velocity is the displacement per sample interval. Samples further apart
    than `max_gap_ms` close the running fixation. Fixations shorter than
    `min_fixation_ms` are dropped.
    """
    params = params or DetectorParams()
    valid = [sample for sample in gaze if sample.is_valid]
    if len(valid) < 2:
        raise InsufficientSamples(len(valid))

    times = np.fromiter((s.timestamp for s in valid), dtype=np.int64, count=len(valid))
    if np.any(np.diff(times) <= 0):
        raise ValueError("gaze timestamps must strictly increase")
    points = np.array([s.pixel.as_tuple() for s in valid], dtype=np.float64)

    if intrinsics is not None:
        threshold = params.velocity_threshold or DEFAULT_VELOCITY_THRESHOLD_DEG
        rays = np.stack([intrinsics.back_project(x, y) for x, y in points])
        cos = np.clip(np.einsum("ij,ij->i", rays[:-1], rays[1:]), -1.0, 1.0)
        velocity = np.degrees(np.arccos(cos)) / (np.diff(times) / NS_PER_S)
    else:
        threshold = params.velocity_threshold or DEFAULT_VELOCITY_THRESHOLD_PX
        velocity = np.hypot(*np.diff(points, axis=0).T)
    gap = np.diff(times) > params.max_gap_ms * NS_PER_MS

    fixations: t.List[FixationEvent] = []

    def close(cluster: t.List[int]) -> None:
        if len(cluster) < 2:
            return
        start, end = int(times[cluster[0]]), int(times[cluster[-1]])
        if (end - start) / NS_PER_MS < params.min_fixation_ms:  # type:ignore[union-attr]
            return
        centroid = points[cluster].mean(axis=0)
        fixations.append(
            FixationEvent(start, end, (float(centroid[0]), float(centroid[1])), len(cluster))
        )

    cluster = [0]
    for index in range(1, len(valid)):
        if gap[index - 1] or velocity[index - 1] > threshold:
            close(cluster)
            # the landing sample opens the next fixation
            cluster = [index]
        else:
            cluster.append(index)
    close(cluster)

    return EventSet.from_fixations(fixations, intrinsics)


@dataclasses.dataclass(frozen=True)
class KSample:
    fixation_index: int
    k: float
    timestamp: int


@dataclasses.dataclass(frozen=True)
class WindowStats:
    mu_d: float
    sigma_d: float
    mu_a: float
    sigma_a: float
    n: int


@dataclasses.dataclass(frozen=True)
class KSeries:
    samples: t.Tuple[KSample, ...]
    window_stats: WindowStats

    def values(self) -> t.List[float]:
        return [sample.k for sample in self.samples]


def _zscores(values: np.ndarray, ddof: int) -> t.Tuple[np.ndarray, float, float]:
    if np.ptp(values) == 0:
        return np.zeros_like(values), float(values[0]), 0.0
    mu = float(values.mean())
    if values.size <= ddof:
        return np.zeros_like(values), mu, 0.0
    sigma = float(values.std(ddof=ddof))
    return (values - mu) / sigma, mu, sigma


def coefficient_k(
    fixations: t.Sequence[FixationEvent],
    saccades: t.Sequence[SaccadeEvent],
    ddof: int = 0,
) -> KSeries:
    """
    Coefficient K for fixations 1..n-1 of the window.

    mu/sigma are taken over the window's n fixations and n-1 saccades,
    population sigma by default. A zero sigma zeroes its z-term.
    """
    n = len(fixations)
    if n < 2:
        raise TooFewEvents(n)
    if len(saccades) != n - 1:
        raise ValueError(f"{n} fixations need {n - 1} saccades, got {len(saccades)}")

    durations = np.array([fixation.duration_ms for fixation in fixations], dtype=np.float64)
    amplitudes = np.array([saccade.amplitude for saccade in saccades], dtype=np.float64)
    z_d, mu_d, sigma_d = _zscores(durations, ddof)
    z_a, mu_a, sigma_a = _zscores(amplitudes, ddof)
    k = z_d[:-1] - z_a

    samples = tuple(
        KSample(index + 1, float(value), fixations[index].start) for index, value in enumerate(k)
    )
    return KSeries(samples, WindowStats(mu_d, sigma_d, mu_a, sigma_a, n))


def mean_k(series: KSeries) -> float:
    if not series.samples:
        raise EmptySeries()
    return float(np.mean(series.values()))


def attention_mode(k: float) -> str:
    if k > 0:
        return "focal"
    if k < 0:
        return "ambient"
    return "neutral"
