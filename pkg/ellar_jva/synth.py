"""
Deterministic synthetic dyadic sessions with ground-truth JVA labels.

Both participants look at one flat-shaded scene canvas through their own
translated (and optionally scaled) view. Gaze follows a dwell-and-jump scan:
a participant scripted onto an object scans it with the object's scan
pattern, so two participants on the same object fixate the same canvas
points at the same times; independent entries scan their own view with a
pattern of their own.
"""

import dataclasses
import io
import json
import logging
import math
import typing as t
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image

from ellar_jva.analytics import SessionReport
from ellar_jva.constants import FRAME_NAME_DIGITS, GAZE_CSV_COLUMNS, NS_PER_S
from ellar_jva.exceptions import SpanMismatch
from ellar_jva.gaze import CameraIntrinsics, GazeSample, Participant, Pixel2
from ellar_jva.report import GroundTruth, write_ground_truth
from ellar_jva.schemas import ScenarioSpec, SceneObject, ScriptEntry, Viewpoint
from ellar_jva.storage import ArtifactStore
from ellar_jva.tube import Frame
from ellar_jva.utils import derive_seed, round_half_up

logger = logging.getLogger(__name__)

# scan points keep this far from the object edge, as a fraction of its size
_SCAN_MARGIN = 0.15
_VIEW_MARGIN = 0.1
# jumps shorter than this would not register as saccades at 50 px/sample
_MIN_JUMP_PX = 80.0
_JUMP_DRAWS = 16


def frame_count(spec: ScenarioSpec) -> int:
    return int(math.floor(spec.duration_s * spec.frame_rate_hz + 1e-9))


def frame_time_s(spec: ScenarioSpec, index: int) -> float:
    return index / spec.frame_rate_hz


def frame_timestamps(spec: ScenarioSpec, participant: str) -> t.List[int]:
    offset = spec.viewpoint(participant).clock_offset_ns
    return [
        int(round(index * NS_PER_S / spec.frame_rate_hz)) + offset
        for index in range(frame_count(spec))
    ]


def scenario_intrinsics(spec: ScenarioSpec) -> CameraIntrinsics:
    size = spec.frame_size
    return CameraIntrinsics(
        fx=size * 0.4375,
        fy=size * 0.4375,
        cx=(size - 1) / 2,
        cy=(size - 1) / 2,
        width=size,
        height=size,
    )


def object_center(obj: SceneObject, time_s: float) -> t.Tuple[float, float]:
    """Piecewise-linear position along the waypoints, held at both ends."""
    times = [point.time_s for point in obj.trajectory]
    x = float(np.interp(time_s, times, [point.x for point in obj.trajectory]))
    y = float(np.interp(time_s, times, [point.y for point in obj.trajectory]))
    return x, y


@dataclasses.dataclass(frozen=True)
class _Scan:
    starts: np.ndarray
    points: np.ndarray

    def at(self, time_s: float) -> np.ndarray:
        index = int(np.searchsorted(self.starts, time_s, side="right")) - 1
        return self.points[max(index, 0)]


def _scan(
    seed: int,
    duration_s: float,
    dwell_ms: t.Tuple[float, float],
    size: t.Tuple[float, float],
    margin: float,
) -> _Scan:
    rng = np.random.default_rng(seed)
    scale = np.asarray(size, dtype=np.float64)

    def draw() -> np.ndarray:
        return rng.uniform(margin, 1.0 - margin, size=2)

    starts = [0.0]
    points = [draw()]
    while starts[-1] < duration_s:
        starts.append(starts[-1] + rng.uniform(*dwell_ms) / 1000.0)
        best, best_jump = points[-1], -1.0
        for _ in range(_JUMP_DRAWS):
            candidate = draw()
            jump = float(np.hypot(*((candidate - points[-1]) * scale)))
            if jump > best_jump:
                best, best_jump = candidate, jump
            if jump >= _MIN_JUMP_PX:
                break
        points.append(best)
    return _Scan(np.asarray(starts), np.asarray(points))


def _entry_at(entries: t.Sequence[ScriptEntry], time_s: float) -> ScriptEntry:
    for entry in entries:
        if entry.start_s <= time_s < entry.end_s:
            return entry
    return entries[-1]


class _Scenario:
    """Scan patterns and script lookups shared by gaze and truth generation."""

    def __init__(self, spec: ScenarioSpec) -> None:
        self.spec = spec
        self.objects = {obj.name: obj for obj in spec.objects}
        self.entries = {
            participant: sorted(
                (entry for entry in spec.script if entry.participant == participant),
                key=lambda entry: entry.start_s,
            )
            for participant in ("A", "B")
        }
        self._scans: t.Dict[t.Tuple[t.Any, ...], _Scan] = {}

    def object_scan(self, name: str) -> _Scan:
        key = ("object", name)
        if key not in self._scans:
            obj = self.objects[name]
            self._scans[key] = _scan(
                derive_seed(self.spec.rng_seed, "scan", name),
                self.spec.duration_s,
                self.spec.dwell_ms,
                (obj.width, obj.height),
                _SCAN_MARGIN,
            )
        return self._scans[key]

    def independent_scan(self, seed: int, participant: str) -> _Scan:
        key = ("independent", seed, participant)
        if key not in self._scans:
            size = float(self.spec.frame_size)
            self._scans[key] = _scan(
                derive_seed(self.spec.rng_seed, "independent", seed, participant),
                self.spec.duration_s,
                self.spec.dwell_ms,
                (size, size),
                _VIEW_MARGIN,
            )
        return self._scans[key]

    def gaze_point(self, participant: str, time_s: float) -> t.Tuple[float, float]:
        """Noise-free gaze in the participant's view pixels."""
        entry = _entry_at(self.entries[participant], time_s)
        view = self.spec.viewpoint(participant)
        size = self.spec.frame_size
        if entry.target is None:
            u, v = self.independent_scan(t.cast(int, entry.independent_seed), participant).at(
                time_s
            )
            return u * size, v * size
        obj = self.objects[entry.target]
        u, v = self.object_scan(entry.target).at(time_s)
        cx, cy = object_center(obj, time_s)
        canvas_x = cx + (u - 0.5) * obj.width
        canvas_y = cy + (v - 0.5) * obj.height
        return (canvas_x - view.offset[0]) / view.scale, (canvas_y - view.offset[1]) / view.scale

    def shared(self, time_s: float) -> bool:
        target_a = _entry_at(self.entries["A"], time_s).target
        target_b = _entry_at(self.entries["B"], time_s).target
        return target_a is not None and target_a == target_b


def simulate_gaze(spec: ScenarioSpec) -> t.Dict[str, t.List[GazeSample]]:
    """Pixel gaze streams of both participants, one sample per frame."""
    scenario = _Scenario(spec)
    limit = spec.frame_size - 1e-6
    streams: t.Dict[str, t.List[GazeSample]] = {}
    for participant in ("A", "B"):
        timestamps = frame_timestamps(spec, participant)
        jitter = np.zeros((len(timestamps), 2))
        if spec.noise > 0:
            rng = np.random.default_rng(derive_seed(spec.rng_seed, "jitter", participant))
            jitter = rng.normal(0.0, spec.noise, size=(len(timestamps), 2))
        samples = []
        for index, timestamp in enumerate(timestamps):
            x, y = scenario.gaze_point(participant, frame_time_s(spec, index))
            px = min(max(x + float(jitter[index, 0]), 0.0), limit)
            py = min(max(y + float(jitter[index, 1]), 0.0), limit)
            samples.append(GazeSample(timestamp, Participant(participant), Pixel2(px, py)))
        streams[participant] = samples
    return streams


def ground_truth(spec: ScenarioSpec) -> GroundTruth:
    """Per-frame shared flags derived from the script alone, on A's clock."""
    scenario = _Scenario(spec)
    timestamps = frame_timestamps(spec, "A")
    flags = tuple(scenario.shared(frame_time_s(spec, index)) for index in range(len(timestamps)))
    return GroundTruth(tuple(timestamps), flags)


def _texture(obj: SceneObject) -> np.ndarray:
    color = np.asarray(obj.color, dtype=np.float64)
    if obj.texture == "solid":
        return np.broadcast_to(color.astype(np.uint8), (obj.height, obj.width, 3))
    rng = np.random.default_rng(derive_seed(obj.texture_seed, "texture", obj.name))
    shade = rng.uniform(0.35, 1.0, size=(obj.height, obj.width, 1))
    return np.round(color * shade).astype(np.uint8)


class SyntheticFrames:
    """Frame source rendering one participant's view on demand."""

    __slots__ = ("_spec", "_participant", "_index", "_textures", "_cols", "_rows")

    def __init__(self, spec: ScenarioSpec, participant: str) -> None:
        self._spec = spec
        self._participant = participant
        self._index = {
            timestamp: index for index, timestamp in enumerate(frame_timestamps(spec, participant))
        }
        self._textures = {obj.name: _texture(obj) for obj in spec.objects}
        view: Viewpoint = spec.viewpoint(participant)
        pixels = (np.arange(spec.frame_size) + 0.5) * view.scale
        last = spec.canvas_size - 1
        self._cols = np.minimum(np.floor(view.offset[0] + pixels).astype(np.int64), last)
        self._rows = np.minimum(np.floor(view.offset[1] + pixels).astype(np.int64), last)

    def __repr__(self) -> str:
        return f"SyntheticFrames(participant={self._participant!r})"

    def timestamps(self) -> t.Sequence[int]:
        return list(self._index)

    def load(self, timestamp: int) -> Frame:
        return Frame(timestamp, self.render(self._index[timestamp]))

    def render(self, index: int) -> np.ndarray:
        spec = self._spec
        time_s = frame_time_s(spec, index)
        image = np.full((spec.frame_size, spec.frame_size, 3), spec.background, dtype=np.uint8)
        for obj in spec.objects:
            cx, cy = object_center(obj, time_s)
            x0 = round_half_up(cx - obj.width / 2)
            y0 = round_half_up(cy - obj.height / 2)
            local_x = self._cols - x0
            local_y = self._rows - y0
            in_cols = (local_x >= 0) & (local_x < obj.width)
            in_rows = (local_y >= 0) & (local_y < obj.height)
            if not in_cols.any() or not in_rows.any():
                continue
            mask = in_rows[:, None] & in_cols[None, :]
            if obj.shape == "disc":
                dx = (local_x + 0.5 - obj.width / 2) / (obj.width / 2)
                dy = (local_y + 0.5 - obj.height / 2) / (obj.height / 2)
                mask &= dy[:, None] ** 2 + dx[None, :] ** 2 <= 1.0
            texture = self._textures[obj.name]
            patch = texture[
                np.clip(local_y, 0, obj.height - 1)[:, None],
                np.clip(local_x, 0, obj.width - 1)[None, :],
            ]
            image[mask] = patch[mask]
        return image


def encode_ppm(pixels: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(pixels).save(buffer, format="PPM")
    return buffer.getvalue()


def _gaze_csv(
    samples: t.Sequence[GazeSample], intrinsics: t.Optional[CameraIntrinsics]
) -> bytes:
    rows = []
    for sample in samples:
        px, py = sample.pixel.as_tuple()
        row = {"timestamp_ns": str(sample.timestamp), "participant": sample.participant.value}
        if intrinsics is not None:
            dx, dy, dz = intrinsics.back_project(px, py)
            row.update(dx=repr(float(dx)), dy=repr(float(dy)), dz=repr(float(dz)), px="", py="")
        else:
            row.update(dx="", dy="", dz="", px=repr(float(px)), py=repr(float(py)))
        rows.append(row)
    frame = pd.DataFrame(rows, columns=list(GAZE_CSV_COLUMNS), dtype=object)
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue().encode("utf-8")


def _session_document(spec: ScenarioSpec) -> t.Dict[str, t.Any]:
    session: t.Dict[str, t.Any] = {
        "frames_a": "frames_A",
        "frames_b": "frames_B",
        "gaze_a": "gaze_A.csv",
        "gaze_b": "gaze_B.csv",
        "truth": "ground_truth.csv",
    }
    if spec.gaze_format == "direction":
        session["intrinsics"] = "intrinsics.txt"
    return {
        "session_id": f"synthetic-{spec.rng_seed}",
        "activity_label": "synthetic",
        "session": session,
        "window": min(400, spec.frame_size),
    }


def generate(spec: ScenarioSpec, out_dir: t.Union[str, Path], workers: int = 1) -> GroundTruth:
    """
    Write a complete synthetic session under `out_dir`.

    Layout: `frames_A/`, `frames_B/` (PPM, named by zero-padded ns),
    `gaze_A.csv`, `gaze_B.csv`, `intrinsics.txt`, `ground_truth.csv`,
    `scenario.json` and `session.json`, a run config whose paths are relative
    to `out_dir`.
    """
    store = ArtifactStore(out_dir)
    intrinsics = scenario_intrinsics(spec)
    streams = simulate_gaze(spec)

    for participant in ("A", "B"):
        frames = SyntheticFrames(spec, participant)
        timestamps = list(frames.timestamps())

        def encode(index: int) -> bytes:
            return encode_ppm(frames.render(index))

        # rendering may run in parallel, writes stay in timestamp order
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                encoded = list(pool.map(encode, range(len(timestamps))))
        else:
            encoded = [encode(index) for index in range(len(timestamps))]
        for timestamp, content in zip(timestamps, encoded):
            store.save(f"frames_{participant}/{timestamp:0{FRAME_NAME_DIGITS}d}.ppm", content)

        store.save(
            f"gaze_{participant}.csv",
            _gaze_csv(
                streams[participant], intrinsics if spec.gaze_format == "direction" else None
            ),
        )

    truth = ground_truth(spec)
    store.save("intrinsics.txt", intrinsics.to_text().encode("utf-8"))
    store.save("ground_truth.csv", write_ground_truth(truth))
    store.save("scenario.json", (spec.model_dump_json(indent=2) + "\n").encode("utf-8"))
    store.save(
        "session.json",
        (json.dumps(_session_document(spec), indent=2) + "\n").encode("utf-8"),
    )
    logger.info(
        "synthetic session written to %s: %d frames per participant, shared fraction %.4f",
        store.path,
        len(truth.timestamps),
        truth.expected_jva_fraction,
    )
    return truth


@dataclasses.dataclass(frozen=True)
class TruthScore:
    precision: float
    recall: float
    f1: float
    precision_undefined: bool = False
    recall_undefined: bool = False
    scored_pairs: int = 0
    unscored_truth: int = 0

    def as_dict(self) -> t.Dict[str, t.Any]:
        return dataclasses.asdict(self)


def score_against_truth(report: SessionReport, truth: GroundTruth) -> TruthScore:
    """
    Per-pair JVA detection scored as binary classification of shared_flag.

    Pairs are matched to truth rows by A's timestamp. An undefined precision
    or recall is reported as 0 and flagged.
    """
    flags_by_ts = truth.as_mapping()
    tp = fp = fn = 0
    for entry, detected in zip(report.timeline, report.flags):
        if entry.ts_a not in flags_by_ts:
            raise SpanMismatch(f"pair at {entry.ts_a} ns has no ground-truth row")
        shared = flags_by_ts[entry.ts_a]
        if detected and shared:
            tp += 1
        elif detected:
            fp += 1
        elif shared:
            fn += 1

    precision_undefined = tp + fp == 0
    recall_undefined = tp + fn == 0
    precision = 0.0 if precision_undefined else tp / (tp + fp)
    recall = 0.0 if recall_undefined else tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return TruthScore(
        precision=precision,
        recall=recall,
        f1=f1,
        precision_undefined=precision_undefined,
        recall_undefined=recall_undefined,
        scored_pairs=len(report.timeline),
        unscored_truth=len(flags_by_ts) - len(report.timeline),
    )
