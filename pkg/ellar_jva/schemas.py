import json
import typing as t
from pathlib import Path

import ellar.common  # noqa: F401  -- loads ellar.pydantic without its circular-import error
from ellar.pydantic import field_validator, model_validator
from pydantic import BaseModel, ConfigDict, ValidationError

from ellar_jva.constants import (
    DEFAULT_ALIGNMENT_TOLERANCE_NS,
    DEFAULT_EPOCHS,
    DEFAULT_JVA_THRESHOLD,
    DEFAULT_MAX_GAP_MS,
    DEFAULT_MIN_FIXATION_MS,
    DEFAULT_ROI_WINDOW,
    MIN_ROI_WINDOW,
    SCENARIO_SCHEMA_VERSION,
)
from ellar_jva.exceptions import ConfigError, InvalidSpec

_MISSING_PATH = "path does not exist"


class DetectorParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # None picks 30 deg/s with intrinsics, 50 px per sample interval without
    velocity_threshold: t.Optional[float] = None
    min_fixation_ms: float = DEFAULT_MIN_FIXATION_MS
    max_gap_ms: float = DEFAULT_MAX_GAP_MS
    # 0 = population sigma in K, 1 = sample sigma
    ddof: int = 0

    @field_validator("velocity_threshold")
    def pre_velocity_validate(cls, value: t.Optional[float]) -> t.Optional[float]:
        if value is not None and value <= 0:
            raise ValueError("velocity_threshold must be positive")
        return value

    @field_validator("min_fixation_ms", "max_gap_ms")
    def pre_duration_validate(cls, value: float) -> float:
        if value < 0:
            raise ValueError("durations must not be negative")
        return value

    @field_validator("ddof")
    def pre_ddof_validate(cls, value: int) -> int:
        if value not in (0, 1):
            raise ValueError("ddof must be 0 or 1")
        return value


def _existing(value: t.Optional[Path]) -> t.Optional[Path]:
    if value is None:
        return None
    # absolute, so an echoed config still points here from any directory
    value = Path(value).absolute()
    if not value.exists():
        raise ValueError(f"{_MISSING_PATH}: {value}")
    return value


class SessionPaths(BaseModel):
    model_config = ConfigDict(extra="forbid")

    frames_a: Path
    frames_b: Path
    gaze_a: Path
    gaze_b: Path
    intrinsics: t.Optional[Path] = None
    embeddings_a: t.Optional[Path] = None
    embeddings_b: t.Optional[Path] = None
    annotations: t.Optional[Path] = None
    truth: t.Optional[Path] = None

    @field_validator("*")
    def pre_path_validate(cls, value: t.Optional[Path]) -> t.Optional[Path]:
        return _existing(value)


class OutputSetup(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # directory receiving `<session_id>.<format>`; None writes nothing
    path: t.Optional[Path] = None
    format: t.Literal["json", "csv"] = "json"

    @field_validator("path")
    def pre_output_path_validate(cls, value: t.Optional[Path]) -> t.Optional[Path]:
        return None if value is None else Path(value).absolute()


class JvaSetup(BaseModel):
    """Everything one analysis run depends on; echoed verbatim in the report."""

    model_config = ConfigDict(extra="forbid")

    session_id: str = "session"
    activity_label: str = ""
    # optional only for in-memory runs, `analyze` requires it
    session: t.Optional[SessionPaths] = None
    window: int = DEFAULT_ROI_WINDOW
    full_frame: bool = False
    threshold: float = DEFAULT_JVA_THRESHOLD
    epochs: int = DEFAULT_EPOCHS
    backend: t.Literal["builtin", "import", "external"] = "builtin"
    external_command: t.List[str] = []
    external_timeout_s: t.Optional[float] = None
    k_scope: t.Literal["jva", "epoch"] = "epoch"
    detector: DetectorParams = DetectorParams()
    alignment_tolerance_ns: int = DEFAULT_ALIGNMENT_TOLERANCE_NS
    gaze_format: t.Literal["csv", "mps"] = "csv"
    on_error: t.Literal["skip", "abort"] = "skip"
    smoothing_window: t.Optional[int] = None
    workers: int = 1
    output: OutputSetup = OutputSetup()

    @field_validator("window")
    def pre_window_validate(cls, value: int) -> int:
        if value < MIN_ROI_WINDOW:
            raise ValueError(f"window must be >= {MIN_ROI_WINDOW}")
        return value

    @field_validator("threshold")
    def pre_threshold_validate(cls, value: float) -> float:
        if not (-1.0 < value <= 1.0):
            raise ValueError("threshold must be in (-1, 1]")
        return value

    @field_validator("epochs", "workers")
    def pre_count_validate(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("alignment_tolerance_ns")
    def pre_tolerance_validate(cls, value: int) -> int:
        if value < 0:
            raise ValueError("alignment tolerance must not be negative")
        return value

    @field_validator("smoothing_window")
    def pre_smoothing_validate(cls, value: t.Optional[int]) -> t.Optional[int]:
        if value is not None and value < 1:
            raise ValueError("smoothing_window must be >= 1 pair")
        return value

    @model_validator(mode="after")
    def post_backend_validate(self) -> "JvaSetup":
        if self.backend == "import" and (
            self.session is None
            or self.session.embeddings_a is None
            or self.session.embeddings_b is None
        ):
            raise ValueError("the import backend needs embeddings_a and embeddings_b")
        if self.backend == "external" and not self.external_command:
            raise ValueError("the external backend needs external_command")
        return self

    def echo(self) -> t.Dict[str, t.Any]:
        return self.model_dump(mode="json")


def build_setup(data: t.Mapping[str, t.Any]) -> JvaSetup:
    """Validate a RunConfig mapping, turning validation failures into ConfigError."""
    try:
        return JvaSetup(**dict(data))
    except ValidationError as ex:
        error = ex.errors()[0]
        location = ".".join(str(part) for part in error["loc"])
        message = str(error["msg"]).replace("Value error, ", "")
        path = None
        if message.startswith(_MISSING_PATH):
            message, path = message.split(": ", 1)
        raise ConfigError(f"{location}: {message}" if location else message, path) from ex


class Viewpoint(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # top-left corner of the participant's view on the scene canvas
    offset: t.Tuple[int, int] = (0, 0)
    scale: float = 1.0
    clock_offset_ns: int = 0

    @field_validator("scale")
    def pre_scale_validate(cls, value: float) -> float:
        if not (0.5 <= value <= 2.0):
            raise ValueError("viewpoint scale must be in [0.5, 2]")
        return value

    @field_validator("clock_offset_ns")
    def pre_clock_validate(cls, value: int) -> int:
        if value < 0:
            raise ValueError("clock_offset_ns must not be negative")
        return value


class Waypoint(BaseModel):
    model_config = ConfigDict(extra="forbid")

    time_s: float
    x: float
    y: float


class SceneObject(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    shape: t.Literal["rect", "disc"] = "rect"
    width: int
    height: int
    color: t.Tuple[int, int, int]
    texture: t.Literal["solid", "noise"] = "solid"
    texture_seed: int = 0
    # object centre on the canvas over time, held constant outside the waypoints
    trajectory: t.List[Waypoint]

    @model_validator(mode="after")
    def post_object_validate(self) -> "SceneObject":
        if self.width < 1 or self.height < 1:
            raise ValueError(f"object {self.name!r} must have a positive size")
        if any(not 0 <= channel <= 255 for channel in self.color):
            raise ValueError(f"object {self.name!r} color channels must be in [0, 255]")
        if not self.trajectory:
            raise ValueError(f"object {self.name!r} needs at least one waypoint")
        times = [point.time_s for point in self.trajectory]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"object {self.name!r} waypoint times must increase")
        return self


class ScriptEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    start_s: float
    end_s: float
    participant: t.Literal["A", "B"]
    target: t.Optional[str] = None
    independent_seed: t.Optional[int] = None

    @model_validator(mode="after")
    def post_entry_validate(self) -> "ScriptEntry":
        if self.end_s <= self.start_s:
            raise ValueError("script entry must end after it starts")
        if (self.target is None) == (self.independent_seed is None):
            raise ValueError("script entry needs exactly one of target or independent_seed")
        return self


class ScenarioSpec(BaseModel):
    """Synthetic dyadic session: a shared canvas, two views and a gaze script."""

    model_config = ConfigDict(extra="forbid")

    schema_version: int
    duration_s: float
    frame_rate_hz: float = 30.0
    frame_size: int = 800
    canvas_size: int = 1200
    background: int = 18
    objects: t.List[SceneObject]
    script: t.List[ScriptEntry]
    viewpoints: t.Dict[t.Literal["A", "B"], Viewpoint] = {}
    # gaze jitter sigma in pixels
    noise: float = 0.0
    rng_seed: int = 0
    dwell_ms: t.Tuple[float, float] = (250.0, 700.0)
    gaze_format: t.Literal["pixel", "direction"] = "pixel"

    @field_validator("schema_version")
    def pre_version_validate(cls, value: int) -> int:
        if value != SCENARIO_SCHEMA_VERSION:
            raise ValueError(
                f"unsupported schema_version {value}, expected {SCENARIO_SCHEMA_VERSION}"
            )
        return value

    @model_validator(mode="after")
    def post_scenario_validate(self) -> "ScenarioSpec":
        if self.duration_s <= 0 or self.frame_rate_hz <= 0:
            raise ValueError("duration_s and frame_rate_hz must be positive")
        if self.frame_size < MIN_ROI_WINDOW or self.canvas_size < self.frame_size:
            raise ValueError("frame_size must be >= 16 and fit the canvas")
        if self.noise < 0:
            raise ValueError("noise must not be negative")
        if not 0 < self.dwell_ms[0] <= self.dwell_ms[1]:
            raise ValueError("dwell_ms must be an increasing positive range")

        names = [obj.name for obj in self.objects]
        if len(set(names)) != len(names):
            raise ValueError("object names must be unique")
        for obj in self.objects:
            for point in obj.trajectory:
                if not (
                    obj.width / 2 <= point.x <= self.canvas_size - obj.width / 2
                    and obj.height / 2 <= point.y <= self.canvas_size - obj.height / 2
                ):
                    raise ValueError(
                        f"object {obj.name!r} leaves the canvas at {point.time_s}s"
                    )

        for participant in ("A", "B"):
            view = self.viewpoint(participant)
            extent = self.frame_size * view.scale
            if min(view.offset) < 0 or max(view.offset) + extent > self.canvas_size:
                raise ValueError(f"view of participant {participant} leaves the canvas")
            entries = sorted(
                (entry for entry in self.script if entry.participant == participant),
                key=lambda entry: entry.start_s,
            )
            if not entries:
                raise ValueError(f"script has no entries for participant {participant}")
            edges = [entries[0].start_s]
            for before, after in zip(entries, entries[1:]):
                if after.start_s != before.end_s:
                    raise ValueError(
                        f"script of participant {participant} has a gap or overlap at "
                        f"{before.end_s}s"
                    )
            edges.append(entries[-1].end_s)
            if edges != [0.0, self.duration_s]:
                raise ValueError(
                    f"script of participant {participant} must cover [0, {self.duration_s}]"
                )
            for entry in entries:
                if entry.target is not None and entry.target not in names:
                    raise ValueError(f"script targets unknown object {entry.target!r}")
        return self

    def viewpoint(self, participant: str) -> Viewpoint:
        return self.viewpoints.get(participant, Viewpoint())  # type:ignore[call-overload]


def load_scenario(source: t.Union[str, Path, t.Mapping[str, t.Any]]) -> ScenarioSpec:
    """Read a scenario from a JSON file, JSON text or a mapping."""
    try:
        if isinstance(source, t.Mapping):
            data = dict(source)
        else:
            text = str(source)
            if isinstance(source, Path) or not text.lstrip().startswith("{"):
                text = Path(source).read_text(encoding="utf-8")
            data = json.loads(text)
        if not isinstance(data, dict):
            raise InvalidSpec("scenario must be a JSON object")
        return ScenarioSpec(**data)
    except ValidationError as ex:
        error = ex.errors()[0]
        location = ".".join(str(part) for part in error["loc"])
        message = str(error["msg"]).replace("Value error, ", "")
        raise InvalidSpec(f"{location}: {message}" if location else message) from ex
    except (OSError, ValueError) as ex:
        raise InvalidSpec(str(ex)) from ex


def load_config_file(path: t.Union[str, Path]) -> t.Dict[str, t.Any]:
    """
    Read a JSON run config, or a report whose `config_echo` is reused.

    Relative session and output paths are taken relative to the file.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as ex:
        raise ConfigError("cannot read config file", str(path)) from ex
    except ValueError as ex:
        raise ConfigError(f"config file is not valid JSON ({ex})", str(path)) from ex
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object", str(path))
    if isinstance(data.get("config_echo"), dict):
        data = data["config_echo"]

    base = path.resolve().parent
    session = data.get("session")
    if isinstance(session, dict):
        data["session"] = {
            key: _relative_to(base, value) if isinstance(value, str) else value
            for key, value in session.items()
        }
    output = data.get("output")
    if isinstance(output, dict) and isinstance(output.get("path"), str):
        data["output"] = dict(output, path=_relative_to(base, output["path"]))
    return data


def _relative_to(base: Path, value: str) -> str:
    candidate = Path(value)
    return str(candidate if candidate.is_absolute() else base / candidate)
