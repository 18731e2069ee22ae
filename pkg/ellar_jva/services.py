import contextlib
import dataclasses
import logging
import typing as t
from pathlib import Path

from ellar.di import injectable
from starlette.concurrency import run_in_threadpool

from ellar_jva.analytics import (
    Diagnostics,
    SessionReport,
    detect_jva,
    epoch_analysis,
)
from ellar_jva.embedding import (
    BuiltinBackend,
    EmbeddingBackend,
    EmbeddingTable,
    ExternalBackend,
    ImportBackend,
    SimilarityTimeline,
    export_embeddings,
    similarity_timeline,
)
from ellar_jva.exceptions import (
    ConfigError,
    InsufficientSamples,
    JvaError,
    StageError,
    TooFewEvents,
)
from ellar_jva.gaze import (
    CameraIntrinsics,
    Direction3,
    GazeSample,
    Participant,
    align_streams,
    load_intrinsics,
    parse_gaze_stream,
    project_stream,
)
from ellar_jva.oculomotor import (
    EventSet,
    KSeries,
    check_units,
    coefficient_k,
    detect_events,
)
from ellar_jva.report import (
    GroundTruth,
    emit_report,
    events_to_csv,
    k_trace_to_csv,
    load_report,
    read_annotations,
    read_ground_truth,
    summarize_reports,
    timeline_to_csv,
)
from ellar_jva.schemas import DetectorParams, JvaSetup, ScenarioSpec
from ellar_jva.storage import ArtifactStore, StoredArtifact
from ellar_jva.synth import TruthScore, generate, score_against_truth
from ellar_jva.tube import FrameDirectory, FrameSource, Tube, build_tube

logger = logging.getLogger(__name__)


@contextlib.contextmanager
def stage(name: str) -> t.Iterator[None]:
    """Attach the pipeline stage name to any error escaping the block."""
    try:
        yield
    except StageError:
        raise
    except (JvaError, ValueError, OSError) as ex:
        raise StageError(name, ex) from ex


@dataclasses.dataclass
class SessionInputs:
    """Everything `analyze` consumes, already loaded."""

    gaze_a: t.List[GazeSample]
    gaze_b: t.List[GazeSample]
    frames_a: FrameSource
    frames_b: FrameSource
    intrinsics: t.Optional[CameraIntrinsics] = None
    annotations: t.Optional[t.Dict[int, str]] = None
    backend_a: t.Optional[EmbeddingBackend] = None
    backend_b: t.Optional[EmbeddingBackend] = None


@dataclasses.dataclass
class PipelineResult:
    report: SessionReport
    timeline: SimilarityTimeline
    tube_a: Tube
    tube_b: Tube
    events_a: EventSet
    events_b: EventSet


@dataclasses.dataclass
class MetricsResult:
    participant: str
    events: EventSet
    k_series: t.Optional[KSeries]
    note: t.Optional[str] = None

    def events_csv(self) -> bytes:
        return events_to_csv(self.events)

    def k_trace_csv(self) -> bytes:
        return k_trace_to_csv(self.k_series.samples if self.k_series else ())


def _participant_stream(
    samples: t.Sequence[GazeSample], participant: Participant, source: Path
) -> t.List[GazeSample]:
    own = [sample for sample in samples if sample.participant is participant]
    if samples and not own:
        logger.warning(
            "%s has no rows for participant %s, using all %d rows",
            source,
            participant.value,
            len(samples),
        )
        return [dataclasses.replace(sample, participant=participant) for sample in samples]
    return own


def _behind_camera(samples: t.Sequence[GazeSample]) -> int:
    return sum(
        1
        for sample in samples
        if isinstance(sample.payload, Direction3) and sample.payload.dz <= 0
    )


def _events(
    gaze: t.Sequence[GazeSample],
    params: DetectorParams,
    intrinsics: t.Optional[CameraIntrinsics],
    participant: str,
) -> EventSet:
    try:
        return detect_events(gaze, params, intrinsics)
    except InsufficientSamples as ex:
        logger.warning("participant %s: %s, no oculomotor events", participant, ex)
        return EventSet.from_fixations([], intrinsics)


@injectable
class JvaService:
    """
    Runs the JVA pipeline stages for an Ellar application or the command line.
    """

    __slots__ = ("_setup",)

    def __init__(self, setup: t.Optional[JvaSetup] = None) -> None:
        self._setup = setup

    @property
    def setup(self) -> t.Optional[JvaSetup]:
        return self._setup

    def _resolve(self, setup: t.Optional[JvaSetup]) -> JvaSetup:
        setup = setup or self._setup
        if setup is None:
            raise ConfigError("no run configuration given")
        return setup

    def load_inputs(self, setup: t.Optional[JvaSetup] = None) -> SessionInputs:
        """Read gaze, intrinsics, annotations and frame directories named by `setup`."""
        setup = self._resolve(setup)
        paths = setup.session
        if paths is None:
            raise ConfigError("session paths are required to analyze a recording")

        with stage("gaze-io"):
            intrinsics = load_intrinsics(paths.intrinsics) if paths.intrinsics else None
            streams = []
            for participant, path in ((Participant.A, paths.gaze_a), (Participant.B, paths.gaze_b)):
                samples = parse_gaze_stream(path, setup.gaze_format, participant)
                streams.append(_participant_stream(samples, participant, path))

        with stage("jva-analytics"):
            annotations = read_annotations(paths.annotations) if paths.annotations else None

        with stage("embed-sim"):
            backend_a = backend_b = None
            if setup.backend == "import":
                assert paths.embeddings_a is not None and paths.embeddings_b is not None
                backend_a = ImportBackend(EmbeddingTable.read(paths.embeddings_a))
                backend_b = ImportBackend(EmbeddingTable.read(paths.embeddings_b))

        with stage("tube"):
            frames_a = FrameDirectory(paths.frames_a)
            frames_b = FrameDirectory(paths.frames_b)

        return SessionInputs(
            gaze_a=streams[0],
            gaze_b=streams[1],
            frames_a=frames_a,
            frames_b=frames_b,
            intrinsics=intrinsics,
            annotations=annotations,
            backend_a=backend_a,
            backend_b=backend_b,
        )

    def backend(self, setup: t.Optional[JvaSetup] = None) -> EmbeddingBackend:
        setup = self._resolve(setup)
        if setup.backend == "external":
            return ExternalBackend(setup.external_command, setup.external_timeout_s)
        if setup.backend == "import":
            raise ConfigError("the import backend is built from the session embedding tables")
        return BuiltinBackend()

    def run(self, inputs: SessionInputs, setup: t.Optional[JvaSetup] = None) -> PipelineResult:
        """
        gaze-io -> tube -> embed-sim -> jva-analytics, with oculomotor K per epoch.
        """
        setup = self._resolve(setup)

        with stage("gaze-io"):
            behind = _behind_camera(inputs.gaze_a) + _behind_camera(inputs.gaze_b)
            gaze_a = project_stream(inputs.gaze_a, inputs.intrinsics)
            gaze_b = project_stream(inputs.gaze_b, inputs.intrinsics)
            pairs = align_streams(gaze_a, gaze_b, setup.alignment_tolerance_ns)
        logger.info("%d aligned pairs from %d/%d gaze samples", len(pairs), len(gaze_a), len(gaze_b))

        with stage("tube"):
            tolerance = setup.alignment_tolerance_ns
            tube_a = build_tube(
                inputs.frames_a, gaze_a, setup.window, tolerance, setup.workers, setup.full_frame
            )
            tube_b = build_tube(
                inputs.frames_b, gaze_b, setup.window, tolerance, setup.workers, setup.full_frame
            )

        with stage("embed-sim"):
            backend_a = inputs.backend_a or self.backend(setup)
            backend_b = inputs.backend_b or backend_a
            timeline = similarity_timeline(
                tube_a,
                tube_b,
                pairs,
                backend_a,
                backend_b,
                on_error=setup.on_error,
                workers=setup.workers,
            )

        with stage("oculomotor"):
            events_a = _events(gaze_a, setup.detector, inputs.intrinsics, "A")
            events_b = _events(gaze_b, setup.detector, inputs.intrinsics, "B")
            check_units(events_a, events_b)

        with stage("jva-analytics"):
            segments = detect_jva(timeline, setup.threshold, setup.smoothing_window)
            stamps = [sample.timestamp for sample in (*gaze_a, *gaze_b)]
            span = (min(stamps), max(stamps)) if stamps else (0, 0)
            epochs = epoch_analysis(
                span,
                setup.epochs,
                events_a,
                events_b,
                scope=setup.k_scope,
                segments=segments,
                annotations=inputs.annotations,
                ddof=setup.detector.ddof,
            )
            skip_reasons: t.Dict[str, int] = {}
            for participant, tube in (("A", tube_a), ("B", tube_b)):
                for reason, count in tube.skip_counts().items():
                    skip_reasons[f"{participant}.{reason}"] = count
            for skip in timeline.skipped:
                key = f"pair.{skip.reason}"
                skip_reasons[key] = skip_reasons.get(key, 0) + 1
            diagnostics = Diagnostics(
                skipped_frames=len(tube_a.skipped) + len(tube_b.skipped),
                unmatched_frames=len(gaze_a) + len(gaze_b) - 2 * len(pairs),
                skipped_pairs=len(timeline.skipped),
                aligned_pairs=len(pairs),
                behind_camera=behind,
                skip_reasons=skip_reasons,
                backend_id=timeline.backend_id,
            )
            report = SessionReport.build(
                setup.session_id,
                setup.activity_label,
                timeline,
                segments,
                epochs,
                diagnostics,
                setup.echo(),
            )
        logger.info(
            "session %s: %d of %d pairs JVA (%.2f%%)",
            report.session_id,
            report.jva_pairs,
            report.total_pairs,
            report.jva_percentage,
        )
        return PipelineResult(report, timeline, tube_a, tube_b, events_a, events_b)

    def analyze(self, setup: t.Optional[JvaSetup] = None) -> SessionReport:
        """Run the configured session end to end and write the report if an output is set."""
        setup = self._resolve(setup)
        report = self.run(self.load_inputs(setup), setup).report
        if setup.output.path is not None:
            self.save_report(report, setup)
        return report

    def save_report(
        self, report: SessionReport, setup: t.Optional[JvaSetup] = None
    ) -> StoredArtifact:
        setup = self._resolve(setup)
        store = self.store(setup)
        name = f"{report.session_id}.{setup.output.format}"
        with stage("report"):
            stored = store.save_exclusive(name, lambda: emit_report(report, setup.output.format))
        logger.info("report written to %s", stored.path)
        return stored

    def store(self, setup: t.Optional[JvaSetup] = None) -> ArtifactStore:
        """The configured output directory."""
        setup = self._resolve(setup)
        if setup.output.path is None:
            raise ConfigError("no output path configured")
        return ArtifactStore(setup.output.path)

    def save_timeline(self, result: PipelineResult, directory: t.Union[str, Path]) -> StoredArtifact:
        store = ArtifactStore(directory)
        return store.save(
            f"{result.report.session_id}.timeline.csv",
            timeline_to_csv(result.report.timeline, result.report.flags),
        )

    def metrics(
        self,
        source: t.Union[str, Path, bytes],
        params: t.Optional[DetectorParams] = None,
        intrinsics: t.Optional[CameraIntrinsics] = None,
        format: str = "csv",
        participant: t.Optional[str] = None,
    ) -> t.List[MetricsResult]:
        """Standalone oculomotor analysis: events and K over the whole stream, per participant."""
        params = params or DetectorParams()
        with stage("gaze-io"):
            samples = parse_gaze_stream(source, format, participant)
            samples = project_stream(samples, intrinsics)

        present = sorted({sample.participant.value for sample in samples})
        wanted = [participant] if participant else present or ["A"]
        results = []
        with stage("oculomotor"):
            for who in wanted:
                stream = [sample for sample in samples if sample.participant.value == who]
                events = detect_events(stream, params, intrinsics)
                try:
                    series: t.Optional[KSeries] = coefficient_k(
                        events.fixations, events.saccades, ddof=params.ddof
                    )
                    note = None
                except TooFewEvents as ex:
                    series, note = None, str(ex)
                    logger.warning("participant %s: %s", who, ex)
                results.append(MetricsResult(who, events, series, note))
        return results

    def save_metrics(
        self, results: t.Sequence[MetricsResult], directory: t.Union[str, Path]
    ) -> t.List[StoredArtifact]:
        store = ArtifactStore(directory)
        stored = []
        for result in results:
            stored.append(store.save(f"events_{result.participant}.csv", result.events_csv()))
            stored.append(store.save(f"k_trace_{result.participant}.csv", result.k_trace_csv()))
        return stored

    def synthesize(
        self, spec: ScenarioSpec, out_dir: t.Union[str, Path], workers: int = 1
    ) -> GroundTruth:
        with stage("synth"):
            return generate(spec, out_dir, workers)

    def score(
        self,
        report: t.Union[SessionReport, str, Path, bytes],
        truth: t.Union[GroundTruth, str, Path, bytes],
    ) -> TruthScore:
        with stage("score"):
            if not isinstance(report, SessionReport):
                report = load_report(report)
            if not isinstance(truth, GroundTruth):
                truth = read_ground_truth(truth)
            return score_against_truth(report, truth)

    def embed(
        self,
        participant: str,
        out_path: t.Union[str, Path],
        setup: t.Optional[JvaSetup] = None,
    ) -> EmbeddingTable:
        """Embed one participant's tube and write it as a JVAE table at `out_path`."""
        setup = self._resolve(setup)
        inputs = self.load_inputs(setup)
        gaze, frames = (
            (inputs.gaze_a, inputs.frames_a)
            if participant == "A"
            else (inputs.gaze_b, inputs.frames_b)
        )
        with stage("tube"):
            projected = project_stream(gaze, inputs.intrinsics)
            tube = build_tube(
                frames,
                projected,
                setup.window,
                setup.alignment_tolerance_ns,
                setup.workers,
                setup.full_frame,
            )
        with stage("embed-sim"):
            table = export_embeddings(tube.slices, self.backend(setup), setup.workers)
            out_path = Path(out_path)
            ArtifactStore(out_path.parent).save(out_path.name, table.to_bytes())
        logger.info("%d %d-dim vectors written to %s", len(table), table.dim, out_path)
        return table

    def summarize(self, reports: t.Sequence[t.Union[str, Path, bytes]]) -> bytes:
        with stage("report"):
            return summarize_reports(load_report(source) for source in reports)

    async def analyze_async(self, setup: t.Optional[JvaSetup] = None) -> SessionReport:
        """Async Analyze Operation"""
        return await run_in_threadpool(self.analyze, setup)

    async def metrics_async(
        self,
        source: t.Union[str, Path, bytes],
        params: t.Optional[DetectorParams] = None,
        intrinsics: t.Optional[CameraIntrinsics] = None,
        format: str = "csv",
        participant: t.Optional[str] = None,
    ) -> t.List[MetricsResult]:
        """Async Metrics Operation"""
        return await run_in_threadpool(
            self.metrics, source, params, intrinsics, format=format, participant=participant
        )

    async def synthesize_async(
        self, spec: ScenarioSpec, out_dir: t.Union[str, Path], workers: int = 1
    ) -> GroundTruth:
        """Async Synthesize Operation"""
        return await run_in_threadpool(self.synthesize, spec, out_dir, workers)
