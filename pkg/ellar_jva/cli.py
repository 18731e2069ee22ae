"""
Command line: `ellar-jva analyze | synth | metrics | score | embed | summarize`.

Diagnostics go to stderr. Failures print one JSON error record
`{"error", "stage", "message"}` on stderr and exit with 2 for configuration
or scenario errors and 1 for pipeline stage errors.
"""

import functools
import json
import logging
import shlex
import sys
import typing as t
from pathlib import Path

import click

from ellar_jva import __version__
from ellar_jva.exceptions import ConfigError, InvalidSpec, JvaError, StageError
from ellar_jva.gaze import load_intrinsics
from ellar_jva.report import emit_report
from ellar_jva.schemas import (
    DetectorParams,
    JvaSetup,
    build_setup,
    load_config_file,
    load_scenario,
)
from ellar_jva.services import JvaService
from ellar_jva.storage import ArtifactStore
from ellar_jva.utils import format_real

logger = logging.getLogger("ellar_jva")

_HANDLER_NAME = "ellar-jva-cli"
_LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def _configure_logging(verbose: int, log_file: t.Optional[str]) -> None:
    for handler in list(logger.handlers):
        if handler.get_name() == _HANDLER_NAME:
            logger.removeHandler(handler)
            handler.close()
    handler: logging.Handler = (
        logging.FileHandler(log_file, encoding="utf-8")
        if log_file
        else logging.StreamHandler(sys.stderr)
    )
    handler.set_name(_HANDLER_NAME)
    handler.setFormatter(logging.Formatter(_LOG_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(
        logging.DEBUG if verbose > 1 else logging.INFO if verbose == 1 else logging.WARNING
    )


def _error_record(error: str, stage: t.Optional[str], message: str) -> None:
    click.echo(
        json.dumps({"error": error, "stage": stage, "message": message}), err=True
    )


def handle_errors(func: t.Callable[..., t.Any]) -> t.Callable[..., t.Any]:
    """Turn pipeline exceptions into an error record and an exit status."""

    @functools.wraps(func)
    def wrapper(*args: t.Any, **kwargs: t.Any) -> t.Any:
        try:
            return func(*args, **kwargs)
        except (ConfigError, InvalidSpec) as ex:
            _error_record(type(ex).__name__, None, str(ex))
            sys.exit(2)
        except StageError as ex:
            cause = ex.cause
            if isinstance(cause, (ConfigError, InvalidSpec)):
                _error_record(type(cause).__name__, ex.stage, str(cause))
                sys.exit(2)
            _error_record(type(cause).__name__, ex.stage, str(cause))
            sys.exit(1)
        except (JvaError, ValueError, OSError) as ex:
            _error_record(type(ex).__name__, None, str(ex))
            sys.exit(1)

    return wrapper


@click.group()
@click.version_option(__version__, prog_name="ellar-jva")
@click.option("-v", "--verbose", count=True, help="-v for info, -vv for debug diagnostics.")
@click.option("--log-file", type=click.Path(dir_okay=False), help="Write diagnostics to a file.")
def cli(verbose: int, log_file: t.Optional[str]) -> None:
    """Joint visual attention analysis for dyadic egocentric recordings."""
    _configure_logging(verbose, log_file)


_PATH = click.Path(path_type=str)

_SESSION_FLAGS = {
    "frames_a": "frames_a",
    "frames_b": "frames_b",
    "gaze_a": "gaze_a",
    "gaze_b": "gaze_b",
    "intrinsics": "intrinsics",
    "embeddings_a": "embeddings_a",
    "embeddings_b": "embeddings_b",
    "annotations": "annotations",
    "truth": "truth",
}
_DETECTOR_FLAGS = {
    "velocity_threshold": "velocity_threshold",
    "min_fixation_ms": "min_fixation_ms",
    "max_gap_ms": "max_gap_ms",
    "ddof": "ddof",
}
_SETUP_FLAGS = {
    "session_id": "session_id",
    "activity": "activity_label",
    "roi": "window",
    "full_frame": "full_frame",
    "threshold": "threshold",
    "epochs": "epochs",
    "backend": "backend",
    "external_timeout": "external_timeout_s",
    "k_scope": "k_scope",
    "tolerance_ns": "alignment_tolerance_ns",
    "gaze_format": "gaze_format",
    "on_error": "on_error",
    "smoothing": "smoothing_window",
    "workers": "workers",
}


def _detector_options(func: t.Callable[..., t.Any]) -> t.Callable[..., t.Any]:
    options = [
        click.option(
            "--velocity-threshold",
            type=float,
            help="I-VT threshold [default: 30 deg/s with intrinsics, 50 px/sample without].",
        ),
        click.option("--min-fixation-ms", type=float, help="Shortest fixation kept [default: 60]."),
        click.option("--max-gap-ms", type=float, help="Longest sample gap inside a fixation [default: 75]."),
        click.option("--ddof", type=click.IntRange(0, 1), help="0: population sigma in K, 1: sample sigma."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _setup_options(func: t.Callable[..., t.Any]) -> t.Callable[..., t.Any]:
    options = [
        click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), help="JSON run config or a previous report."),
        click.option("--frames-a", type=_PATH, help="Participant A frame directory."),
        click.option("--frames-b", type=_PATH, help="Participant B frame directory."),
        click.option("--gaze-a", type=_PATH, help="Participant A gaze stream."),
        click.option("--gaze-b", type=_PATH, help="Participant B gaze stream."),
        click.option("--intrinsics", type=_PATH, help="Scene camera intrinsics file."),
        click.option("--embeddings-a", type=_PATH, help="JVAE table for participant A."),
        click.option("--embeddings-b", type=_PATH, help="JVAE table for participant B."),
        click.option("--annotations", type=_PATH, help="CSV epoch,annotation."),
        click.option("--truth", type=_PATH, help="Ground-truth CSV of a synthetic session."),
        click.option("--session-id"),
        click.option("--activity", help="Activity label echoed in the report."),
        click.option("--roi", type=int, help="ROI window in pixels [default: 400]."),
        click.option("--full-frame/--roi-window", default=None, help="Compare whole frames instead of gaze ROIs."),
        click.option("--threshold", type=float, help="JVA similarity threshold [default: 0.7]."),
        click.option("--epochs", type=int, help="Epochs for the K analysis [default: 4]."),
        click.option("--backend", type=click.Choice(["builtin", "import", "external"])),
        click.option("--external-command", help="Model command line for the external backend."),
        click.option("--external-timeout", type=float, help="Seconds before the model process is killed."),
        click.option("--k-scope", type=click.Choice(["jva", "epoch"])),
        click.option("--tolerance-ns", type=int, help="Alignment tolerance in nanoseconds."),
        click.option("--gaze-format", type=click.Choice(["csv", "mps"])),
        click.option("--on-error", type=click.Choice(["skip", "abort"]), help="Per-pair embedding failures."),
        click.option("--smoothing", type=int, help="Moving-average window over pairs."),
        click.option("--workers", type=int, help="Parallel workers for tubes and embeddings."),
        _detector_options,
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _build_setup(options: t.Dict[str, t.Any], out: t.Optional[str], fmt: t.Optional[str]) -> JvaSetup:
    """Config file values overridden by every flag given on the command line."""
    config_file = options.pop("config_file", None)
    data: t.Dict[str, t.Any] = load_config_file(config_file) if config_file else {}

    session = dict(data.get("session") or {})
    for flag, key in _SESSION_FLAGS.items():
        if options.get(flag) is not None:
            session[key] = options[flag]
    if session:
        data["session"] = session

    detector = dict(data.get("detector") or {})
    for flag, key in _DETECTOR_FLAGS.items():
        if options.get(flag) is not None:
            detector[key] = options[flag]
    data["detector"] = detector

    for flag, key in _SETUP_FLAGS.items():
        if options.get(flag) is not None:
            data[key] = options[flag]
    if options.get("external_command"):
        data["external_command"] = shlex.split(options["external_command"])

    output = dict(data.get("output") or {})
    if out is not None:
        output["path"] = out
    if fmt is not None:
        output["format"] = fmt
    data["output"] = output
    return build_setup(data)


@cli.command()
@_setup_options
@click.option("--out", type=_PATH, help="Directory receiving <session-id>.<format>.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), help="Report format [default: json].")
@click.option("--timeline", is_flag=True, help="Also write <session-id>.timeline.csv next to the report.")
@handle_errors
def analyze(out: t.Optional[str], fmt: t.Optional[str], timeline: bool, **options: t.Any) -> None:
    """Run gaze-io, tube, embed-sim and jva-analytics on one session."""
    setup = _build_setup(options, out, fmt)
    if setup.session is None:
        raise ConfigError("frames and gaze paths are required (--config or --frames-a ...)")
    service = JvaService(setup)
    result = service.run(service.load_inputs())
    if setup.output.path is None:
        click.echo(emit_report(result.report, setup.output.format).decode("utf-8"), nl=False)
        return
    stored = service.save_report(result.report)
    if timeline:
        service.save_timeline(result, setup.output.path)
    click.echo(stored.path, err=True)


@cli.command()
@click.argument("spec_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=_PATH)
@click.option("--seed", type=int, help="Overrides the scenario rng_seed.")
@click.option("--workers", default=1, show_default=True, type=click.IntRange(min=1))
@handle_errors
def synth(spec_path: str, out_dir: str, seed: t.Optional[int], workers: int) -> None:
    """Render a synthetic dyadic session described by SPEC_PATH into OUT_DIR."""
    spec = load_scenario(Path(spec_path))
    if seed is not None:
        spec = load_scenario(dict(spec.model_dump(), rng_seed=seed))
    truth = JvaService().synthesize(spec, out_dir, workers)
    click.echo(
        json.dumps(
            {
                "out_dir": str(Path(out_dir)),
                "frames": len(truth.timestamps),
                "expected_jva_fraction": float(format_real(truth.expected_jva_fraction)),
            }
        )
    )


@cli.command()
@click.argument("gaze", type=click.Path(exists=True, dir_okay=False))
@click.option("--participant", type=click.Choice(["A", "B"]), help="Only this participant (required for mps).")
@click.option("--gaze-format", default="csv", show_default=True, type=click.Choice(["csv", "mps"]))
@click.option("--intrinsics", type=click.Path(exists=True, dir_okay=False), help="Use degrees instead of pixels.")
@_detector_options
@click.option("--out", type=_PATH, help="Directory receiving events_<P>.csv and k_trace_<P>.csv.")
@handle_errors
def metrics(
    gaze: str,
    participant: t.Optional[str],
    gaze_format: str,
    intrinsics: t.Optional[str],
    out: t.Optional[str],
    **detector: t.Any,
) -> None:
    """Fixations, saccades and coefficient K of one gaze stream, without images."""
    try:
        params = DetectorParams(**{k: v for k, v in detector.items() if v is not None})
    except ValueError as ex:
        raise ConfigError(str(ex)) from ex
    camera = load_intrinsics(intrinsics) if intrinsics else None
    service = JvaService()
    results = service.metrics(gaze, params, camera, gaze_format, participant)
    if out is not None:
        for stored in service.save_metrics(results, out):
            click.echo(stored.path, err=True)

    summary = {}
    for result in results:
        k_values = result.k_series.values() if result.k_series else []
        summary[result.participant] = {
            "fixations": len(result.events.fixations),
            "saccades": len(result.events.saccades),
            "unit": result.events.unit.value,
            "k": [float(format_real(value)) for value in k_values],
            "mean_k": float(format_real(sum(k_values) / len(k_values))) if k_values else None,
            "note": result.note,
        }
    click.echo(json.dumps(summary))


@cli.command()
@click.argument("report", type=click.Path(exists=True, dir_okay=False))
@click.argument("truth", type=click.Path(exists=True, dir_okay=False))
@handle_errors
def score(report: str, truth: str) -> None:
    """Precision, recall and F1 of a report's JVA flags against synthetic ground truth."""
    result = JvaService().score(Path(report), Path(truth))
    document = result.as_dict()
    for key in ("precision", "recall", "f1"):
        document[key] = float(format_real(document[key]))
    click.echo(json.dumps(document))


@cli.command()
@_setup_options
@click.option("--participant", required=True, type=click.Choice(["A", "B"]))
@click.option("--out", "out_file", required=True, type=_PATH, help="JVAE table to write.")
@handle_errors
def embed(participant: str, out_file: str, **options: t.Any) -> None:
    """Export one participant's tube embeddings as a JVAE table for the import backend."""
    setup = _build_setup(options, None, None)
    if setup.session is None:
        raise ConfigError("frames and gaze paths are required (--config or --frames-a ...)")
    if setup.backend == "import":
        raise ConfigError("embed computes vectors, choose the builtin or external backend")
    table = JvaService(setup).embed(participant, out_file)
    click.echo(json.dumps({"vectors": len(table), "dim": table.dim, "path": out_file}))


@cli.command()
@click.argument("reports", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_file", type=_PATH, help="CSV file to write instead of stdout.")
@handle_errors
def summarize(reports: t.Tuple[str, ...], out_file: t.Optional[str]) -> None:
    """One row per session report: pairs and JVA percentage."""
    content = JvaService().summarize([Path(report) for report in reports])
    if out_file is None:
        click.echo(content.decode("utf-8"), nl=False)
        return
    target = Path(out_file)
    ArtifactStore(target.parent).save(target.name, content)


def main() -> None:
    cli(prog_name="ellar-jva")
