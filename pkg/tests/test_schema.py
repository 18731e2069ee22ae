import json

import pytest
from pydantic import ValidationError

from ellar_jva import DetectorParams, JvaSetup
from ellar_jva.exceptions import ConfigError
from ellar_jva.schemas import build_setup, load_config_file


@pytest.fixture
def session_dir(tmp_path):
    for name in ("frames_A", "frames_B"):
        (tmp_path / name).mkdir()
    for name in ("gaze_A.csv", "gaze_B.csv", "a.jvae", "b.jvae"):
        (tmp_path / name).write_bytes(b"")
    return tmp_path


def _session(directory, **extra):
    session = {
        "frames_a": str(directory / "frames_A"),
        "frames_b": str(directory / "frames_B"),
        "gaze_a": str(directory / "gaze_A.csv"),
        "gaze_b": str(directory / "gaze_B.csv"),
    }
    session.update(extra)
    return session


def test_jva_setup_defaults():
    schema = JvaSetup()
    assert schema.session is None
    assert schema.window == 400
    assert schema.threshold == 0.7
    assert schema.epochs == 4
    assert schema.backend == "builtin"
    assert schema.k_scope == "epoch"
    assert schema.on_error == "skip"
    assert schema.detector == DetectorParams()
    assert schema.output.path is None


def test_jva_setup_full_setup_works(session_dir):
    schema = JvaSetup(
        session_id="dyad-7",
        activity_label="puzzle",
        session=_session(
            session_dir,
            embeddings_a=str(session_dir / "a.jvae"),
            embeddings_b=str(session_dir / "b.jvae"),
        ),
        window=256,
        threshold=0.8,
        epochs=6,
        backend="import",
        k_scope="jva",
        detector={"velocity_threshold": 40.0, "ddof": 1},
        output={"path": str(session_dir / "out"), "format": "csv"},
    )
    assert schema.session.frames_a == session_dir / "frames_A"
    assert schema.detector.ddof == 1
    assert schema.output.format == "csv"

    echo = schema.echo()
    assert echo["session"]["gaze_a"] == str(session_dir / "gaze_A.csv")
    assert echo["detector"]["velocity_threshold"] == 40.0
    assert JvaSetup(**echo) == schema


@pytest.mark.parametrize(
    "data",
    [
        {"window": 8},
        {"threshold": 1.2},
        {"threshold": -1.0},
        {"epochs": 0},
        {"workers": 0},
        {"alignment_tolerance_ns": -1},
        {"smoothing_window": 0},
        {"backend": "clip"},
        {"backend": "external"},
        {"backend": "import"},
        {"k_scope": "session"},
        {"detector": {"ddof": 2}},
        {"detector": {"velocity_threshold": 0}},
        {"detector": {"min_fixation_ms": -5}},
        {"unknown": True},
    ],
)
def test_jva_setup_rejects(data):
    with pytest.raises(ValidationError):
        JvaSetup(**data)


def test_build_setup_reports_missing_paths(session_dir):
    missing = str(session_dir / "nope.csv")
    with pytest.raises(ConfigError) as ex:
        build_setup({"session": _session(session_dir, gaze_b=missing)})
    assert ex.value.path == missing
    assert "session.gaze_b" in ex.value.reason

    assert ex.value.reason == "session.gaze_b: path does not exist"
    assert str(ex.value).count(missing) == 1

    with pytest.raises(ConfigError) as ex:
        build_setup({"threshold": 1.5})
    assert ex.value.reason.startswith("threshold:")
    assert ex.value.path is None


def test_load_config_file_resolves_relative_paths(session_dir):
    config = session_dir / "run.json"
    config.write_text(
        json.dumps(
            {
                "session_id": "s",
                "session": {
                    "frames_a": "frames_A",
                    "frames_b": "frames_B",
                    "gaze_a": "gaze_A.csv",
                    "gaze_b": str(session_dir / "gaze_B.csv"),
                },
                "output": {"path": "reports"},
            }
        )
    )
    data = load_config_file(config)
    assert data["session"]["frames_a"] == str(session_dir.resolve() / "frames_A")
    assert data["session"]["gaze_b"] == str(session_dir / "gaze_B.csv")
    assert data["output"]["path"] == str(session_dir.resolve() / "reports")
    assert build_setup(data).session.gaze_a.exists()


def test_relative_paths_are_echoed_absolute(session_dir, monkeypatch):
    monkeypatch.chdir(session_dir)
    schema = build_setup(
        {
            "session": {
                "frames_a": "frames_A",
                "frames_b": "frames_B",
                "gaze_a": "gaze_A.csv",
                "gaze_b": "gaze_B.csv",
            },
            "output": {"path": "reports"},
        }
    )
    echo = schema.echo()
    assert echo["session"]["frames_a"] == str(session_dir / "frames_A")
    assert echo["output"]["path"] == str(session_dir / "reports")

    monkeypatch.chdir(session_dir / "frames_B")
    assert JvaSetup(**echo) == schema


def test_load_config_file_reuses_report_echo(session_dir):
    echo = JvaSetup(session_id="again", session=_session(session_dir), epochs=2).echo()
    report = session_dir / "again.json"
    report.write_text(json.dumps({"session_id": "again", "config_echo": echo}))
    assert build_setup(load_config_file(report)) == JvaSetup(**echo)


def test_load_config_file_errors(session_dir):
    with pytest.raises(ConfigError) as ex:
        load_config_file(session_dir / "absent.json")
    assert ex.value.path == str(session_dir / "absent.json")

    broken = session_dir / "broken.json"
    broken.write_text("{")
    with pytest.raises(ConfigError):
        load_config_file(broken)

    listing = session_dir / "list.json"
    listing.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config_file(listing)
