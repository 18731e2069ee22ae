import json

import numpy as np
import pytest

from ellar_jva.analytics import Diagnostics, SessionReport, detect_jva
from ellar_jva.embedding import SimilarityTimeline, TimelineEntry
from ellar_jva.exceptions import InvalidSpec, SpanMismatch
from ellar_jva.gaze import parse_gaze_stream, project_stream
from ellar_jva.report import GroundTruth, read_ground_truth
from ellar_jva.schemas import load_scenario
from ellar_jva.synth import (
    SyntheticFrames,
    frame_count,
    frame_timestamps,
    generate,
    ground_truth,
    scenario_intrinsics,
    score_against_truth,
    simulate_gaze,
)
from ellar_jva.tube import load_frame

from .utils import (
    MS,
    SHARED_VIEWS,
    SPLIT_VIEWS,
    half_shared_script,
    scenario,
    split_targets_script,
    tiny_scenario,
)


def _tree(directory):
    return {
        str(path.relative_to(directory)): path.read_bytes()
        for path in sorted(directory.rglob("*"))
        if path.is_file() and not path.name.startswith(".")
    }


@pytest.mark.parametrize(
    "change",
    [
        {"schema_version": 2},
        {"duration_s": 0},
        {"frame_size": 400},
        {"viewpoints": {"A": {"offset": [150, 0]}}},
        {"viewpoints": {"B": {"scale": 3.0}}},
        {"script": [{"start_s": 0.0, "end_s": 0.5, "participant": "A", "target": "red"}]},
        {
            "script": [
                {"start_s": 0.0, "end_s": 0.2, "participant": p, "target": "red"}
                for p in ("A", "B")
            ]
            + [
                {"start_s": 0.3, "end_s": 0.5, "participant": p, "target": "red"}
                for p in ("A", "B")
            ]
        },
        {
            "script": [
                {"start_s": 0.0, "end_s": 0.5, "participant": p, "target": "green"}
                for p in ("A", "B")
            ]
        },
        {
            "script": [
                {
                    "start_s": 0.0,
                    "end_s": 0.5,
                    "participant": p,
                    "target": "red",
                    "independent_seed": 1,
                }
                for p in ("A", "B")
            ]
        },
        {"noise": -1.0},
        {"unknown_field": 1},
    ],
)
def test_invalid_scenarios_are_rejected(change):
    document = tiny_scenario()
    document.update(change)
    with pytest.raises(InvalidSpec):
        load_scenario(document)


def test_objects_must_stay_on_the_canvas():
    document = tiny_scenario()
    document["objects"][0]["trajectory"].append({"time_s": 1.0, "x": 190, "y": 96})
    with pytest.raises(InvalidSpec) as ex:
        load_scenario(document)
    assert "leaves the canvas" in ex.value.reason


def test_load_scenario_from_text_and_file(tmp_path):
    document = tiny_scenario()
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(document))
    assert load_scenario(path) == load_scenario(json.dumps(document))
    assert load_scenario(str(path)).frame_size == 96
    with pytest.raises(InvalidSpec):
        load_scenario(tmp_path / "missing.json")
    with pytest.raises(InvalidSpec):
        load_scenario("{not json")


def test_frame_clock():
    spec = load_scenario(tiny_scenario(viewpoints={"B": {"offset": [20, 48], "clock_offset_ns": 5}}))
    assert frame_count(spec) == 15
    assert frame_timestamps(spec, "A")[:3] == [0, 33_333_333, 66_666_667]
    assert frame_timestamps(spec, "B")[0] == 5


def test_simulate_gaze_is_deterministic():
    spec = scenario(duration_s=2.0)
    first, second = simulate_gaze(spec), simulate_gaze(spec)
    assert first == second
    assert len(first["A"]) == len(first["B"]) == 60
    other = simulate_gaze(scenario(duration_s=2.0, seed=8))
    assert other["A"] != first["A"]


def test_shared_target_means_shared_canvas_points():
    streams = simulate_gaze(scenario(duration_s=2.0, noise=0.0, views=SHARED_VIEWS))
    for a, b in zip(streams["A"], streams["B"]):
        # B's view sits 50 px further right on the canvas
        assert a.pixel.px - b.pixel.px == pytest.approx(50.0)
        assert a.pixel.py == pytest.approx(b.pixel.py)


def test_gaze_stays_in_frame():
    streams = simulate_gaze(scenario(duration_s=2.0, noise=40.0))
    for samples in streams.values():
        for sample in samples:
            assert 0.0 <= sample.pixel.px < 800 and 0.0 <= sample.pixel.py < 800


def test_ground_truth_follows_the_script():
    assert ground_truth(scenario()).expected_jva_fraction == 1.0
    split = scenario(script=split_targets_script(4.0), views=SPLIT_VIEWS)
    assert ground_truth(split).expected_jva_fraction == 0.0

    truth = ground_truth(scenario(script=half_shared_script(4.0, seed=1)))
    assert truth.expected_jva_fraction == 0.5
    assert truth.shared_flags[:60] == (True,) * 60
    assert truth.timestamps[1] == 33_333_333


def test_synthetic_frames_render_the_canvas():
    frames = SyntheticFrames(scenario(), "A")
    assert len(frames.timestamps()) == 120
    image = frames.load(frames.timestamps()[0]).pixels
    # A's view starts at canvas (100, 200): red square centred at view (400, 400)
    centre = image[400, 400].astype(int)
    assert centre[0] > centre[2]
    blue = image[400, 795].astype(int)
    assert blue[2] > blue[0]
    assert image[10, 10].tolist() == [18, 18, 18]
    assert np.array_equal(frames.render(3), frames.render(3))


def test_generate_writes_a_deterministic_session(tmp_path):
    spec = load_scenario(tiny_scenario())
    truth = generate(spec, tmp_path / "one")
    generate(spec, tmp_path / "two", workers=3)

    one, two = _tree(tmp_path / "one"), _tree(tmp_path / "two")
    assert one == two
    assert sum(name.startswith("frames_A/") for name in one) == 15
    assert "frames_B/0000000000000000.ppm" in one
    for name in ("gaze_A.csv", "gaze_B.csv", "intrinsics.txt", "ground_truth.csv"):
        assert name in one

    assert read_ground_truth(tmp_path / "one" / "ground_truth.csv") == truth
    session = json.loads(one["session.json"])
    assert session["session"]["gaze_a"] == "gaze_A.csv"
    assert session["window"] == 96
    assert load_scenario(tmp_path / "one" / "scenario.json") == spec

    frame = load_frame(tmp_path / "one" / "frames_A" / "0000000000000000.ppm")
    assert np.array_equal(frame.pixels, SyntheticFrames(spec, "A").render(0))


def test_pixel_gaze_files_parse_exactly(tmp_path):
    spec = load_scenario(tiny_scenario())
    generate(spec, tmp_path)
    for participant in ("A", "B"):
        text = (tmp_path / f"gaze_{participant}.csv").read_text()
        assert "np." not in text
        samples = parse_gaze_stream(tmp_path / f"gaze_{participant}.csv")
        expected = simulate_gaze(spec)[participant]
        assert [s.timestamp for s in samples] == [s.timestamp for s in expected]
        assert [s.pixel.as_tuple() for s in samples] == [
            tuple(float(v) for v in s.pixel.as_tuple()) for s in expected
        ]


def test_direction_gaze_files_project_back(tmp_path):
    spec = load_scenario(tiny_scenario(gaze_format="direction"))
    generate(spec, tmp_path)
    session = json.loads((tmp_path / "session.json").read_text())
    assert session["session"]["intrinsics"] == "intrinsics.txt"

    samples = parse_gaze_stream(tmp_path / "gaze_A.csv")
    projected = project_stream(samples, scenario_intrinsics(spec))
    for ours, expected in zip(projected, simulate_gaze(spec)["A"]):
        assert ours.pixel.px == pytest.approx(expected.pixel.px, abs=1e-6)
        assert ours.pixel.py == pytest.approx(expected.pixel.py, abs=1e-6)


def _scored_report(scores, step=10):
    timeline = SimilarityTimeline(
        [TimelineEntry(i * step, i * step, s) for i, s in enumerate(scores)], "test"
    )
    return SessionReport.build(
        "s", "", timeline, detect_jva(timeline), [], Diagnostics(), {}
    )


def test_score_against_truth():
    truth = GroundTruth((0, 10, 20, 30, 40), (True, True, False, False, True))
    score = score_against_truth(_scored_report([0.9, 0.1, 0.9, 0.1]), truth)
    assert (score.precision, score.recall, score.f1) == (0.5, 0.5, 0.5)
    assert score.scored_pairs == 4
    assert score.unscored_truth == 1
    assert score.as_dict()["precision_undefined"] is False


def test_score_with_nothing_detected_or_shared():
    truth = GroundTruth((0, 10), (False, False))
    score = score_against_truth(_scored_report([0.1, 0.2]), truth)
    assert score.precision_undefined and score.recall_undefined
    assert (score.precision, score.recall, score.f1) == (0.0, 0.0, 0.0)


def test_score_needs_truth_for_every_pair():
    truth = GroundTruth((0,), (True,))
    with pytest.raises(SpanMismatch):
        score_against_truth(_scored_report([0.9, 0.9], step=50 * MS), truth)
