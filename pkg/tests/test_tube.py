import io

import numpy as np
import pytest
from PIL import Image

from ellar_jva.exceptions import (
    DecodeError,
    GazeOutOfFrame,
    MissingTimestampInName,
    NoFramesFound,
    WindowTooLarge,
)
from ellar_jva.gaze import GazeSample, Participant, Pixel2, Validity
from ellar_jva.tube import (
    Frame,
    FrameDirectory,
    InMemoryFrames,
    build_tube,
    extract_roi,
    load_frame,
    timestamp_from_name,
)

from .utils import MS


def _frame(timestamp=0, width=64, height=48):
    pixels = np.arange(height * width * 3, dtype=np.uint32).reshape(height, width, 3) % 251
    return Frame(timestamp, pixels.astype(np.uint8))


def _png(pixels):
    buffer = io.BytesIO()
    Image.fromarray(pixels).save(buffer, format="PNG")
    return buffer.getvalue()


def test_frame_rejects_non_rgb8():
    with pytest.raises(ValueError):
        Frame(0, np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ValueError):
        Frame(0, np.zeros((4, 4, 3), dtype=np.float32))
    frame = Frame.from_buffer(3, 2, 1, bytes(range(6)))
    assert (frame.width, frame.height) == (2, 1)
    assert frame.pixels[0, 1].tolist() == [3, 4, 5]


def test_timestamp_from_name():
    assert timestamp_from_name("0000000000001234.png") == 1234
    with pytest.raises(MissingTimestampInName):
        timestamp_from_name("frame_12.png")


def test_load_frame_png_and_ppm(tmp_path):
    frame = _frame()
    png = tmp_path / "0000000000000042.png"
    png.write_bytes(_png(frame.pixels))
    loaded = load_frame(png)
    assert loaded.timestamp == 42
    assert np.array_equal(loaded.pixels, frame.pixels)

    ppm = io.BytesIO()
    Image.fromarray(frame.pixels).save(ppm, format="PPM")
    assert np.array_equal(load_frame(ppm.getvalue(), timestamp=7).pixels, frame.pixels)


def test_load_frame_expands_grayscale():
    gray = np.full((5, 6), 77, dtype=np.uint8)
    loaded = load_frame(_png(gray), timestamp=1)
    assert loaded.pixels.shape == (5, 6, 3)
    assert int(loaded.pixels.max()) == 77


def test_load_frame_errors(tmp_path):
    with pytest.raises(DecodeError):
        load_frame(b"not an image", timestamp=1)
    with pytest.raises(MissingTimestampInName):
        load_frame(_png(_frame().pixels))
    bad = tmp_path / "0000000000000001.png"
    bad.write_bytes(b"\x89PNG broken")
    with pytest.raises(DecodeError):
        load_frame(bad)


def test_extract_roi_is_centred_away_from_borders():
    frame = _frame()
    item = extract_roi(frame, Pixel2(32.0, 24.0), window=16)
    assert item.origin == (24, 16)
    assert item.window.shape == (16, 16, 3)
    assert np.array_equal(item.window, frame.pixels[16:32, 24:40])
    assert item.contains_gaze()


def test_extract_roi_shifts_at_borders():
    frame = _frame()
    assert extract_roi(frame, (0.0, 0.0), window=16).origin == (0, 0)
    assert extract_roi(frame, (63.9, 47.9), window=16).origin == (48, 32)
    # half-pixel origins round up
    assert extract_roi(frame, (20.0, 20.0), window=17).origin == (12, 12)


def test_extract_roi_errors():
    frame = _frame()
    with pytest.raises(WindowTooLarge):
        extract_roi(frame, (10.0, 10.0), window=49)
    with pytest.raises(GazeOutOfFrame):
        extract_roi(frame, (64.0, 10.0), window=16)
    missing = GazeSample(5, Participant.A, Pixel2(10, 10), Validity.MISSING)
    with pytest.raises(GazeOutOfFrame):
        extract_roi(frame, missing, window=16)


def test_roi_containment_over_random_gaze():
    frame = Frame(0, np.zeros((1408, 1408, 3), dtype=np.uint8))
    rng = np.random.default_rng(11)
    edge = np.nextafter(1408.0, 0.0)
    points = [(x, y) for x in (0.0, edge) for y in (0.0, edge)]
    points += [(x, 0.0) for x in rng.uniform(0, 1408, 50)] + [(0.0, y) for y in rng.uniform(0, 1408, 50)]
    points += [(x, edge) for x in rng.uniform(0, 1408, 50)] + [(edge, y) for y in rng.uniform(0, 1408, 50)]
    points += [tuple(p) for p in rng.uniform(0, 1408, size=(10_000 - len(points), 2))]

    for point in points:
        item = extract_roi(frame, point, window=400)
        x0, y0 = item.origin
        assert 0 <= x0 <= 1008 and 0 <= y0 <= 1008
        assert item.window.shape == (400, 400, 3)
        assert item.contains_gaze()


def test_frame_directory_lists_by_timestamp(tmp_path):
    for ts in (30, 10, 20):
        (tmp_path / f"{ts:016d}.png").write_bytes(_png(_frame(ts).pixels))
    (tmp_path / "notes.txt").write_text("ignored")
    frames = FrameDirectory(tmp_path)
    assert list(frames.timestamps()) == [10, 20, 30]
    assert frames.load(20).timestamp == 20


def test_build_tube_matches_nearest_frame_within_tolerance():
    frames = InMemoryFrames([_frame(0), _frame(33 * MS), _frame(66 * MS)])
    gaze = [
        GazeSample(1 * MS, Participant.A, Pixel2(32, 24)),
        GazeSample(30 * MS, Participant.A, Pixel2(0, 0)),
        GazeSample(50 * MS, Participant.A, Pixel2(5, 5)),
        GazeSample(67 * MS, Participant.A, Pixel2(70, 5)),
        GazeSample(68 * MS, Participant.A, Pixel2(5, 5), Validity.MISSING),
    ]
    tube = build_tube(frames, gaze, window=16, tolerance=5 * MS)

    assert [item.timestamp for item in tube] == [1 * MS, 30 * MS]
    assert [item.frame_timestamp for item in tube] == [0, 33 * MS]
    assert tube.skip_counts() == {"missing": 1, "no_frame": 1, "out_of_frame": 1}
    assert len(tube) + len(tube.skipped) == len(gaze)


def test_build_tube_is_independent_of_workers():
    frames = InMemoryFrames([_frame(ts * MS) for ts in range(0, 200, 10)])
    rng = np.random.default_rng(3)
    gaze = [
        GazeSample(ts * MS, Participant.B, Pixel2(*rng.uniform(0, 48, size=2)))
        for ts in range(0, 200, 10)
    ]
    serial = build_tube(frames, gaze, window=16)
    parallel = build_tube(frames, gaze, window=16, workers=4)
    assert [s.origin for s in serial] == [s.origin for s in parallel]
    assert all(np.array_equal(a.window, b.window) for a, b in zip(serial, parallel))


def test_full_frame_window():
    frames = InMemoryFrames([_frame(0)])
    tube = build_tube(frames, [GazeSample(0, Participant.A, Pixel2(5, 5))], full_frame=True)
    assert tube.slices[0].window.shape == (48, 48, 3)


def test_build_tube_needs_frames():
    with pytest.raises(NoFramesFound):
        build_tube(InMemoryFrames([]), [])
