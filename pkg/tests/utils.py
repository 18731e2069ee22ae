import os.path
import shutil

import numpy as np
from ellar.utils.importer import get_main_directory_by_stack

from ellar_jva.gaze import GazeSample, Participant, Pixel2
from ellar_jva.schemas import load_scenario

DUMB_DIRS = get_main_directory_by_stack("__main__/dumbs/", stack_level=1)
TEST_FIXTURES_DIRS = get_main_directory_by_stack("__main__/fixtures/", stack_level=1)

MS = 1_000_000
GAZE_HEADER = "timestamp_ns,participant,dx,dy,dz,px,py\n"

RED = (220, 20, 20)
BLUE = (20, 20, 220)

# view offsets on the 1600 px canvas
SHARED_VIEWS = {"A": {"offset": [100, 200]}, "B": {"offset": [150, 200]}}
SPLIT_VIEWS = {"A": {"offset": [100, 200]}, "B": {"offset": [700, 200]}}


def clear(directory):
    try:
        shutil.rmtree(os.path.join(DUMB_DIRS, directory))
    except OSError:
        pass


def pixel_stream(points, participant="A", step_ms=10, start_ms=0):
    """Pixel samples every `step_ms` from a list of (x, y)."""
    return [
        GazeSample((start_ms + index * step_ms) * MS, Participant(participant), Pixel2(x, y))
        for index, (x, y) in enumerate(points)
    ]


def worked_stream(participant="A"):
    """
    Three fixations of 100, 200 and 300 ms joined by jumps of 3 and 6 px.

    Samples every 10 ms; the jumps land at 110 and 320 ms.
    """
    points = []
    for ts in range(0, 630, 10):
        if ts <= 100:
            points.append((100.0, 100.0))
        elif ts <= 310:
            points.append((103.0, 100.0))
        else:
            points.append((109.0, 100.0))
    return pixel_stream(points, participant)


def gaze_csv(samples):
    lines = [GAZE_HEADER]
    for sample in samples:
        px, py = sample.pixel.as_tuple()
        lines.append(f"{sample.timestamp},{sample.participant.value},,,,{float(px)!r},{float(py)!r}\n")
    return "".join(lines).encode("utf-8")


def noise_object(name, color, x, y, size=420, seed=1):
    return {
        "name": name,
        "width": size,
        "height": size,
        "color": list(color),
        "texture": "noise",
        "texture_seed": seed,
        "trajectory": [{"time_s": 0.0, "x": x, "y": y}],
    }


def scenario(
    duration_s=4.0,
    seed=7,
    script=None,
    views=None,
    noise=1.0,
    **extra,
):
    """
    Red and blue noise-textured squares 600 px apart on a 1600 px canvas.

    With SHARED_VIEWS both participants see the red square whole; with
    SPLIT_VIEWS A faces the red square and B the blue one.
    """
    objects = [
        noise_object("red", RED, 500, 600, seed=seed),
        noise_object("blue", BLUE, 1100, 600, seed=seed + 1),
    ]
    script = script or shared_script(duration_s)
    document = {
        "schema_version": 1,
        "duration_s": duration_s,
        "frame_size": 800,
        "canvas_size": 1600,
        "objects": objects,
        "script": script,
        "viewpoints": views or SHARED_VIEWS,
        "noise": noise,
        "rng_seed": seed,
    }
    document.update(extra)
    return load_scenario(document)


def shared_script(duration_s, target="red"):
    return [
        {"start_s": 0.0, "end_s": duration_s, "participant": p, "target": target}
        for p in ("A", "B")
    ]


def split_targets_script(duration_s):
    return [
        {"start_s": 0.0, "end_s": duration_s, "participant": "A", "target": "red"},
        {"start_s": 0.0, "end_s": duration_s, "participant": "B", "target": "blue"},
    ]


def half_shared_script(duration_s, seed):
    half = duration_s / 2
    script = []
    for participant, independent in (("A", seed * 2 + 1), ("B", seed * 2 + 2)):
        script.append({"start_s": 0.0, "end_s": half, "participant": participant, "target": "red"})
        script.append(
            {
                "start_s": half,
                "end_s": duration_s,
                "participant": participant,
                "independent_seed": independent,
            }
        )
    return script


def textured_window(rng, size, color):
    shade = rng.uniform(0.35, 1.0, size=(size, size, 1))
    return np.round(np.asarray(color, dtype=np.float64) * shade).astype(np.uint8)


def tiny_scenario(seed=3, duration_s=0.5, **extra):
    """A 96 px, 15-frame session small enough to write to disk quickly."""
    document = {
        "schema_version": 1,
        "duration_s": duration_s,
        "frame_size": 96,
        "canvas_size": 192,
        "objects": [
            noise_object("red", RED, 60, 96, size=56, seed=seed),
            noise_object("blue", BLUE, 140, 96, size=56, seed=seed + 1),
        ],
        "script": shared_script(duration_s),
        "viewpoints": {"A": {"offset": [10, 48]}, "B": {"offset": [20, 48]}},
        "rng_seed": seed,
    }
    document.update(extra)
    return document
