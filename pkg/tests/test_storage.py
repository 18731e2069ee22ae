import os.path

import pytest

from ellar_jva import ArtifactStore, StoredArtifact
from ellar_jva.exceptions import ObjectDoesNotExistError

from .utils import DUMB_DIRS


def test_artifact_store_save_and_get_operation(clear_dir):
    store = ArtifactStore(os.path.join(DUMB_DIRS, "fixtures"))
    stored = store.save("report.json", b"report saving worked")

    assert isinstance(stored, StoredArtifact)
    assert stored.name == "report.json"
    assert stored.size == len(b"report saving worked")
    assert stored.path == os.path.realpath(os.path.join(DUMB_DIRS, "fixtures", "report.json"))

    again = store.get("report.json")
    assert again.read() == b"report saving worked"
    assert store.exists("report.json")


def test_artifact_store_nested_names(clear_dir):
    store = ArtifactStore(os.path.join(DUMB_DIRS, "fixtures"))
    store.save("frames_A/0000000000000001.ppm", b"P6")
    store.save("frames_A/0000000000000000.ppm", b"P6")
    store.save("gaze_A.csv", b"timestamp_ns\n")

    assert os.path.isfile(os.path.join(DUMB_DIRS, "fixtures", "frames_A", "0000000000000000.ppm"))
    assert store.names() == [
        "frames_A/0000000000000000.ppm",
        "frames_A/0000000000000001.ppm",
        "gaze_A.csv",
    ]


def test_artifact_store_overwrites(clear_dir):
    store = ArtifactStore(os.path.join(DUMB_DIRS, "fixtures"))
    store.save("a.csv", b"first")
    store.save_exclusive("a.csv", lambda: b"second")
    assert store.get("a.csv").read() == b"second"
    assert "a.csv" in store.names()
    assert not [name for name in os.listdir(store.path) if name.endswith(".lock")]
    assert not store.lock_path("a.csv").startswith(str(store.path))


def test_artifact_store_delete_operation(clear_dir):
    store = ArtifactStore(os.path.join(DUMB_DIRS, "fixtures"))
    store.save("delete.txt", b"gone soon")
    assert store.delete("delete.txt")
    assert not store.exists("delete.txt")

    with pytest.raises(ObjectDoesNotExistError):
        store.get("delete.txt")


def test_artifact_store_reopens_existing_container(clear_dir):
    path = os.path.realpath(os.path.join(DUMB_DIRS, "fixtures"))
    ArtifactStore(path).save("keep.txt", b"kept")
    assert ArtifactStore(path).get("keep.txt").read() == b"kept"
    assert repr(ArtifactStore(path)) == f"ArtifactStore({path!r})"
