import contextlib
import hashlib
import os
import tempfile
import typing as t
from pathlib import Path

import fasteners
from libcloud.storage.base import Container, Object  # noqa
from libcloud.storage.providers import get_driver
from libcloud.storage.types import Provider

from ellar_jva.exceptions import ContainerAlreadyExistsError, ObjectDoesNotExistError
from ellar_jva.utils import get_content_file_obj


class StoredArtifact:
    """A file written through an ArtifactStore."""

    __slots__ = ("name", "size", "object")

    def __init__(self, obj: Object) -> None:
        self.name = obj.name
        self.size = obj.size
        self.object = obj

    def __repr__(self) -> str:
        return f"StoredArtifact({self.name!r}, size={self.size})"

    @property
    def path(self) -> t.Optional[str]:
        """Local filesystem path when the driver is local storage."""
        try:
            return t.cast(str, self.object.get_cdn_url())
        except NotImplementedError:  # pragma: no cover
            return None

    def read(self) -> bytes:
        return b"".join(self.object.as_stream())

    def delete(self) -> bool:
        return t.cast(bool, self.object.delete())


class ArtifactStore:
    """
    Output directory backed by a libcloud local-storage container.

    `<parent>/<name>` maps to driver key `<parent>` and container `<name>`;
    object names may contain `/` to create sub-directories.
    """

    __slots__ = ("_container", "_path")

    def __init__(self, directory: t.Union[str, Path]) -> None:
        path = Path(directory).resolve()
        os.makedirs(path.parent, 0o777, exist_ok=True)

        driver = get_driver(Provider.LOCAL)(key=str(path.parent))
        with contextlib.suppress(ContainerAlreadyExistsError):
            driver.create_container(container_name=path.name)

        self._container: Container = driver.get_container(container_name=path.name)
        self._path = path

    def __repr__(self) -> str:
        return f"ArtifactStore({str(self._path)!r})"

    @property
    def path(self) -> Path:
        return self._path

    @property
    def container(self) -> Container:
        return self._container

    def save(self, name: str, content: bytes) -> StoredArtifact:
        return StoredArtifact(
            self._container.upload_object_via_stream(
                iterator=get_content_file_obj(content), object_name=name
            )
        )

    @contextlib.contextmanager
    def exclusive(self, name: str) -> t.Iterator[None]:
        """Hold the single-writer lock of object `name`."""
        with fasteners.InterProcessLock(self.lock_path(name)):
            yield

    def lock_path(self, name: str) -> str:
        # outside the output directory
        digest = hashlib.sha1(str(self._path / name).encode("utf-8")).hexdigest()
        return os.path.join(tempfile.gettempdir(), f"ellar-jva-{digest}.lock")

    def save_exclusive(self, name: str, render: t.Callable[[], bytes]) -> StoredArtifact:
        """Render and upload `name` while holding its single-writer lock."""
        with self.exclusive(name):
            return self.save(name, render())

    def get(self, name: str) -> StoredArtifact:
        return StoredArtifact(self._container.get_object(name))

    def exists(self, name: str) -> bool:
        try:
            self._container.get_object(name)
        except ObjectDoesNotExistError:
            return False
        return True

    def delete(self, name: str) -> bool:
        return self.get(name).delete()

    def names(self) -> t.List[str]:
        return sorted(obj.name for obj in self._container.list_objects())
