import pytest
from ellar.reflect import reflect

from .utils import clear


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run full-size acceptance scenarios"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def reflect_context():
    with reflect.context():
        yield


@pytest.fixture
def clear_dir():
    yield
    clear("fixtures")
