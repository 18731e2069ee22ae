import os.path

import pytest
from ellar.common import Module
from ellar.testing import Test

from ellar_jva import JvaModule, JvaService

from .utils import DUMB_DIRS


def test_module_setup(clear_dir):
    tm = Test.create_test_module(
        modules=[
            JvaModule.setup(
                session_id="dyad-1",
                threshold=0.75,
                output={"path": os.path.join(DUMB_DIRS, "fixtures")},
            )
        ]
    )
    jva_service: JvaService = tm.get(JvaService)
    assert jva_service.setup.session_id == "dyad-1"
    assert jva_service.setup.threshold == 0.75
    assert jva_service.store().path.name == "fixtures"


def test_module_register_setup():
    tm = Test.create_test_module(
        modules=[JvaModule.register_setup()],
        config_module={
            "JVA_CONFIG": {
                "session_id": "dyad-2",
                "epochs": 6,
                "detector": {"min_fixation_ms": 80},
            }
        },
    )
    jva_service: JvaService = tm.get(JvaService)
    assert jva_service.setup.epochs == 6
    assert jva_service.setup.detector.min_fixation_ms == 80.0
    assert jva_service.setup.window == 400


def test_module_register_fails_config_key_absents():
    tm = Test.create_test_module(
        modules=[JvaModule.register_setup()],
        config_module={"JVA_CONFIG_InVALID_KEY": {}},
    )

    with pytest.raises(
        RuntimeError, match="Could not find `JVA_CONFIG` in application config."
    ):
        tm.create_application()


def test_subclassed_module_keeps_setup(reflect_context):
    @Module()
    class JvaModuleModified(JvaModule):
        pass

    tm = Test.create_test_module(
        modules=[JvaModuleModified.register_setup()],
        config_module={"JVA_CONFIG": {"session_id": "dyad-3", "k_scope": "jva"}},
    )
    jva_service: JvaService = tm.get(JvaService)
    assert jva_service.setup.k_scope == "jva"
