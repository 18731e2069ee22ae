import os.path

import pytest
from ellar.testing import Test

from ellar_jva import JvaModule, JvaService
from ellar_jva.report import read_ground_truth
from ellar_jva.schemas import DetectorParams, build_setup, load_config_file, load_scenario

from .utils import DUMB_DIRS, gaze_csv, tiny_scenario, worked_stream

module_config = {
    "modules": [JvaModule.register_setup()],
    "config_module": {
        "JVA_CONFIG": {
            "session_id": "async",
            "output": {"path": os.path.join(DUMB_DIRS, "fixtures")},
        }
    },
}


@pytest.mark.asyncio
async def test_jva_synthesize_and_analyze_async(clear_dir, tmp_path):
    tm = Test.create_test_module(**module_config)
    jva_service: JvaService = tm.get(JvaService)

    truth = await jva_service.synthesize_async(load_scenario(tiny_scenario()), tmp_path)
    assert truth == read_ground_truth(tmp_path / "ground_truth.csv")

    setup = build_setup(
        dict(
            load_config_file(tmp_path / "session.json"),
            session_id="async",
            output=jva_service.setup.output.model_dump(),
        )
    )
    report = await jva_service.analyze_async(setup)
    assert report.total_pairs == len(truth.timestamps)
    assert os.path.exists(os.path.join(DUMB_DIRS, "fixtures", "async.json"))


@pytest.mark.asyncio
async def test_jva_metrics_async():
    jva_service = JvaService()
    results = await jva_service.metrics_async(
        gaze_csv(worked_stream("B")), DetectorParams(velocity_threshold=2.0), participant="B"
    )
    assert results[0].participant == "B"
    assert len(results[0].events.fixations) == 3
    assert results[0].k_series.values() == pytest.approx([-0.2247, -1.0], abs=1e-4)
