import numpy as np
import pytest
from click.testing import CliRunner

from ellar_jva.onnx_runner import IMAGENET_MEAN, IMAGENET_STD, OnnxEmbedder, main, preprocess


class _Session:
    def __init__(self):
        self.batches = []

    def run(self, outputs, feeds):
        batch = feeds["input"]
        self.batches.append(batch.shape[0])
        # pooled features shaped N x C x 1 x 1, like a headless ResNet
        return [batch.mean(axis=(2, 3), keepdims=True)]


def _embedder(batch_size):
    embedder = OnnxEmbedder.__new__(OnnxEmbedder)
    embedder.session = _Session()
    embedder.input_name = "input"
    embedder.batch_size = batch_size
    return embedder


def test_preprocess_normalises_to_nchw():
    window = np.full((40, 30, 3), 255, dtype=np.uint8)
    tensor = preprocess(window)
    assert tensor.shape == (3, 224, 224)
    assert tensor.dtype == np.float32
    expected = (1.0 - IMAGENET_MEAN) / IMAGENET_STD
    assert tensor[:, 100, 100] == pytest.approx(expected, rel=1e-5)


def test_embed_batches_and_flattens():
    embedder = _embedder(batch_size=2)
    windows = [np.full((16, 16, 3), value, dtype=np.uint8) for value in (0, 128, 255)]
    vectors = embedder.embed(windows)
    assert embedder.session.batches == [2, 1]
    assert [v.shape for v in vectors] == [(3,)] * 3
    assert vectors[2][0] > vectors[0][0]


def test_main_needs_window_size(tmp_path, monkeypatch):
    model = tmp_path / "model.onnx"
    model.write_bytes(b"")
    monkeypatch.delenv("JVA_WINDOW", raising=False)
    result = CliRunner().invoke(main, [str(model)])
    assert result.exit_code == 2
    assert "JVA_WINDOW" in result.output
