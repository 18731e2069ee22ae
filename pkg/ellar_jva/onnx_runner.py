"""
Child side of the external embedding contract, backed by onnxruntime.

    ellar-jva analyze --backend external \
        --external-command "python -m ellar_jva.onnx_runner resnet50-headless.onnx"

Reads frame records from stdin (window size from JVA_WINDOW), writes one
vector record per frame to stdout. The model is expected to take a
1x3x224x224 ImageNet-normalised batch and return the pooled features, e.g. a
ResNet-50 exported without its classification layer.
"""

import logging
import os
import sys
import typing as t

import click
import numpy as np
from PIL import Image

from ellar_jva.embedding import read_frame_records, write_vector_records

logger = logging.getLogger(__name__)

INPUT_SIZE = 224
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def preprocess(window: np.ndarray, size: int = INPUT_SIZE) -> np.ndarray:
    """RGB8 HxWx3 -> float32 3xSxS, ImageNet normalised."""
    resized = Image.fromarray(np.ascontiguousarray(window)).resize(
        (size, size), Image.Resampling.BILINEAR
    )
    image = np.asarray(resized, dtype=np.float32) / 255.0
    image = (image - IMAGENET_MEAN) / IMAGENET_STD
    return np.transpose(image, (2, 0, 1))


class OnnxEmbedder:
    __slots__ = ("session", "input_name", "batch_size")

    def __init__(self, model_path: str, batch_size: int = 16) -> None:
        import onnxruntime as ort

        providers = ["CPUExecutionProvider"]
        if "CUDAExecutionProvider" in ort.get_available_providers():
            providers.insert(0, "CUDAExecutionProvider")
        self.session = ort.InferenceSession(model_path, providers=providers)
        self.input_name = self.session.get_inputs()[0].name
        self.batch_size = batch_size

    def embed(self, windows: t.Sequence[np.ndarray]) -> t.List[np.ndarray]:
        vectors: t.List[np.ndarray] = []
        for start in range(0, len(windows), self.batch_size):
            batch = np.stack([preprocess(w) for w in windows[start : start + self.batch_size]])
            output = self.session.run(None, {self.input_name: batch})[0]
            vectors.extend(np.asarray(output, dtype=np.float32).reshape(len(batch), -1))
        return vectors


@click.command()
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.option("--batch-size", default=16, show_default=True, type=click.IntRange(min=1))
def main(model: str, batch_size: int) -> None:
    """Embed frame records from stdin with an ONNX model."""
    window = int(os.environ.get("JVA_WINDOW", "0"))
    if window <= 0:
        raise click.UsageError("JVA_WINDOW must give the window size in pixels")

    records = list(read_frame_records(sys.stdin.buffer.read(), window))
    embedder = OnnxEmbedder(model, batch_size)
    vectors = embedder.embed([pixels for _, pixels in records])
    sys.stdout.buffer.write(
        write_vector_records((ts, vector) for (ts, _), vector in zip(records, vectors))
    )
    sys.stdout.buffer.flush()


if __name__ == "__main__":
    main()
