from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from poxbench.synthetic import generate_corpus


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path, monkeypatch):
    # keep every test's cache inside its own temporary directory
    monkeypatch.setenv("POXBENCH_CACHE", str(tmp_path / "cache"))
    monkeypatch.delenv("POXBENCH_THREADS", raising=False)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """40 images, 10 per class, separable."""
    root = tmp_path_factory.mktemp("small_corpus")
    return generate_corpus(root, {"a": 10, "b": 10, "c": 10, "d": 10}, size=32, seed=3)


@pytest.fixture(scope="session")
def medium_corpus(tmp_path_factory):
    """120 images over 4 imbalanced classes."""
    root = tmp_path_factory.mktemp("medium_corpus")
    return generate_corpus(root, {"a": 45, "b": 15, "c": 20, "d": 40}, size=32, seed=11)


def make_blobs(n_per_class: int, n_classes: int, d: int, sep: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes, d)) * sep
    X = np.vstack([centers[c] + rng.standard_normal((n_per_class, d)) for c in range(n_classes)])
    y = np.repeat(np.arange(n_classes), n_per_class)
    return X, y


def tiny_backbone(path: Path, spatial: int = 7, channels: int = 2048, input_size: int = 224) -> Path:
    """An ONNX graph shaped like a headless ResNet-50: (1,3,224,224) -> (1,2048,7,7).

    Average-pool down to the 7x7 grid, then a fixed 1x1 convolution to 2048
    channels. Weights are seeded so outputs are reproducible.
    """
    import onnx
    from onnx import TensorProto, helper, numpy_helper

    k = input_size // spatial
    rng = np.random.default_rng(0)
    weight = rng.standard_normal((channels, 3, 1, 1)).astype(np.float32)
    nodes = [
        helper.make_node("AveragePool", ["input"], ["pooled"], kernel_shape=[k, k], strides=[k, k]),
        helper.make_node("Conv", ["pooled", "w"], ["features"]),
    ]
    graph = helper.make_graph(
        nodes,
        "tiny_backbone",
        [helper.make_tensor_value_info("input", TensorProto.FLOAT, ["batch", 3, input_size, input_size])],
        [helper.make_tensor_value_info("features", TensorProto.FLOAT, ["batch", channels, spatial, spatial])],
        initializer=[numpy_helper.from_array(weight, "w")],
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)])
    model.ir_version = 8
    onnx.save(model, str(path))
    return path
