import json
from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def micro_stream():
    with open(FIXTURES / "micro_stream.json") as f:
        return json.load(f)


@pytest.fixture
def small_labeled(rng):
    """3 well-separated classes on the sphere, 12 unit samples each, d=10."""
    d, per_class = 10, 12
    dirs = np.eye(3, d)
    feats, labels = [], []
    for c in range(3):
        noisy = dirs[c] + 0.1 * rng.normal(size=(per_class, d))
        feats.append(noisy / np.linalg.norm(noisy, axis=1, keepdims=True))
        labels.extend([c] * per_class)
    return np.vstack(feats), np.array(labels)


@pytest.fixture(params=["numpy", "numba"])
def backend(request, monkeypatch):
    """Run a test under both decision-kernel backends."""
    monkeypatch.setenv("PROTOSTREAM_BACKEND", request.param)
    return request.param
