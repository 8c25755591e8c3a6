import logging

import numpy as np
import pytest

from hmoe.config import reset_config
from hmoe.data import Dataset
from hmoe.losses import Batch
from hmoe.main import shutdown_runtime
from hmoe.model import Architecture, HMOEModel
from hmoe.tracing import get_collector, shutdown_tracing


@pytest.fixture(autouse=True)
def isolated_runtime(monkeypatch, tmp_path):
    """
    Give every test a fresh runtime: no config singleton, no tracer, no spans,
    and a throwaway default output directory.
    """
    monkeypatch.setenv("HMOE_OUTPUT_DIR", str(tmp_path / "runs"))
    reset_config()
    get_collector().drain()
    yield
    shutdown_runtime()
    shutdown_tracing()
    get_collector().drain()
    reset_config()
    hmoe_logger = logging.getLogger("hmoe")
    hmoe_logger.handlers.clear()
    hmoe_logger.propagate = True


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_architecture(task: str = "classification", **overrides) -> Architecture:
    """A mixture small enough for finite-difference checks."""
    fields = dict(
        task=task,
        input_dim=2,
        output_dim=2 if task == "classification" else 1,
        K=3,
        D=4,
        feature_dim=3,
        featurizer_hidden=(4,),
        encoder_hidden=(4,),
        classifier_hidden=(3,),
        hypernetwork_hidden=(4,),
        adversary_hidden=(4,) if task == "classification" else None,
    )
    fields.update(overrides)
    return Architecture(**fields)


@pytest.fixture
def tiny_model():
    return HMOEModel.build(tiny_architecture(), np.random.default_rng(7))


@pytest.fixture
def tiny_regression_model():
    return HMOEModel.build(tiny_architecture("regression"), np.random.default_rng(7))


@pytest.fixture
def tiny_batch():
    rng = np.random.default_rng(11)
    return Batch(
        x=rng.standard_normal((6, 2)),
        y=np.array([0, 1, 1, 0, 1, 0]),
        d=np.array([0, 0, 1, 1, 2, 2]),
    )


@pytest.fixture
def tiny_regression_batch():
    rng = np.random.default_rng(12)
    return Batch(x=rng.standard_normal((6, 2)), y=rng.standard_normal(6))


@pytest.fixture
def tiny_dataset():
    rng = np.random.default_rng(13)
    return Dataset(
        x=rng.standard_normal((12, 2)),
        y=rng.integers(0, 2, size=12),
        d=np.repeat([0, 1, 2], 4),
        task="classification",
        n_classes=2,
    )


# overrides that shrink a synthetic_dg run to a few milliseconds per step
SMALL_SYNTHETIC = {
    "task": "synthetic_dg",
    "steps": 6,
    "batch_size": 8,
    "eval_interval": 3,
    "data.n_per": 5,
    "data.input_dim": 4,
    "model.D": 3,
    "model.feature_dim": 4,
    "model.featurizer_hidden": [4],
    "model.encoder_hidden": [4],
    "model.classifier_hidden": [4],
    "model.hypernetwork_hidden": [4],
    "model.adversary_hidden": [4],
}

SMALL_TOY = {
    "task": "toy_regression",
    "steps": 4,
    "batch_size": 10,
    "eval_interval": 2,
    "model.D": 3,
    "model.feature_dim": 4,
    "model.featurizer_hidden": [4],
    "model.encoder_hidden": [4],
    "model.classifier_hidden": [4],
    "model.hypernetwork_hidden": [4],
}
