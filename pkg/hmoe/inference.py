"""MIX and OOD prediction with a trained mixture."""

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset
from .errors import ConfigurationError
from .gating import GateDistribution, assign_cluster
from .metrics import accuracy, mse
from .model import HMOEModel
from .networks import functional_classifier_apply, hypernetwork_generate, mlp_forward

logger = logging.getLogger(__name__)

MODES = ("MIX", "OOD")


@dataclass
class Prediction:
    """Model output for a batch; classification outputs are logits.

    ``gate`` is only set in MIX mode.
    """

    output: Tensor
    mode: str
    gate: GateDistribution | None = None

    @property
    def values(self) -> np.ndarray:
        return self.output.data

    def labels(self) -> np.ndarray:
        """Argmax class per row."""
        return np.argmax(self.output.data, axis=1)

    def clusters(self) -> np.ndarray | None:
        return None if self.gate is None else assign_cluster(self.gate)


def predict_mix(model: HMOEModel, x) -> Prediction:
    """Gate-weighted sum of every expert's output."""
    with ad.no_grad():
        out = model(x)
    return Prediction(output=out.output, mode="MIX", gate=out.gate)


def predict_ood(model: HMOEModel, x) -> Prediction:
    """Each example gets a classifier generated from its own encoder output."""
    hypernetwork = model.hypernetwork
    if model.encoder.spec.output_size != hypernetwork.spec.input_size:
        raise ConfigurationError(
            f"encoder emits {model.encoder.spec.output_size} values but the hypernetwork "
            f"expects {hypernetwork.spec.input_size}"
        )
    with ad.no_grad():
        x = ad.as_tensor(x)
        z = mlp_forward(model.featurizer, x)
        v = model.encode(x)
        theta = hypernetwork_generate(hypernetwork, v, model.classifier_spec)
        output = functional_classifier_apply(z, theta, model.classifier_spec)
    return Prediction(output=output, mode="OOD")


def predict(model: HMOEModel, x, mode: str = "MIX") -> Prediction:
    if mode == "MIX":
        return predict_mix(model, x)
    if mode == "OOD":
        return predict_ood(model, x)
    raise ConfigurationError(f"unknown inference mode '{mode}'", key="mode")


def score(model: HMOEModel, prediction: Prediction, data: Dataset) -> dict[str, float]:
    if model.task == "classification":
        return {"accuracy": accuracy(prediction.labels(), data.y)}
    return {"mse": mse(prediction.values, data.y)}


def evaluate(model: HMOEModel, data: Dataset, mode: str = "MIX") -> dict[str, float]:
    """Accuracy (classification) or MSE (regression) of one inference mode on ``data``."""
    data.require_nonempty(f"{mode} evaluation set")
    return score(model, predict(model, data.x, mode), data)


def primary_metric(model: HMOEModel) -> str:
    return "accuracy" if model.task == "classification" else "mse"


def predict_grid(model: HMOEModel, grid: np.ndarray) -> dict[str, np.ndarray]:
    """Single-output predictions of both modes on 1-D inputs; used for the toy curve."""
    grid = np.asarray(grid, dtype=np.float64).reshape(-1, 1)
    return {
        "x": grid[:, 0],
        "mix": predict_mix(model, grid).values[:, 0],
        "ood": predict_ood(model, grid).values[:, 0],
    }
