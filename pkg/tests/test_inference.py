import numpy as np
import pytest

from hmoe import model as model_module
from hmoe.autodiff import Tensor
from hmoe.data import Dataset
from hmoe.errors import ConfigurationError, DataError
from hmoe.gating import GateDistribution
from hmoe.inference import evaluate, predict, predict_grid, predict_mix, predict_ood, score
from hmoe.model import HMOEModel
from tests.conftest import tiny_architecture


def test_mix_is_the_gate_weighted_sum_of_experts(monkeypatch, tiny_regression_model):
    p = Tensor([[0.5, 0.3, 0.2]])
    gate = GateDistribution(p=p, d=Tensor(np.zeros((1, 3))), s=Tensor(np.zeros((1, 3))))
    monkeypatch.setattr(model_module, "gate_values", lambda v, E, eps: gate)
    monkeypatch.setattr(
        tiny_regression_model, "expert_outputs", lambda z: Tensor([[[1.0], [2.0], [3.0]]])
    )

    prediction = predict_mix(tiny_regression_model, np.zeros((1, 2)))

    assert prediction.values[0, 0] == pytest.approx(1.7)
    assert prediction.mode == "MIX"


def test_ood_at_an_embedding_matches_that_expert(tiny_regression_model):
    x = np.random.default_rng(0).standard_normal((1, 2))
    k = 1
    tiny_regression_model.embeddings.vectors.data[k] = tiny_regression_model.encode(x).data[0]

    ood = predict_ood(tiny_regression_model, x)
    experts = tiny_regression_model(x).expert_outputs.data

    np.testing.assert_allclose(ood.values[0], experts[0, k], rtol=1e-10, atol=1e-12)
    assert ood.gate is None
    assert ood.clusters() is None


def test_ood_uses_the_bounded_encoder_output():
    model = HMOEModel.build(
        tiny_architecture("regression", encoder_radius=0.5), np.random.default_rng(3)
    )
    x = np.random.default_rng(4).standard_normal((1, 2)) * 20.0
    model.embeddings.vectors.data[0] = model.encode(x).data[0]

    ood = predict_ood(model, x)

    experts = model(x).expert_outputs.data
    np.testing.assert_allclose(ood.values[0], experts[0, 0], rtol=1e-10, atol=1e-12)


def test_mix_at_an_embedding_routes_to_that_expert(tiny_regression_model):
    x = np.random.default_rng(1).standard_normal((1, 2))
    tiny_regression_model.embeddings.vectors.data[2] = tiny_regression_model.encode(x).data[0]

    mix = predict_mix(tiny_regression_model, x)

    assert mix.gate.p.data[0, 2] > 1.0 - 1e-6
    assert mix.clusters()[0] == 2


def test_inference_is_deterministic(tiny_model):
    x = np.random.default_rng(2).standard_normal((8, 2))
    for mode in ("MIX", "OOD"):
        np.testing.assert_array_equal(
            predict(tiny_model, x, mode).values, predict(tiny_model, x, mode).values
        )


def test_inference_leaves_no_gradient_state(tiny_model):
    prediction = predict_mix(tiny_model, np.zeros((3, 2)))
    assert not prediction.output.requires_grad
    assert all(p.grad is None for p in tiny_model.parameters())


def test_unknown_mode_is_rejected(tiny_model):
    with pytest.raises(ConfigurationError):
        predict(tiny_model, np.zeros((1, 2)), "ENSEMBLE")


def test_ood_needs_encoder_matching_hypernetwork(tiny_model):
    mismatched = HMOEModel.build(tiny_architecture(D=5), np.random.default_rng(0))
    mismatched.encoder = tiny_model.encoder
    with pytest.raises(ConfigurationError):
        predict_ood(mismatched, np.zeros((1, 2)))


def test_classification_score_uses_argmax_labels(tiny_model):
    data = Dataset(
        x=np.zeros((3, 2)), y=np.array([0, 1, 0]), d=np.zeros(3), task="classification"
    )
    prediction = predict_mix(tiny_model, data.x)
    prediction.output = Tensor([[2.0, 1.0], [0.0, 3.0], [0.5, 0.6]])

    assert score(tiny_model, prediction, data) == {"accuracy": pytest.approx(2 / 3)}


def test_evaluate_reports_the_task_metric(tiny_model, tiny_regression_model, tiny_dataset):
    assert set(evaluate(tiny_model, tiny_dataset, "OOD")) == {"accuracy"}
    regression = Dataset(x=np.ones((4, 2)), y=np.zeros(4), d=np.zeros(4), task="regression")
    assert set(evaluate(tiny_regression_model, regression, "MIX")) == {"mse"}


def test_evaluate_rejects_empty_data(tiny_model):
    empty = Dataset(
        x=np.zeros((0, 2)), y=np.zeros(0), d=np.zeros(0), task="classification", n_classes=2
    )
    with pytest.raises(DataError):
        evaluate(tiny_model, empty, "MIX")


def test_predict_grid_returns_both_curves():
    model = HMOEModel.build(
        tiny_architecture("regression", input_dim=1), np.random.default_rng(0)
    )
    grid = np.linspace(-0.25, 2.75, 31)

    curve = predict_grid(model, grid)

    np.testing.assert_array_equal(curve["x"], grid)
    assert curve["mix"].shape == curve["ood"].shape == (31,)
