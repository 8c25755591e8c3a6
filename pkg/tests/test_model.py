import numpy as np
import pytest

from hmoe.errors import ConfigurationError
from hmoe.model import Architecture, HMOEModel, load_checkpoint_metadata
from tests.conftest import tiny_architecture


def test_toy_architecture_shapes():
    arch = Architecture(task="regression", input_dim=1, output_dim=1)
    assert arch.classifier_spec.parameter_count == 1089
    assert arch.hypernetwork_spec.layer_sizes == (8, 32, 32, 32, 1089)
    assert arch.featurizer_spec.layer_sizes == (1, 32, 32, 32)
    assert arch.encoder_spec.layer_sizes == (1, 32, 32, 8)
    assert arch.adversary_spec is None


def test_architecture_validation_names_the_key():
    with pytest.raises(ConfigurationError, match="model.K"):
        tiny_architecture(K=0)
    with pytest.raises(ConfigurationError, match="model.eps"):
        tiny_architecture(eps=0.0)
    with pytest.raises(ConfigurationError, match="model.encoder_radius"):
        tiny_architecture(encoder_radius=0.0)
    with pytest.raises(ConfigurationError):
        tiny_architecture(task="ranking")


def test_architecture_round_trips_through_dict():
    arch = tiny_architecture()
    assert Architecture.from_dict(arch.to_dict()) == arch
    bounded = tiny_architecture(encoder_radius=2.5)
    assert Architecture.from_dict(bounded.to_dict()) == bounded


def test_forward_shapes(tiny_model, tiny_batch):
    out = tiny_model(tiny_batch.x)
    assert out.z.shape == (6, 3)
    assert out.v.shape == (6, 4)
    assert out.gate.p.shape == (6, 3)
    assert out.expert_outputs.shape == (6, 3, 2)
    assert out.output.shape == (6, 2)


def test_mix_output_lies_in_the_convex_hull_of_experts(tiny_model):
    x = np.random.default_rng(0).standard_normal((50, 2)) * 2.0
    out = tiny_model(x)
    experts = out.expert_outputs.data
    assert np.all(out.output.data <= experts.max(axis=1) + 1e-12)
    assert np.all(out.output.data >= experts.min(axis=1) - 1e-12)


def test_encoder_radius_bounds_the_encoder_output():
    model = HMOEModel.build(tiny_architecture(encoder_radius=2.0), np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((40, 2)) * 100.0

    v = model.encode(x).data

    assert np.linalg.norm(v, axis=1).max() <= 2.0
    np.testing.assert_array_equal(model(x).v.data, v)


def test_single_expert_output_equals_that_expert():
    model = HMOEModel.build(tiny_architecture(K=1), np.random.default_rng(0))
    out = model(np.random.default_rng(1).standard_normal((5, 2)))
    np.testing.assert_array_equal(out.output.data, out.expert_outputs.data[:, 0, :])


def test_named_parameters_cover_every_network(tiny_model, tiny_regression_model):
    names = set(tiny_model.named_parameters())
    assert "embeddings" in names
    assert {n.split(".")[0] for n in names} == {
        "featurizer",
        "encoder",
        "hypernetwork",
        "adversary",
        "embeddings",
    }
    assert tiny_regression_model.adversary is None
    assert tiny_model.parameter_count() == sum(p.size for p in tiny_model.parameters())


def test_same_seed_builds_identical_models():
    a = HMOEModel.build(tiny_architecture(), np.random.default_rng(3))
    b = HMOEModel.build(tiny_architecture(), np.random.default_rng(3))
    for name, value in a.state_dict().items():
        np.testing.assert_array_equal(value, b.state_dict()[name])


def test_checkpoint_round_trip(tmp_path, tiny_model, tiny_batch):
    path = tiny_model.save(tmp_path / "ckpt" / "model.npz", metadata={"seed": 7})

    restored = HMOEModel.load(path)

    assert restored.arch == tiny_model.arch
    np.testing.assert_array_equal(
        restored(tiny_batch.x).output.data, tiny_model(tiny_batch.x).output.data
    )
    assert load_checkpoint_metadata(path) == {"seed": 7}


def test_load_rejects_foreign_files(tmp_path):
    bogus = tmp_path / "bogus.npz"
    np.savez(bogus, weights=np.zeros(3))
    with pytest.raises(ConfigurationError):
        HMOEModel.load(bogus)
    with pytest.raises(ConfigurationError):
        HMOEModel.load(tmp_path / "missing.npz")


def test_load_state_dict_rejects_shape_mismatch(tiny_model):
    state = tiny_model.state_dict()
    state["embeddings"] = np.zeros((2, 2))
    with pytest.raises(ConfigurationError):
        tiny_model.load_state_dict(state)
