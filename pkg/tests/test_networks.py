import numpy as np
import pytest

from hmoe import autodiff as ad
from hmoe.autodiff import Tape, Tensor
from hmoe.errors import ConfigurationError, ContractError, DimensionError
from hmoe.networks import (
    GeneratedWeights,
    MlpSpec,
    NetworkInstance,
    bound_norm,
    functional_classifier_apply,
    grl,
    hyperfan_target_variance,
    hypernetwork_generate,
    init_network,
    mlp_forward,
    pack_parameters,
    unpack_parameters,
)


def test_parameter_count_of_toy_classifier():
    spec = MlpSpec.build(32, [32], 1)
    assert spec.parameter_count == 32 * 32 + 32 + 32 + 1 == 1089


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        MlpSpec((3,))
    with pytest.raises(ConfigurationError):
        MlpSpec((3, 0, 1))
    with pytest.raises(ConfigurationError):
        MlpSpec((3, 1), activation="tanh")


def test_instance_rejects_wrong_parameter_shapes():
    spec = MlpSpec.build(2, [3], 1)
    with pytest.raises(ConfigurationError):
        NetworkInstance(spec=spec, parameters=[Tensor(np.zeros((2, 3)))])


def test_mlp_forward_rejects_wrong_input_width():
    net = init_network(MlpSpec.build(2, [3], 1), np.random.default_rng(0))
    with pytest.raises(DimensionError):
        mlp_forward(net, np.zeros((4, 3)))


def test_unpack_inverts_pack():
    spec = MlpSpec.build(3, [4, 2], 2)
    net = init_network(spec, np.random.default_rng(1))
    arrays = unpack_parameters(pack_parameters(net.parameters), spec)
    for original, restored in zip(net.parameters, arrays):
        np.testing.assert_array_equal(original.data, restored)


def test_unpack_rejects_wrong_length():
    with pytest.raises(ConfigurationError):
        unpack_parameters(np.zeros(5), MlpSpec.build(2, [], 1))


def test_functional_apply_matches_stored_network_exactly():
    rng = np.random.default_rng(2)
    spec = MlpSpec.build(4, [5], 3)
    for _ in range(100):
        net = init_network(spec, rng)
        z = rng.standard_normal((7, 4))
        theta = GeneratedWeights(flat=Tensor(pack_parameters(net.parameters)), spec=spec)

        expected = mlp_forward(net, z).data
        actual = functional_classifier_apply(z, theta, spec).data

        np.testing.assert_array_equal(actual, expected)


def test_batched_theta_applies_one_classifier_per_row():
    rng = np.random.default_rng(3)
    spec = MlpSpec.build(3, [4], 2)
    nets = [init_network(spec, rng) for _ in range(5)]
    z = rng.standard_normal((5, 3))
    flat = np.stack([pack_parameters(n.parameters) for n in nets])

    out = functional_classifier_apply(z, GeneratedWeights(flat=Tensor(flat), spec=spec), spec)

    for i, net in enumerate(nets):
        expected = mlp_forward(net, z[i : i + 1]).data[0]
        np.testing.assert_allclose(out.data[i], expected, rtol=1e-12, atol=1e-14)


def test_functional_apply_rejects_mismatched_spec():
    spec = MlpSpec.build(3, [4], 2)
    other = MlpSpec.build(3, [5], 2)
    theta = GeneratedWeights(flat=Tensor(np.zeros(other.parameter_count)), spec=other)
    with pytest.raises(ConfigurationError):
        functional_classifier_apply(np.zeros((1, 3)), theta, spec)


def test_generated_weights_must_fit_spec():
    spec = MlpSpec.build(2, [], 1)
    with pytest.raises(ConfigurationError):
        GeneratedWeights(flat=Tensor(np.zeros(4)), spec=spec)


def test_hypernetwork_output_must_match_classifier():
    classifier = MlpSpec.build(2, [], 1)
    f_h = init_network(MlpSpec.build(4, [8], 5), np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        hypernetwork_generate(f_h, np.zeros(4), classifier)


def test_hypernetwork_rejects_wrong_embedding_size():
    classifier = MlpSpec.build(2, [], 1)
    f_h = init_network(MlpSpec.build(4, [8], 3), np.random.default_rng(0))
    with pytest.raises(DimensionError):
        hypernetwork_generate(f_h, np.zeros(5), classifier)


def test_hypernetwork_generates_single_and_batched_weights():
    classifier = MlpSpec.build(2, [3], 1)
    f_h = init_network(MlpSpec.build(4, [8], classifier.parameter_count), np.random.default_rng(0))
    e = np.random.default_rng(1).standard_normal((3, 4))

    single = hypernetwork_generate(f_h, e[1], classifier)
    batched = hypernetwork_generate(f_h, e, classifier)

    assert single.flat.shape == (classifier.parameter_count,)
    assert batched.batched
    np.testing.assert_allclose(batched.flat.data[1], single.flat.data, rtol=1e-12, atol=1e-14)


def test_hyperfan_init_scales_generated_weights():
    rng = np.random.default_rng(4)
    target = MlpSpec.build(32, [32], 1)
    f_h = init_network(
        MlpSpec.build(8, [32, 32, 32], target.parameter_count), rng, "hyperfan", target
    )

    generated = hypernetwork_generate(f_h, rng.standard_normal((64, 8)), target).flat.data
    desired = hyperfan_target_variance(target)

    first_layer = slice(0, 32 * 32)
    ratio = generated[:, first_layer].var() / desired[first_layer].mean()
    assert 0.5 < ratio < 2.0


def test_hyperfan_needs_matching_target():
    with pytest.raises(ConfigurationError):
        init_network(MlpSpec.build(4, [4], 7), np.random.default_rng(0), "hyperfan")
    with pytest.raises(ConfigurationError):
        init_network(
            MlpSpec.build(4, [4], 7), np.random.default_rng(0), "hyperfan", MlpSpec.build(2, [], 1)
        )


def test_grl_forward_is_identity():
    v = Tensor(np.random.default_rng(5).standard_normal((4, 3)))
    np.testing.assert_array_equal(grl(v, 0.7).data, v.data)


def _reversed_gradient(lambda_value: float | None) -> np.ndarray:
    v = Tensor.parameter(np.random.default_rng(6).standard_normal((4, 3)))
    w = np.random.default_rng(7).standard_normal((4, 3))
    with Tape() as tape:
        h = v if lambda_value is None else grl(v, lambda_value)
        loss = ad.reduce_sum(ad.square(h) * w)
    ad.backward(tape, loss, [v])
    return v.grad


def test_grl_backward_negates_and_scales():
    plain = _reversed_gradient(None)
    np.testing.assert_array_equal(_reversed_gradient(0.7), -0.7 * plain)
    assert np.all(_reversed_gradient(0.0) == 0.0)


def test_grl_rejects_negative_lambda():
    with pytest.raises(ContractError):
        grl(Tensor([1.0]), -0.1)


def test_bound_norm_caps_every_row():
    u = np.random.default_rng(8).standard_normal((50, 8)) * np.logspace(-2, 4, 50)[:, None]
    v = bound_norm(u, 4.0).data
    norms = np.linalg.norm(v, axis=1)
    assert norms.max() < 4.0
    assert norms[-1] == pytest.approx(4.0, rel=1e-6)
    # direction is kept
    cosine = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * norms)
    np.testing.assert_allclose(cosine, 1.0, atol=1e-12)


def test_bound_norm_is_near_identity_for_short_rows():
    u = np.random.default_rng(9).standard_normal((5, 3)) * 0.01
    np.testing.assert_allclose(bound_norm(u, 4.0).data, u, rtol=1e-4)


def test_bound_norm_gradient():
    u = Tensor.parameter(np.random.default_rng(10).standard_normal((4, 3)) * 3.0)
    w = np.random.default_rng(11).standard_normal((4, 3))

    errors = ad.gradient_check(lambda: ad.reduce_sum(bound_norm(u, 2.0) * w), [u])

    assert max(errors.values()) < 1e-6


def test_bound_norm_rejects_bad_inputs():
    with pytest.raises(ContractError):
        bound_norm(np.zeros((2, 3)), 0.0)
    with pytest.raises(DimensionError):
        bound_norm(np.zeros(3), 1.0)
