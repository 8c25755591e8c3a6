import math

import numpy as np
import pytest

from hmoe import autodiff as ad
from hmoe.autodiff import Tape, Tensor
from hmoe.errors import ConfigurationError, ContractError, DimensionError
from hmoe.gating import (
    EmbeddingSpace,
    GateDistribution,
    ScheduleState,
    assign_cluster,
    entropy_loss,
    gamma_en,
    gate_values,
    importance,
    kl_balance,
    lambda_grl,
)


def _gate(p) -> GateDistribution:
    p = Tensor(np.asarray(p, dtype=np.float64))
    return GateDistribution(p=p, d=Tensor(np.zeros(p.shape)), s=Tensor(np.zeros(p.shape)))


def test_entropy_schedule():
    assert gamma_en(0.0) == 0.0
    assert gamma_en(0.25) == 0.5
    assert gamma_en(0.5) == 1.0
    assert gamma_en(0.75) == 1.0
    assert gamma_en(1.0) == 1.0


def test_reversal_schedule():
    assert lambda_grl(0.0) == 0.0
    assert lambda_grl(1.0) == pytest.approx(0.99991, abs=1e-5)
    assert lambda_grl(0.5) == pytest.approx(0.98661, abs=1e-5)
    values = [lambda_grl(t) for t in np.linspace(0, 1, 11)]
    assert values == sorted(values)


def test_schedules_reject_progress_outside_unit_interval():
    with pytest.raises(ContractError):
        gamma_en(1.5)
    with pytest.raises(ContractError):
        lambda_grl(-0.1)


def test_schedule_state_bundles_both_schedules():
    state = ScheduleState.at(0.25)
    assert state.gamma_en == 0.5
    assert state.lambda_grl == pytest.approx(lambda_grl(0.25))


def test_embedding_space_shape():
    E = EmbeddingSpace.initialize(3, 8, np.random.default_rng(0))
    assert (E.K, E.D) == (3, 8)
    assert E.vector(1).shape == (8,)
    with pytest.raises(ConfigurationError):
        EmbeddingSpace.initialize(0, 8, np.random.default_rng(0))


def test_gate_rows_sum_to_one():
    rng = np.random.default_rng(1)
    for _ in range(10000):
        K, D = rng.integers(1, 6), rng.integers(1, 5)
        E = EmbeddingSpace.initialize(int(K), int(D), rng)
        g = gate_values(rng.standard_normal((3, int(D))) * 3.0, E)
        np.testing.assert_allclose(g.p.data.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(g.p.data >= 0)


def test_gate_prefers_nearer_embeddings():
    rng = np.random.default_rng(2)
    E = EmbeddingSpace.initialize(4, 3, rng)
    g = gate_values(rng.standard_normal((20, 3)), E)
    for p_row, d_row in zip(g.p.data, g.d.data):
        np.testing.assert_array_equal(np.argsort(d_row), np.argsort(-p_row))


def test_gate_at_an_embedding_is_nearly_one_hot():
    E = EmbeddingSpace(Tensor(np.array([[0.0, 0.0], [3.0, 4.0], [-2.0, 1.0]])))
    g = gate_values(np.array([[3.0, 4.0]]), E)
    assert g.p.data[0, 1] > 1.0 - 1e-6
    assert g.d.data[0, 1] == 0.0
    assert g.d.data[0, 0] == pytest.approx(5.0)


def test_single_expert_gate_is_exactly_one():
    E = EmbeddingSpace.initialize(1, 2, np.random.default_rng(3))
    g = gate_values(np.random.default_rng(4).standard_normal((5, 2)), E)
    np.testing.assert_array_equal(g.p.data, np.ones((5, 1)))


def test_gate_rejects_bad_inputs():
    E = EmbeddingSpace.initialize(2, 3, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        gate_values(np.zeros((4, 2)), E)
    with pytest.raises(ContractError):
        gate_values(np.zeros((4, 3)), E, eps=0.0)


def test_entropy_endpoints():
    assert entropy_loss(_gate([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])).item() == 0.0
    uniform = _gate(np.full((4, 3), 1.0 / 3.0))
    assert entropy_loss(uniform).item() == pytest.approx(math.log(3), rel=1e-12)


def test_kl_balance_endpoints():
    assert kl_balance(_gate(np.full((4, 3), 1.0 / 3.0))).item() == pytest.approx(0.0, abs=1e-15)
    collapsed = _gate([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert kl_balance(collapsed).item() == pytest.approx(math.log(3), rel=1e-12)


def test_kl_balance_is_zero_for_balanced_one_hot_rows():
    assert kl_balance(_gate([[1.0, 0.0], [0.0, 1.0]])).item() == pytest.approx(0.0, abs=1e-15)


def test_importance_ratio():
    imp = importance(_gate([[0.5, 0.5], [0.9, 0.1]]))
    np.testing.assert_allclose(imp.I, [1.4, 0.6])
    np.testing.assert_allclose(imp.P, [0.7, 0.3])
    assert imp.ratio == pytest.approx(1.4 / 0.6)
    assert importance(_gate([[1.0, 0.0]])).ratio == float("inf")


def test_assign_cluster_breaks_ties_to_lowest_index():
    g = _gate([[0.2, 0.4, 0.4], [0.5, 0.5, 0.0], [0.1, 0.1, 0.8]])
    np.testing.assert_array_equal(assign_cluster(g), [1, 0, 2])


def test_gate_values_at_distances_one_two_three():
    E = EmbeddingSpace(Tensor(np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])))
    g = gate_values(np.zeros((1, 2)), E)

    np.testing.assert_allclose(g.d.data, [[1.0, 2.0, 3.0]])
    np.testing.assert_allclose(g.p.data, [[0.73469, 0.18367, 0.08163]], rtol=1e-4)
    assert entropy_loss(g).item() == pytest.approx(0.74229, abs=1e-4)


def test_kl_balance_of_a_single_row():
    # sum_k P_k ln(K P_k) for P = [0.5, 0.3, 0.2]
    assert kl_balance(_gate([[0.5, 0.3, 0.2]])).item() == pytest.approx(0.068959, abs=1e-5)


def test_entropy_gradient_reaches_encoder_output_and_embeddings():
    rng = np.random.default_rng(12)
    v = Tensor.parameter(rng.standard_normal((5, 3)), name="v")
    E = EmbeddingSpace(Tensor.parameter(rng.standard_normal((4, 3)), name="E"))

    def fn():
        return entropy_loss(gate_values(v, E))

    ad.zero_grad([v, E.vectors])
    with Tape() as tape:
        loss = fn()
    ad.backward(tape, loss, [v, E.vectors])

    assert np.abs(v.grad).max() > 1e-6
    assert np.abs(E.vectors.grad).max() > 1e-6
    assert max(ad.gradient_check(fn, [v, E.vectors]).values()) < 1e-5


@pytest.mark.parametrize(
    "transform",
    [lambda s: 3.0 * s + 1.0, lambda s: s**3, np.exp],
    ids=["affine", "cube", "exp"],
)
def test_assign_cluster_ignores_monotone_score_transforms(transform):
    scores = np.random.default_rng(13).standard_normal((30, 4))
    reference = assign_cluster(_gate(ad.softmax(Tensor(scores)).data))

    transformed = assign_cluster(_gate(ad.softmax(Tensor(transform(scores))).data))

    np.testing.assert_array_equal(transformed, reference)
