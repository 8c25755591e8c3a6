import numpy as np
import pytest

from hmoe.errors import ConfigurationError
from hmoe.experiment import (
    ADVERSARIAL_ENCODER_RADIUS,
    ExperimentConfig,
    parse_config,
    parse_override,
    prepare_data,
    rng_streams,
)
from tests.conftest import SMALL_SYNTHETIC


def test_defaults_for_toy_regression():
    config = parse_config()

    assert config.task == "toy_regression"
    assert (config.model.K, config.model.D) == (3, 8)
    assert config.lr == 0.001
    assert config.steps == 20000
    assert config.batch_size == 60
    weights = config.loss_weights()
    assert (weights.lambda_y, weights.lambda_en, weights.lambda_kl) == (1.0, 1.0, 1.0)
    assert weights.lambda_ad == 0.0


def test_defaults_for_synthetic_classification():
    config = parse_config(overrides={"task": "synthetic_dg"})
    assert config.task_type == "classification"
    assert config.loss_weights().lambda_ad == 0.1
    assert config.architecture(16, 3).adversary_spec is not None


def test_encoder_is_bounded_only_for_adversarial_tasks():
    synthetic = parse_config(overrides={"task": "synthetic_dg"})
    assert synthetic.architecture(16, 3).encoder_radius == ADVERSARIAL_ENCODER_RADIUS
    assert parse_config().architecture(1, 1).encoder_radius is None

    unbounded = parse_config(overrides={"task": "synthetic_dg", "model.encoder_radius": 0})
    assert unbounded.architecture(16, 3).encoder_radius is None
    custom = parse_config(overrides={"model.encoder_radius": 2.5})
    assert custom.architecture(1, 1).encoder_radius == 2.5


def test_mu_variant_gets_default_mixup_alpha():
    config = parse_config(overrides={"variant": "MU"})
    assert config.mixup.alpha == 0.3


@pytest.mark.parametrize(
    "overrides, key",
    [
        ({"model.K": 0}, "model.K"),
        ({"steps": "abc"}, "steps"),
        ({"lr": -1.0}, "lr"),
        ({"variant": "XX"}, "variant"),
        ({"model.gating": "topk"}, "model.gating"),
        ({"model.encoder_radius": -1.0}, "model.encoder_radius"),
        ({"loss.lambda_kl": -0.5}, "loss.lambda_kl"),
        ({"mixup.ema_momentum": 1.0}, "mixup.ema_momentum"),
        ({"variant": "MU", "mixup.alpha": 0.0}, "mixup.alpha"),
        ({"task": "toy_regression", "loss.lambda_ad": 0.1}, "loss.lambda_ad"),
        ({"task": "synthetic_dg", "data.test_domains": [0, 1, 2]}, "data.test_domains"),
        ({"task": "synthetic_dg", "variant": "DL", "model.K": 2}, "loss.lambda_d"),
        ({"task": "image_dg"}, "task"),
    ],
)
def test_invalid_config_names_the_key(overrides, key):
    with pytest.raises(ConfigurationError) as info:
        parse_config(overrides=overrides)
    assert info.value.key == key
    assert key in str(info.value)


def test_nested_and_dotted_files_agree(tmp_path):
    nested = tmp_path / "nested.yaml"
    nested.write_text("task: synthetic_dg\nseed: 4\nloss:\n  lambda_kl: 0.5\nmodel:\n  K: 4\n")
    dotted = tmp_path / "dotted.yaml"
    dotted.write_text("task: synthetic_dg\nseed: 4\nloss.lambda_kl: 0.5\nmodel.K: 4\n")

    assert parse_config(nested).to_dict() == parse_config(dotted).to_dict()


def test_overrides_win_over_file_values(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("steps: 10\nmodel:\n  D: 4\n")
    config = parse_config(path, {"steps": 3})
    assert (config.steps, config.model.D) == (3, 4)


def test_unreadable_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(tmp_path / "missing.yaml")
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigurationError):
        parse_config(listing)


def test_parse_override_uses_yaml_scalars():
    assert parse_override("loss.lambda_kl=0") == ("loss.lambda_kl", 0)
    assert parse_override("model.hyperfan=false") == ("model.hyperfan", False)
    assert parse_override("model.encoder_hidden=[8, 8]") == ("model.encoder_hidden", [8, 8])
    assert parse_override("lr=1e-3") == ("lr", 0.001)
    with pytest.raises(ConfigurationError):
        parse_override("no-equals-sign")


def test_integer_values_are_accepted_for_float_keys():
    config = parse_config(overrides={"lr": 1})
    assert config.lr == 1.0


def test_rng_streams_are_reproducible_and_independent():
    a, b = rng_streams(3), rng_streams(3)
    assert a.init.integers(1 << 30) == b.init.integers(1 << 30)
    c = rng_streams(3)
    assert c.init.integers(1 << 30) != c.shuffle.integers(1 << 30)


def test_toy_data_trains_and_validates_on_everything():
    config = ExperimentConfig.defaults("toy_regression")
    data = prepare_data(config, rng_streams(0))
    assert len(data.train) == len(data.val) == len(data.full) == 60
    assert data.test is None


def test_synthetic_data_holds_out_domains():
    config = parse_config(overrides={**SMALL_SYNTHETIC, "data.test_domains": [2]})

    data = prepare_data(config, rng_streams(0))

    assert set(data.test.domains) == {2}
    assert set(data.train.domains) == {0, 1}
    assert len(data.train) + len(data.val) + len(data.test) == len(data.full) == 45
    assert len(data.train) == 2 * 12


def test_dataset_path_is_read_instead_of_generated(tmp_path):
    csv = tmp_path / "data.csv"
    csv.write_text("x_0,x_1,y,d\n0,1,0,0\n1,0,1,0\n1,1,1,1\n0,0,0,1\n")
    config = parse_config(
        overrides={"task": "synthetic_dg", "data.dataset_path": str(csv), "data.train_fraction": 1}
    )

    data = prepare_data(config, rng_streams(0))

    assert data.full.input_dim == 2
    np.testing.assert_array_equal(data.full.d, [0, 0, 1, 1])
