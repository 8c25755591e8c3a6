"""Experiment configuration: YAML files, dotted overrides, task defaults and seeded streams."""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from .data import (
    Dataset,
    SplitSpec,
    gen_synthetic_domains,
    gen_toy_regression,
    holdout_domains,
    read_dataset,
    split_train_val,
)
from .errors import ConfigurationError
from .losses import VARIANTS, LossWeights
from .model import HIDDEN_FIELDS, Architecture

logger = logging.getLogger(__name__)

# experiment task -> model task
TASKS: dict[str, str] = {"toy_regression": "regression", "synthetic_dg": "classification"}

SECTIONS = ("model", "loss", "mixup", "data")

# named generators derived from the single experiment seed
STREAM_NAMES = ("init", "data", "split", "shuffle", "mixup")

# cap on |v| for classification models, which train the class adversary
ADVERSARIAL_ENCODER_RADIUS = 4.0


@dataclass
class ModelSection:
    K: int = 3
    D: int = 8
    eps: float = 1e-8
    feature_dim: int = 32
    featurizer_hidden: list[int] = field(default_factory=lambda: [32, 32])
    encoder_hidden: list[int] = field(default_factory=lambda: [32, 32])
    classifier_hidden: list[int] = field(default_factory=lambda: [32])
    hypernetwork_hidden: list[int] = field(default_factory=lambda: [32, 32, 32])
    adversary_hidden: list[int] = field(default_factory=lambda: [32, 32])
    activation: str = "silu"
    adversary_activation: str = "relu"
    hyperfan: bool = True
    # None: bounded only when an adversary is trained; 0: never bounded
    encoder_radius: float | None = None


@dataclass
class LossSection:
    """Explicit weights; ``None`` falls back to the variant default."""

    lambda_y: float | None = None
    lambda_en: float | None = None
    lambda_kl: float | None = None
    lambda_ad: float | None = None
    lambda_d: float | None = None


@dataclass
class MixupSection:
    alpha: float = 0.3
    switch_threshold: float = 0.1
    ema_momentum: float = 0.9


@dataclass
class DataSection:
    n_domains: int = 3
    n_classes: int = 3
    n_per: int = 100
    separation: float = 10.0
    input_dim: int = 16
    train_fraction: float = 0.8
    test_domains: list[int] = field(default_factory=list)
    domain_label_fraction: float = 1.0
    dataset_path: str | None = None


@dataclass
class ExperimentConfig:
    task: str = "toy_regression"
    variant: str = "ND"
    seed: int = 0
    steps: int = 20000
    lr: float = 0.001
    batch_size: int = 60
    eval_interval: int = 100
    output_dir: str | None = None
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    mixup: MixupSection = field(default_factory=MixupSection)
    data: DataSection = field(default_factory=DataSection)

    @classmethod
    def defaults(cls, task: str) -> "ExperimentConfig":
        if task not in TASKS:
            raise ConfigurationError(
                f"unknown task '{task}'. Must be one of: {', '.join(TASKS)}", key="task"
            )
        if task == "toy_regression":
            return cls(
                task=task,
                steps=20000,
                batch_size=60,
                data=DataSection(n_domains=3, input_dim=1, train_fraction=1.0),
            )
        return cls(task=task, steps=5000, batch_size=96)

    @property
    def task_type(self) -> str:
        return TASKS[self.task]

    def architecture(self, input_dim: int, output_dim: int) -> Architecture:
        m = self.model
        return Architecture(
            task=self.task_type,
            input_dim=input_dim,
            output_dim=output_dim,
            K=m.K,
            D=m.D,
            feature_dim=m.feature_dim,
            featurizer_hidden=tuple(m.featurizer_hidden),
            encoder_hidden=tuple(m.encoder_hidden),
            classifier_hidden=tuple(m.classifier_hidden),
            hypernetwork_hidden=tuple(m.hypernetwork_hidden),
            adversary_hidden=(
                tuple(m.adversary_hidden) if self.task_type == "classification" else None
            ),
            activation=m.activation,
            adversary_activation=m.adversary_activation,
            eps=m.eps,
            hyperfan=m.hyperfan,
            encoder_radius=self.encoder_radius(),
        )

    def encoder_radius(self) -> float | None:
        """Radius of the encoder output cap, or None for an unbounded encoder."""
        radius = self.model.encoder_radius
        if radius is None:
            return ADVERSARIAL_ENCODER_RADIUS if self.task_type == "classification" else None
        return radius if radius > 0 else None

    def loss_weights(self) -> LossWeights:
        return LossWeights.for_variant(self.variant, self.task_type).with_overrides(
            **asdict(self.loss)
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


# ---------------------------------------------------------------------------
# Key schema
# ---------------------------------------------------------------------------


def _is_int(value: Any) -> bool:
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool)


def _as_int(value: Any) -> int:
    if not _is_int(value):
        raise TypeError("an integer")
    return int(value)


def _as_float(value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
        raise TypeError("a number")
    return float(value)


def _as_optional_float(value: Any) -> float | None:
    return None if value is None else _as_float(value)


def _as_bool(value: Any) -> bool:
    if not isinstance(value, bool):
        raise TypeError("true or false")
    return value


def _as_str(value: Any) -> str:
    if not isinstance(value, str):
        raise TypeError("a string")
    return value


def _as_optional_str(value: Any) -> str | None:
    return None if value is None else _as_str(value)


def _as_int_list(value: Any) -> list[int]:
    if _is_int(value):
        return [int(value)]
    if not isinstance(value, (list, tuple)) or not all(_is_int(v) for v in value):
        raise TypeError("a list of integers")
    return [int(v) for v in value]


KEY_TYPES: dict[str, Callable[[Any], Any]] = {
    "task": _as_str,
    "variant": _as_str,
    "seed": _as_int,
    "steps": _as_int,
    "lr": _as_float,
    "batch_size": _as_int,
    "eval_interval": _as_int,
    "output_dir": _as_optional_str,
    "model.K": _as_int,
    "model.D": _as_int,
    "model.eps": _as_float,
    "model.feature_dim": _as_int,
    "model.featurizer_hidden": _as_int_list,
    "model.encoder_hidden": _as_int_list,
    "model.classifier_hidden": _as_int_list,
    "model.hypernetwork_hidden": _as_int_list,
    "model.adversary_hidden": _as_int_list,
    "model.activation": _as_str,
    "model.adversary_activation": _as_str,
    "model.hyperfan": _as_bool,
    "model.encoder_radius": _as_optional_float,
    "loss.lambda_y": _as_optional_float,
    "loss.lambda_en": _as_optional_float,
    "loss.lambda_kl": _as_optional_float,
    "loss.lambda_ad": _as_optional_float,
    "loss.lambda_d": _as_optional_float,
    "mixup.alpha": _as_float,
    "mixup.switch_threshold": _as_float,
    "mixup.ema_momentum": _as_float,
    "data.n_domains": _as_int,
    "data.n_classes": _as_int,
    "data.n_per": _as_int,
    "data.separation": _as_float,
    "data.input_dim": _as_int,
    "data.train_fraction": _as_float,
    "data.test_domains": _as_int_list,
    "data.domain_label_fraction": _as_float,
    "data.dataset_path": _as_optional_str,
}


def flatten(raw: dict[str, Any]) -> dict[str, Any]:
    """Turn nested sections into dotted keys; already dotted keys pass through."""
    flat: dict[str, Any] = {}
    for key, value in raw.items():
        key = str(key)
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigurationError("a section must be a mapping", key=key)
            for sub, sub_value in value.items():
                flat[f"{key}.{sub}"] = sub_value
        else:
            flat[key] = value
    return flat


def parse_override(assignment: str) -> tuple[str, Any]:
    """Split ``key=value`` and parse the value with YAML scalar rules."""
    key, sep, text = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigurationError(f"override '{assignment}' is not of the form key=value")
    try:
        value = yaml.safe_load(text) if text.strip() else None
    except yaml.YAMLError as e:
        raise ConfigurationError(f"cannot parse value '{text}'", key=key.strip()) from e
    # YAML 1.1 reads exponent floats without a dot (1e-3) as strings
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            pass
    return key.strip(), value


def load_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        with path.open("r") as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError as e:
        raise ConfigurationError(f"config file not found: {path}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"cannot parse {path}: {e}") from e
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path} must hold a mapping of config keys")
    return raw


def parse_config(
    path: str | Path | None = None, overrides: dict[str, Any] | None = None
) -> ExperimentConfig:
    """Resolve a config from an optional YAML file plus overrides; overrides win.

    Keys may be nested (``loss: {lambda_kl: 1}``) or dotted (``loss.lambda_kl: 1``).
    Defaults depend on the task, so ``task`` is resolved first.
    """
    flat = flatten(load_config_file(path)) if path is not None else {}
    flat.update(flatten(overrides or {}))

    task = flat.pop("task", "toy_regression")
    config = ExperimentConfig.defaults(_coerce("task", task))

    for key, value in flat.items():
        value = _coerce(key, value)
        if "." in key:
            section, name = key.split(".", 1)
            setattr(getattr(config, section), name, value)
        else:
            setattr(config, key, value)

    validate_config(config)
    logger.debug(f"Resolved config: {config.to_dict()}")
    return config


def _coerce(key: str, value: Any) -> Any:
    try:
        convert = KEY_TYPES[key]
    except KeyError:
        raise ConfigurationError("unknown config key", key=key) from None
    try:
        return convert(value)
    except TypeError as e:
        raise ConfigurationError(
            f"expected {e}, got {type(value).__name__} {value!r}", key=key
        ) from None


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise ConfigurationError(message, key=key)


def validate_config(config: ExperimentConfig) -> None:
    """Check every constraint; the error names the offending key."""
    _require(config.task in TASKS, "task", f"must be one of {', '.join(TASKS)}")
    _require(config.variant in VARIANTS, "variant", f"must be one of {', '.join(VARIANTS)}")
    _require(config.steps >= 0, "steps", "must be non-negative")
    _require(config.lr >= 0 and math.isfinite(config.lr), "lr", "must be a non-negative number")
    _require(config.batch_size >= 1, "batch_size", "must be at least 1")
    _require(config.eval_interval >= 1, "eval_interval", "must be at least 1")

    m = config.model
    _require(m.K >= 1, "model.K", "must be at least 1")
    _require(m.D >= 1, "model.D", "must be at least 1")
    _require(m.eps > 0, "model.eps", "must be positive")
    if m.encoder_radius is not None:
        _require(m.encoder_radius >= 0, "model.encoder_radius", "must be non-negative")
    _require(m.feature_dim >= 1, "model.feature_dim", "must be at least 1")
    for name in HIDDEN_FIELDS:
        _require(all(s >= 1 for s in getattr(m, name)), f"model.{name}", "sizes must be positive")

    mix = config.mixup
    if config.variant == "MU":
        _require(mix.alpha > 0, "mixup.alpha", "must be positive for the MU variant")
    _require(mix.switch_threshold > 0, "mixup.switch_threshold", "must be positive")
    _require(0 <= mix.ema_momentum < 1, "mixup.ema_momentum", "must lie in [0, 1)")

    d = config.data
    _require(d.n_domains >= 1, "data.n_domains", "must be at least 1")
    _require(d.n_classes >= 1, "data.n_classes", "must be at least 1")
    _require(d.n_per >= 1, "data.n_per", "must be at least 1")
    _require(d.separation > 0, "data.separation", "must be positive")
    _require(d.input_dim >= 1, "data.input_dim", "must be at least 1")
    _require(0 < d.train_fraction <= 1, "data.train_fraction", "must lie in (0, 1]")
    _require(
        0 < d.domain_label_fraction <= 1, "data.domain_label_fraction", "must lie in (0, 1]"
    )
    if config.task == "synthetic_dg" and d.dataset_path is None:
        _require(
            all(0 <= m_ < d.n_domains for m_ in d.test_domains),
            "data.test_domains",
            f"must be domain ids below data.n_domains={d.n_domains}",
        )
        _require(
            len(set(d.test_domains)) < d.n_domains,
            "data.test_domains",
            "must leave at least one training domain",
        )
    if config.task == "toy_regression":
        _require(not d.test_domains, "data.test_domains", "is not supported for toy_regression")

    # builds and checks every weight
    weights = config.loss_weights()
    if weights.lambda_ad > 0:
        _require(
            config.task_type == "classification",
            "loss.lambda_ad",
            "the class-adversarial loss needs a classification task",
        )
    if weights.lambda_d > 0 and config.task == "synthetic_dg" and d.dataset_path is None:
        n_train_domains = d.n_domains - len(set(d.test_domains))
        _require(
            n_train_domains <= m.K,
            "loss.lambda_d",
            f"{n_train_domains} labeled domains need at least as many experts (model.K={m.K})",
        )


@dataclass
class RngStreams:
    """Independent generators so changing one component does not perturb the others."""

    init: np.random.Generator
    data: np.random.Generator
    split: np.random.Generator
    shuffle: np.random.Generator
    mixup: np.random.Generator


def rng_streams(seed: int) -> RngStreams:
    return RngStreams(
        **{
            name: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
            for i, name in enumerate(STREAM_NAMES)
        }
    )


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------


@dataclass
class ExperimentData:
    """The full dataset and its train, validation and held-out test parts."""

    full: Dataset
    train: Dataset
    val: Dataset
    test: Dataset | None = None


def generate_dataset(config: ExperimentConfig, rng: np.random.Generator) -> Dataset:
    """Read ``data.dataset_path`` when set, otherwise generate the task's dataset."""
    d = config.data
    if d.dataset_path is not None:
        return read_dataset(d.dataset_path, config.task_type)
    if config.task == "toy_regression":
        return gen_toy_regression(rng)
    return gen_synthetic_domains(
        d.n_domains, d.n_classes, d.n_per, d.separation, rng, input_dim=d.input_dim
    )


def prepare_data(config: ExperimentConfig, streams: RngStreams) -> ExperimentData:
    """Hold out test domains, then split the rest per domain.

    With ``data.train_fraction == 1`` the training set doubles as validation set.
    """
    full = generate_dataset(config, streams.data)
    full.require_nonempty()
    pool, test = full, None
    if config.data.test_domains:
        pool, test = holdout_domains(full, config.data.test_domains)
    if config.data.train_fraction >= 1.0:
        return ExperimentData(full=full, train=pool, val=pool, test=test)
    train, val = split_train_val(
        pool, SplitSpec(config.data.train_fraction, config.seed), rng=streams.split
    )
    return ExperimentData(full=full, train=train, val=val, test=test)
