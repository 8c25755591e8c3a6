"""The assembled mixture: featurizer, D2V encoder, hypernetwork, embeddings and adversary."""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError
from .gating import DEFAULT_GATE_EPS, EmbeddingSpace, GateDistribution, gate_values
from .networks import (
    GeneratedWeights,
    MlpSpec,
    NetworkInstance,
    bound_norm,
    functional_classifier_apply,
    hypernetwork_generate,
    init_network,
    mlp_forward,
)

logger = logging.getLogger(__name__)

TASKS = frozenset({"regression", "classification"})

CHECKPOINT_FORMAT = "hmoe-checkpoint-v1"

HIDDEN_FIELDS = (
    "featurizer_hidden",
    "encoder_hidden",
    "classifier_hidden",
    "hypernetwork_hidden",
    "adversary_hidden",
)


@dataclass(frozen=True)
class Architecture:
    """Shapes of every network in the mixture."""

    task: str
    input_dim: int
    output_dim: int
    K: int = 3
    D: int = 8
    feature_dim: int = 32
    featurizer_hidden: tuple[int, ...] = (32, 32)
    encoder_hidden: tuple[int, ...] = (32, 32)
    classifier_hidden: tuple[int, ...] = (32,)
    hypernetwork_hidden: tuple[int, ...] = (32, 32, 32)
    adversary_hidden: tuple[int, ...] | None = None
    activation: str = "silu"
    adversary_activation: str = "relu"
    eps: float = DEFAULT_GATE_EPS
    hyperfan: bool = True
    # None leaves the encoder output unbounded
    encoder_radius: float | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task type '{self.task}'", key="task")
        if self.K < 1:
            raise ConfigurationError("K must be at least 1", key="model.K")
        if self.D < 1:
            raise ConfigurationError("D must be at least 1", key="model.D")
        if self.eps <= 0:
            raise ConfigurationError("eps must be positive", key="model.eps")
        if self.encoder_radius is not None and self.encoder_radius <= 0:
            raise ConfigurationError(
                "encoder_radius must be positive", key="model.encoder_radius"
            )
        for name in HIDDEN_FIELDS:
            sizes = getattr(self, name)
            if sizes is not None:
                object.__setattr__(self, name, tuple(int(s) for s in sizes))

    @property
    def featurizer_spec(self) -> MlpSpec:
        return MlpSpec.build(
            self.input_dim, self.featurizer_hidden, self.feature_dim, self.activation
        )

    @property
    def encoder_spec(self) -> MlpSpec:
        return MlpSpec.build(self.input_dim, self.encoder_hidden, self.D, self.activation)

    @property
    def classifier_spec(self) -> MlpSpec:
        return MlpSpec.build(
            self.feature_dim, self.classifier_hidden, self.output_dim, self.activation
        )

    @property
    def hypernetwork_spec(self) -> MlpSpec:
        return MlpSpec.build(
            self.D, self.hypernetwork_hidden, self.classifier_spec.parameter_count, self.activation
        )

    @property
    def adversary_spec(self) -> MlpSpec | None:
        if self.adversary_hidden is None:
            return None
        return MlpSpec.build(
            self.D, self.adversary_hidden, self.output_dim, self.adversary_activation
        )

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Architecture":
        data = dict(data)
        for key in HIDDEN_FIELDS:
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigurationError(f"checkpoint architecture is not recognised: {e}") from e


@dataclass
class ModelOutput:
    """Everything one forward pass produces; ``expert_outputs`` is [batch x K x C]."""

    z: Tensor
    v: Tensor
    gate: GateDistribution
    expert_outputs: Tensor
    output: Tensor


@dataclass
class HMOEModel:
    arch: Architecture
    featurizer: NetworkInstance
    encoder: NetworkInstance
    hypernetwork: NetworkInstance
    embeddings: EmbeddingSpace
    adversary: NetworkInstance | None = None
    classifier_spec: MlpSpec = field(init=False)

    def __post_init__(self):
        self.classifier_spec = self.arch.classifier_spec

    @classmethod
    def build(cls, arch: Architecture, rng: np.random.Generator) -> "HMOEModel":
        featurizer = init_network(arch.featurizer_spec, rng, name="featurizer")
        encoder = init_network(arch.encoder_spec, rng, name="encoder")
        hypernetwork = init_network(
            arch.hypernetwork_spec,
            rng,
            mode="hyperfan" if arch.hyperfan else "standard",
            target=arch.classifier_spec,
            name="hypernetwork",
        )
        embeddings = EmbeddingSpace.initialize(arch.K, arch.D, rng)
        adversary = None
        if arch.adversary_spec is not None:
            adversary = init_network(arch.adversary_spec, rng, name="adversary")
        model = cls(arch, featurizer, encoder, hypernetwork, embeddings, adversary)
        logger.debug(f"Built model with {model.parameter_count()} parameters")
        return model

    @property
    def task(self) -> str:
        return self.arch.task

    @property
    def K(self) -> int:
        return self.embeddings.K

    def networks(self) -> list[NetworkInstance]:
        nets = [self.featurizer, self.encoder, self.hypernetwork]
        if self.adversary is not None:
            nets.append(self.adversary)
        return nets

    def named_parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for net in self.networks():
            for i, p in enumerate(net.parameters):
                named[f"{net.name}.{i}"] = p
        named["embeddings"] = self.embeddings.vectors
        return named

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    # forward

    def expert_weights(self) -> GeneratedWeights:
        """Weights of all K experts as one [K x P] block."""
        return hypernetwork_generate(
            self.hypernetwork, self.embeddings.vectors, self.classifier_spec
        )

    def expert_outputs(self, z: Tensor, weights: GeneratedWeights | None = None) -> Tensor:
        weights = weights or self.expert_weights()
        spec = self.classifier_spec
        outputs = [
            functional_classifier_apply(z, GeneratedWeights(flat=weights.flat[k], spec=spec), spec)
            for k in range(self.K)
        ]
        return ad.stack(outputs, axis=1)

    def encode(self, x) -> Tensor:
        v = mlp_forward(self.encoder, x)
        if self.arch.encoder_radius is not None:
            v = bound_norm(v, self.arch.encoder_radius)
        return v

    def forward(self, x) -> ModelOutput:
        x = ad.as_tensor(x)
        z = mlp_forward(self.featurizer, x)
        v = self.encode(x)
        gate = gate_values(v, self.embeddings, self.arch.eps)
        experts = self.expert_outputs(z)
        batch = x.shape[0]
        mixed = ad.reduce_sum(gate.p.reshape(batch, self.K, 1) * experts, axis=1)
        return ModelOutput(z=z, v=v, gate=gate, expert_outputs=experts, output=mixed)

    __call__ = forward

    # checkpoint

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters().items():
            if name not in state:
                raise ConfigurationError(f"checkpoint is missing tensor '{name}'")
            if state[name].shape != p.shape:
                raise ConfigurationError(
                    f"checkpoint tensor '{name}' has shape {state[name].shape}, expected {p.shape}"
                )
            p.data[...] = state[name]

    def save(self, path: str | Path, metadata: dict[str, Any] | None = None) -> Path:
        """Write every parameter plus the architecture to an ``.npz`` file."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {"format": CHECKPOINT_FORMAT, "architecture": self.arch.to_dict()}
        if metadata:
            header["metadata"] = metadata
        with path.open("wb") as fh:
            encoded = np.array(json.dumps(header, sort_keys=True))
            np.savez(fh, __header__=encoded, **self.state_dict())
        logger.info(f"💾 Checkpoint written to {path}")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "HMOEModel":
        path = Path(path)
        try:
            archive = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as e:
            raise ConfigurationError(f"cannot read checkpoint {path}: {e}") from e
        with archive:
            if "__header__" not in archive.files:
                raise ConfigurationError(f"{path} is not an hmoe checkpoint")
            header = json.loads(str(archive["__header__"]))
            if header.get("format") != CHECKPOINT_FORMAT:
                raise ConfigurationError(
                    f"unsupported checkpoint format '{header.get('format')}' in {path}"
                )
            state = {name: archive[name] for name in archive.files if name != "__header__"}
        arch = Architecture.from_dict(header["architecture"])
        model = cls.build(arch, np.random.default_rng(0))
        model.load_state_dict(state)
        return model


def load_checkpoint_metadata(path: str | Path) -> dict[str, Any]:
    with np.load(Path(path), allow_pickle=False) as archive:
        header = json.loads(str(archive["__header__"]))
    return header.get("metadata", {})
