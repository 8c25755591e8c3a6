"""MLPs, the hypernetwork, the functional classifier and the gradient reversal layer."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, ContractError, DimensionError

logger = logging.getLogger(__name__)

ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "silu": ad.silu,
    "relu": ad.relu,
    "sigmoid": ad.sigmoid,
}

INIT_MODES = frozenset({"standard", "hyperfan"})

# number of prior draws used to estimate the hypernetwork's last hidden activation scale
HYPERFAN_SAMPLE_ROWS = 512


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes (input, hidden..., output) and the activation used between layers."""

    layer_sizes: tuple[int, ...]
    activation: str = "silu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ConfigurationError(f"an MLP needs at least two layer sizes, got {sizes}")
        if any(s < 1 for s in sizes):
            raise ConfigurationError(f"layer sizes must be positive, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(
                f"unknown activation '{self.activation}'. "
                f"Must be one of: {', '.join(sorted(ACTIVATIONS))}"
            )

    @classmethod
    def build(cls, n_in: int, hidden: Sequence[int], n_out: int, activation: str = "silu"):
        return cls((n_in, *hidden, n_out), activation)

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def parameter_count(self) -> int:
        return sum(n_in * n_out + n_out for n_in, n_out in self.layer_shapes)

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation}


@dataclass
class NetworkInstance:
    """An MLP with stored parameters ``[W0, b0, W1, b1, ...]``; ``W`` is [in x out]."""

    spec: MlpSpec
    parameters: list[Tensor]
    name: str = "mlp"

    def __post_init__(self):
        expected = [s for n_in, n_out in self.spec.layer_shapes for s in ((n_in, n_out), (n_out,))]
        actual = [p.shape for p in self.parameters]
        if actual != expected:
            raise ConfigurationError(
                f"{self.name}: parameter shapes {actual} do not match spec {expected}"
            )

    @property
    def layers(self) -> list[tuple[Tensor, Tensor]]:
        return list(zip(self.parameters[0::2], self.parameters[1::2]))

    def __call__(self, x) -> Tensor:
        return mlp_forward(self, x)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.{i}": p.data.copy() for i, p in enumerate(self.parameters)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for i, p in enumerate(self.parameters):
            key = f"{self.name}.{i}"
            if key not in state:
                raise ConfigurationError(f"missing tensor '{key}' in checkpoint")
            if state[key].shape != p.shape:
                raise ConfigurationError(
                    f"tensor '{key}' has shape {state[key].shape}, expected {p.shape}"
                )
            p.data[...] = state[key]


@dataclass
class GeneratedWeights:
    """Flat classifier parameters produced by the hypernetwork.

    ``flat`` is [P] for a single expert or [batch x P] for per-example classifiers.
    Layout per classifier layer: weight [in x out] row-major, then bias [out].
    """

    flat: Tensor
    spec: MlpSpec = field(repr=False)

    def __post_init__(self):
        if self.flat.ndim not in (1, 2) or self.flat.shape[-1] != self.spec.parameter_count:
            raise ConfigurationError(
                f"generated weights of shape {self.flat.shape} do not fit a classifier "
                f"with {self.spec.parameter_count} parameters"
            )

    @property
    def batched(self) -> bool:
        return self.flat.ndim == 2

    def unpack(self) -> list[tuple[Tensor, Tensor]]:
        """Slice ``flat`` into per-layer (weight, bias) tensors that stay on the tape."""
        layers = []
        offset = 0
        lead = (self.flat.shape[0],) if self.batched else ()
        for n_in, n_out in self.spec.layer_shapes:
            w_end = offset + n_in * n_out
            b_end = w_end + n_out
            if self.batched:
                w = self.flat[:, offset:w_end].reshape(*lead, n_in, n_out)
                b = self.flat[:, w_end:b_end]
            else:
                w = self.flat[offset:w_end].reshape(n_in, n_out)
                b = self.flat[w_end:b_end]
            layers.append((w, b))
            offset = b_end
        return layers


def pack_parameters(parameters: Sequence[Tensor]) -> np.ndarray:
    """Concatenate ``[W0, b0, W1, b1, ...]`` into the GeneratedWeights layout."""
    return np.concatenate([np.asarray(p.data).reshape(-1) for p in parameters])


def unpack_parameters(flat: np.ndarray, spec: MlpSpec) -> list[np.ndarray]:
    flat = np.asarray(flat, dtype=ad.DTYPE)
    if flat.shape != (spec.parameter_count,):
        raise ConfigurationError(
            f"flat vector of shape {flat.shape} does not fit {spec.parameter_count} parameters"
        )
    out = []
    offset = 0
    for n_in, n_out in spec.layer_shapes:
        out.append(flat[offset : offset + n_in * n_out].reshape(n_in, n_out).copy())
        offset += n_in * n_out
        out.append(flat[offset : offset + n_out].copy())
        offset += n_out
    return out


def _apply_layers(x: Tensor, layers: list[tuple[Tensor, Tensor]], activation: str) -> Tensor:
    act = ACTIVATIONS[activation]
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        x = ad.matmul(x, w) + b
        if i < last:
            x = act(x)
    return x


def _check_input(x: Tensor, spec: MlpSpec, what: str) -> None:
    if x.ndim != 2 or x.shape[1] != spec.input_size:
        raise DimensionError(
            f"{what}: expected input [batch x {spec.input_size}], got {x.shape}"
        )


def mlp_forward(net: NetworkInstance, x) -> Tensor:
    """Affine + activation composition over ``x`` of shape [batch x in]."""
    x = ad.as_tensor(x)
    _check_input(x, net.spec, net.name)
    return _apply_layers(x, net.layers, net.spec.activation)


def functional_classifier_apply(z, theta: GeneratedWeights, spec: MlpSpec) -> Tensor:
    """Run the classifier ``spec`` on ``z`` with externally supplied parameters.

    With a flat [P] ``theta`` every row of ``z`` shares one classifier and the math
    is exactly ``mlp_forward``. With [batch x P] each row gets its own classifier.
    """
    z = ad.as_tensor(z)
    if theta.spec.parameter_count != spec.parameter_count:
        raise ConfigurationError(
            f"theta holds {theta.spec.parameter_count} parameters, "
            f"classifier needs {spec.parameter_count}"
        )
    _check_input(z, spec, "functional classifier")
    layers = theta.unpack()
    if not theta.batched:
        return _apply_layers(z, layers, spec.activation)

    batch = z.shape[0]
    if theta.flat.shape[0] != batch:
        raise DimensionError(
            f"per-example weights for {theta.flat.shape[0]} rows applied to {batch} rows"
        )
    act = ACTIVATIONS[spec.activation]
    last = len(layers) - 1
    h = z
    for i, (w, b) in enumerate(layers):
        h = ad.matmul(h.reshape(batch, 1, -1), w).reshape(batch, w.shape[-1]) + b
        if i < last:
            h = act(h)
    return h


def hypernetwork_generate(f_h: NetworkInstance, e, classifier_spec: MlpSpec) -> GeneratedWeights:
    """Map an embedding ``e`` ([D] or [batch x D]) to classifier weights."""
    if f_h.spec.output_size != classifier_spec.parameter_count:
        raise ConfigurationError(
            f"hypernetwork emits {f_h.spec.output_size} values but the classifier has "
            f"{classifier_spec.parameter_count} parameters"
        )
    e = ad.as_tensor(e)
    if e.ndim == 1:
        if e.shape[0] != f_h.spec.input_size:
            raise DimensionError(
                f"embedding of size {e.shape[0]} fed to a hypernetwork expecting "
                f"{f_h.spec.input_size}"
            )
        flat = mlp_forward(f_h, e.reshape(1, -1)).reshape(classifier_spec.parameter_count)
    else:
        flat = mlp_forward(f_h, e)
    return GeneratedWeights(flat=flat, spec=classifier_spec)


def grl(v, lambda_grl: float) -> Tensor:
    """Gradient reversal: identity forward, ``-lambda_grl`` times the gradient backward."""
    if lambda_grl < 0:
        raise ContractError(f"lambda_grl must be non-negative, got {lambda_grl}")
    v = ad.as_tensor(v)
    scale = -float(lambda_grl)
    return ad.record_op("grl", v.data.copy(), (v,), lambda g: (scale * g,))


def bound_norm(u, radius: float) -> Tensor:
    """Smooth radial cap: ``u / sqrt(1 + |u|^2 / radius^2)`` row-wise.

    Keeps the direction of every row, is close to the identity for ``|u| << radius``
    and never exceeds ``radius`` in norm.
    """
    if radius <= 0:
        raise ContractError(f"radius must be positive, got {radius}")
    u = ad.as_tensor(u)
    if u.ndim != 2:
        raise DimensionError(f"bound_norm expects [batch x D], got {u.shape}")
    sq = ad.reduce_sum(ad.square(u), axis=1, keepdims=True)
    inv = ad.exp(-0.5 * ad.log(1.0 + sq / (radius * radius)))
    return u * inv


def _he_layer(rng: np.random.Generator, n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
    return w, np.zeros(n_out)


def hyperfan_target_variance(target: MlpSpec) -> np.ndarray:
    """Desired variance of every generated parameter, in GeneratedWeights layout.

    Weights of a target layer aim at ``2 / fan_in`` and biases at ``1 / (2 * fan_in)``.
    """
    parts = []
    for n_in, n_out in target.layer_shapes:
        parts.append(np.full(n_in * n_out, 2.0 / n_in))
        parts.append(np.full(n_out, 1.0 / (2.0 * n_in)))
    return np.concatenate(parts)


def init_network(
    spec: MlpSpec,
    rng: np.random.Generator,
    mode: str = "standard",
    target: MlpSpec | None = None,
    name: str = "mlp",
) -> NetworkInstance:
    """Create a NetworkInstance with He-normal weights and zero biases.

    ``mode="hyperfan"`` rescales the output layer of a hypernetwork so that the
    weights it generates from standard-normal embeddings have the variance a
    He-initialised ``target`` layer would have.
    """
    if mode not in INIT_MODES:
        raise ConfigurationError(f"unknown init mode '{mode}'")
    arrays: list[np.ndarray] = []
    for n_in, n_out in spec.layer_shapes:
        arrays.extend(_he_layer(rng, n_in, n_out))

    if mode == "hyperfan":
        if target is None:
            raise ConfigurationError("hyperfan init needs the target classifier spec")
        if spec.output_size != target.parameter_count:
            raise ConfigurationError(
                f"hypernetwork output {spec.output_size} != target parameter count "
                f"{target.parameter_count}"
            )
        hidden = [Tensor(a) for a in arrays[:-2]]
        sample = Tensor(rng.standard_normal((HYPERFAN_SAMPLE_ROWS, spec.input_size)))
        with ad.no_grad():
            h = _apply_layers(sample, list(zip(hidden[0::2], hidden[1::2])), spec.activation)
            if len(hidden):
                h = ACTIVATIONS[spec.activation](h)
        fan_in = spec.layer_sizes[-2]
        second_moment = float(np.mean(h.data**2))
        variance = hyperfan_target_variance(target) / (fan_in * max(second_moment, 1e-12))
        arrays[-2] = rng.standard_normal((fan_in, spec.output_size)) * np.sqrt(variance)
        logger.debug(
            f"{name}: hyperfan init, last hidden second moment {second_moment:.4f}"
        )

    parameters = [Tensor.parameter(a, name=f"{name}.{i}") for i, a in enumerate(arrays)]
    return NetworkInstance(spec=spec, parameters=parameters, name=name)
