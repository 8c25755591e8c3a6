"""Embedding space, distance-based gate, entropy-scheduled routing and load balancing."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, ContractError, DimensionError

logger = logging.getLogger(__name__)

DEFAULT_GATE_EPS = 1e-8

# floor applied to probabilities inside logarithms
PROB_FLOOR = 1e-12


@dataclass
class EmbeddingSpace:
    """K learnable D-dimensional vectors stored as one [K x D] parameter."""

    vectors: Tensor

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ConfigurationError(f"embedding space must be [K x D], got {self.vectors.shape}")

    @classmethod
    def initialize(cls, K: int, D: int, rng: np.random.Generator) -> "EmbeddingSpace":
        """Standard-normal initialisation."""
        if K < 1 or D < 1:
            raise ConfigurationError(f"embedding space needs K >= 1 and D >= 1, got K={K} D={D}")
        return cls(Tensor.parameter(rng.standard_normal((K, D)), name="embeddings"))

    @property
    def K(self) -> int:
        return self.vectors.shape[0]

    @property
    def D(self) -> int:
        return self.vectors.shape[1]

    def vector(self, k: int) -> Tensor:
        return self.vectors[k]


@dataclass
class GateDistribution:
    """Per-example gate values ``p``, distances ``d`` and scores ``s``, all [batch x K]."""

    p: Tensor
    d: Tensor
    s: Tensor

    @property
    def K(self) -> int:
        return self.p.shape[1]

    def __len__(self) -> int:
        return self.p.shape[0]


@dataclass
class ImportanceVector:
    """Per-expert summed gate mass ``I`` of one batch and its normalisation ``P``."""

    I: np.ndarray  # noqa: E741
    P: np.ndarray

    @property
    def ratio(self) -> float:
        """max(I) / min(I); infinite when an expert receives no mass at all."""
        low = float(self.I.min())
        return float("inf") if low <= 0 else float(self.I.max()) / low


def _check_progress(pct_tr: float) -> None:
    if not 0.0 <= pct_tr <= 1.0:
        raise ContractError(f"training progress must lie in [0, 1], got {pct_tr}")


def gamma_en(pct_tr: float) -> float:
    """Entropy weight: rises linearly to 1 over the first half of training, then stays."""
    _check_progress(pct_tr)
    return min(2.0 * pct_tr, 1.0)


def lambda_grl(pct_tr: float) -> float:
    _check_progress(pct_tr)
    return 2.0 / (1.0 + math.exp(-10.0 * pct_tr)) - 1.0


@dataclass(frozen=True)
class ScheduleState:
    pct_tr: float
    gamma_en: float
    lambda_grl: float

    @classmethod
    def at(cls, pct_tr: float) -> "ScheduleState":
        return cls(pct_tr=pct_tr, gamma_en=gamma_en(pct_tr), lambda_grl=lambda_grl(pct_tr))


def gate_values(v, E: EmbeddingSpace, eps: float = DEFAULT_GATE_EPS) -> GateDistribution:
    """p = softmax(-log(||v - e_k||^2 + eps)) over the K embedding vectors."""
    if eps <= 0:
        raise ContractError(f"gate eps must be positive, got {eps}")
    v = ad.as_tensor(v)
    if v.ndim != 2 or v.shape[1] != E.D:
        raise DimensionError(f"encoder output {v.shape} does not match embedding dimension {E.D}")
    batch = v.shape[0]
    diff = v.reshape(batch, 1, E.D) - E.vectors.reshape(1, E.K, E.D)
    d2 = ad.reduce_sum(ad.square(diff), axis=-1)
    s = ad.neg(ad.log(d2 + eps))
    p = ad.softmax(s, axis=-1)
    d = Tensor(np.sqrt(d2.data))
    return GateDistribution(p=p, d=d, s=s)


def entropy_loss(g: GateDistribution) -> Tensor:
    """Batch mean of the Shannon entropy (nats) of each gate row."""
    p = g.p
    plogp = p * ad.log(ad.clamp_min(p, PROB_FLOOR))
    return ad.neg(ad.reduce_mean(ad.reduce_sum(plogp, axis=-1)))


def importance(g: GateDistribution) -> ImportanceVector:
    I = g.p.data.sum(axis=0)  # noqa: E741
    return ImportanceVector(I=I, P=I / I.sum())


def kl_balance(g: GateDistribution) -> Tensor:
    """KL(I / sum(I) || uniform) where I is the column sum of the gate matrix."""
    if len(g) < 1:
        raise ContractError("kl_balance needs at least one example")
    I = ad.reduce_sum(g.p, axis=0)  # noqa: E741
    P = I / ad.reduce_sum(I)
    return ad.reduce_sum(P * ad.log(ad.clamp_min(P, PROB_FLOOR) * float(g.K)))


def assign_cluster(g: GateDistribution) -> np.ndarray:
    """Argmax expert per example; ties go to the lowest index."""
    return np.argmax(g.p.data, axis=1)
