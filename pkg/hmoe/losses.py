"""Loss terms of the mixture and the weighted total objective."""

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, ContractError, DataError
from .gating import (
    PROB_FLOOR,
    GateDistribution,
    ScheduleState,
    assign_cluster,
    entropy_loss,
    kl_balance,
)
from .model import HMOEModel, ModelOutput
from .networks import grl, mlp_forward
from .records import LossComponents

logger = logging.getLogger(__name__)

VARIANTS = ("DL", "ND", "MU")

MODES = frozenset({"erm", "mixup"})

# domain index carried by examples whose domain label is unknown
UNLABELED = -1


@dataclass(frozen=True)
class LossWeights:
    lambda_y: float = 1.0
    lambda_en: float = 0.0
    lambda_kl: float = 0.0
    lambda_ad: float = 0.0
    lambda_d: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(
                    f"must be a finite non-negative number, got {value}", key=f"loss.{name}"
                )

    @classmethod
    def for_variant(cls, variant: str, task: str = "classification") -> "LossWeights":
        """Default weights: DL trains on domain labels, ND and MU discover domains."""
        if variant == "DL":
            return cls(lambda_y=1.0, lambda_d=1.0)
        if variant in ("ND", "MU"):
            lambda_ad = 0.1 if task == "classification" else 0.0
            return cls(lambda_y=1.0, lambda_en=1.0, lambda_kl=1.0, lambda_ad=lambda_ad)
        raise ConfigurationError(
            f"unknown variant '{variant}'. Must be one of: {', '.join(VARIANTS)}", key="variant"
        )

    def with_overrides(self, **overrides: float | None) -> "LossWeights":
        """Replace the given weights; ``None`` keeps the current value."""
        return replace(self, **{k: float(v) for k, v in overrides.items() if v is not None})

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass
class Batch:
    """Inputs ``x`` [batch x in], targets ``y`` and optional domain indices ``d``.

    ``y`` holds class indices for classification and real values ([batch] or
    [batch x C]) for regression. ``d`` uses -1 for examples without a domain label.
    """

    x: np.ndarray
    y: np.ndarray
    d: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=ad.DTYPE)
        self.y = np.asarray(self.y)
        if self.x.ndim != 2:
            raise DataError(f"batch inputs must be [batch x features], got {self.x.shape}")
        if len(self.x) == 0:
            raise DataError("batch is empty")
        if len(self.y) != len(self.x):
            raise DataError(f"batch has {len(self.x)} inputs but {len(self.y)} targets")
        if self.d is not None:
            self.d = np.asarray(self.d, dtype=np.int64)
            if len(self.d) != len(self.x):
                raise DataError(f"batch has {len(self.x)} inputs but {len(self.d)} domain labels")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def fully_labeled(self) -> bool:
        return self.d is not None and bool(np.all(self.d >= 0))

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(self.x[idx], self.y[idx], None if self.d is None else self.d[idx])


def task_loss(output: Tensor, y: Any, task: str) -> Tensor:
    """Cross-entropy on logits for classification, mean squared error for regression."""
    if task == "classification":
        return ad.cross_entropy(output, y)
    return ad.mse_loss(output, y)


def _targets(model: HMOEModel, y: np.ndarray) -> np.ndarray:
    """Targets as a float matrix that can be convexly combined."""
    if model.task == "classification":
        return ad.one_hot(y, model.arch.output_dim)
    return np.asarray(y, dtype=ad.DTYPE).reshape(len(y), model.arch.output_dim)


def erm_loss(model: HMOEModel, batch: Batch, forward: ModelOutput | None = None) -> Tensor:
    """Empirical risk of the MIX prediction."""
    forward = forward or model(batch.x)
    return task_loss(forward.output, batch.y, model.task)


def intra_domain_mixup_loss(
    model: HMOEModel,
    batch: Batch,
    alpha: float,
    rng: np.random.Generator,
    beta: float | None = None,
    partition: np.ndarray | None = None,
) -> Tensor:
    """Mixup restricted to examples sharing a (latent or labeled) domain.

    Each part of ``partition`` draws one ``beta ~ Beta(alpha, alpha)`` and mixes its
    examples with a shuffled copy of itself. The per-part risks are averaged with
    equal weight. ``beta`` forces the coefficient for every part.
    """
    if beta is None and alpha <= 0:
        raise ContractError(f"mixup alpha must be positive, got {alpha}")
    if partition is None:
        if batch.fully_labeled:
            partition = batch.d
        else:
            with ad.no_grad():
                partition = assign_cluster(model(batch.x).gate)
    partition = np.asarray(partition)
    if len(partition) != len(batch):
        raise DataError(f"partition of {len(partition)} ids for a batch of {len(batch)}")

    targets = _targets(model, batch.y)
    mixed_x, mixed_y, bounds = [], [], []
    start = 0
    for part in np.unique(partition):
        idx = np.flatnonzero(partition == part)
        perm = idx[rng.permutation(len(idx))]
        lam = float(rng.beta(alpha, alpha)) if beta is None else float(beta)
        mixed_x.append(lam * batch.x[idx] + (1.0 - lam) * batch.x[perm])
        mixed_y.append(lam * targets[idx] + (1.0 - lam) * targets[perm])
        bounds.append((start, start + len(idx)))
        start += len(idx)

    output = model(np.concatenate(mixed_x)).output
    y = np.concatenate(mixed_y)
    total = None
    for lo, hi in bounds:
        part_loss = task_loss(output[lo:hi], y[lo:hi], model.task)
        total = part_loss if total is None else total + part_loss
    return total / float(len(bounds))


def domain_loss(g: GateDistribution, d: np.ndarray, M_d: int) -> Tensor:
    """Cross-entropy of the gate rows against domain labels assigned to the first M_d experts.

    Rows with ``d == -1`` are ignored; a batch without labels contributes exactly 0.
    """
    if M_d > g.K:
        raise DataError(f"{M_d} labeled domains cannot be assigned to {g.K} experts")
    d = np.asarray(d, dtype=np.int64).reshape(-1)
    if len(d) != len(g):
        raise DataError(f"{len(d)} domain labels for {len(g)} gate rows")
    if np.any(d >= M_d) or np.any(d < UNLABELED):
        raise DataError(f"domain labels must lie in [0, {M_d}) or be {UNLABELED}")
    rows = np.flatnonzero(d != UNLABELED)
    if rows.size == 0:
        return Tensor(0.0)
    chosen = g.p[rows, d[rows]]
    return ad.neg(ad.reduce_mean(ad.log(ad.clamp_min(chosen, PROB_FLOOR))))


def adversarial_loss(
    model: HMOEModel, batch: Batch, lambda_grl: float, v: Tensor | None = None
) -> Tensor:
    """Class prediction from reversed encoder outputs.

    The adversary learns to predict y from v; the encoder receives the negated,
    ``lambda_grl``-scaled gradient and so learns to drop class information.
    """
    if model.task != "classification":
        raise ContractError("the class-adversarial loss needs a classification task")
    if model.adversary is None:
        raise ConfigurationError(
            "the model was built without an adversary", key="model.adversary_hidden"
        )
    v = model.encode(batch.x) if v is None else v
    return ad.cross_entropy(mlp_forward(model.adversary, grl(v, lambda_grl)), batch.y)


def total_loss(
    model: HMOEModel,
    batch: Batch,
    weights: LossWeights,
    sched: ScheduleState,
    mode: str = "erm",
    rng: np.random.Generator | None = None,
    alpha: float = 0.3,
    forward: ModelOutput | None = None,
    M_d: int | None = None,
) -> tuple[Tensor, LossComponents]:
    """Weighted sum of every active term plus the unweighted value of each term.

    L_en and L_kl are always evaluated for logging. L_ad and L_d are evaluated only
    when their weight is positive and log 0 otherwise. Terms with weight 0 do not
    enter the total.
    """
    if mode not in MODES:
        raise ContractError(f"unknown training mode '{mode}'")
    forward = forward or model(batch.x)

    if mode == "mixup":
        if rng is None:
            raise ContractError("mixup mode needs a random generator")
        partition = batch.d if batch.fully_labeled else assign_cluster(forward.gate)
        L_y = intra_domain_mixup_loss(model, batch, alpha, rng, partition=partition)
    else:
        L_y = erm_loss(model, batch, forward=forward)
    L_en = entropy_loss(forward.gate)
    L_kl = kl_balance(forward.gate)

    terms: list[tuple[float, Tensor]] = [
        (weights.lambda_y, L_y),
        (weights.lambda_en * sched.gamma_en, L_en),
        (weights.lambda_kl, L_kl),
    ]

    L_ad = L_d = None
    if weights.lambda_ad > 0:
        L_ad = adversarial_loss(model, batch, sched.lambda_grl, v=forward.v)
        terms.append((weights.lambda_ad, L_ad))
    if weights.lambda_d > 0:
        if batch.d is None:
            raise DataError("the domain loss is weighted but the batch carries no domain labels")
        L_d = domain_loss(forward.gate, batch.d, model.K if M_d is None else M_d)
        terms.append((weights.lambda_d, L_d))

    total = Tensor(0.0)
    for weight, term in terms:
        if weight > 0:
            total = total + term * weight

    components = LossComponents(
        L_y=L_y.item(),
        L_en=L_en.item(),
        L_kl=L_kl.item(),
        L_ad=0.0 if L_ad is None else L_ad.item(),
        L_d=0.0 if L_d is None else L_d.item(),
        total=total.item(),
    )
    return total, components
