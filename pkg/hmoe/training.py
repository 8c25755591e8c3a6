"""Training loop: schedules, the ERM to mixup switch and the three variants."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset, domain_index, mask_domain_labels
from .errors import ConfigurationError, MathDomainError, TrainingAbortedError
from .experiment import ExperimentConfig, RngStreams, rng_streams
from .gating import ImportanceVector, ScheduleState, importance
from .inference import evaluate, primary_metric
from .losses import VARIANTS, Batch, total_loss
from .model import HMOEModel
from .optim import Adam
from .records import LossComponents, StepRecord
from .tracing import add_span_attribute, add_span_event, observe, trace_context

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VariantConfig:
    """Which of DL, ND or MU is trained, and how MU switches to mixup."""

    variant: str = "ND"
    K: int = 3
    mixup_alpha: float = 0.3
    switch_threshold: float = 0.1
    ema_momentum: float = 0.9

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                f"unknown variant '{self.variant}'. Must be one of: {', '.join(VARIANTS)}",
                key="variant",
            )
        if self.variant == "MU" and self.mixup_alpha <= 0:
            raise ConfigurationError("must be positive for the MU variant", key="mixup.alpha")

    @classmethod
    def from_experiment(cls, config: ExperimentConfig) -> "VariantConfig":
        return cls(
            variant=config.variant,
            K=config.model.K,
            mixup_alpha=config.mixup.alpha,
            switch_threshold=config.mixup.switch_threshold,
            ema_momentum=config.mixup.ema_momentum,
        )

    @property
    def uses_domain_labels(self) -> bool:
        return self.variant == "DL"


class MixupSwitch:
    """Latches into mixup mode once the smoothed entropy loss drops below a threshold.

    The smoothed value is an exponential moving average seeded with the first
    observation. Only MU ever switches.
    """

    def __init__(self, enabled: bool, threshold: float = 0.1, momentum: float = 0.9):
        self.enabled = enabled
        self.threshold = threshold
        self.momentum = momentum
        self.ema: float | None = None
        self.switch_step: int | None = None

    @property
    def mode(self) -> str:
        return "mixup" if self.switch_step is not None else "erm"

    def update(self, L_en: float, step: int) -> bool:
        """Feed one batch entropy; returns True on the step the switch happens."""
        if self.ema is None:
            self.ema = L_en
        else:
            self.ema = self.momentum * self.ema + (1.0 - self.momentum) * L_en
        if self.enabled and self.switch_step is None and self.ema < self.threshold:
            self.switch_step = step
            return True
        return False


@dataclass
class TrainingResult:
    model: HMOEModel
    history: list[StepRecord] = field(default_factory=list)
    switch_step: int | None = None
    final_components: LossComponents | None = None
    last_importance: ImportanceVector | None = None

    @property
    def steps(self) -> int:
        return len(self.history)

    def modes(self) -> list[str]:
        return [r.mode for r in self.history]


def _snapshot(
    model: HMOEModel, step: int, mode: str, components: LossComponents | None, reason: str
) -> dict:
    norms = {name: float(np.linalg.norm(p.data)) for name, p in model.named_parameters().items()}
    return {
        "step": step,
        "mode": mode,
        "reason": reason,
        "components": components.to_dict() if components is not None else None,
        "parameter_norms": norms,
    }


def training_domain_labels(
    config: ExperimentConfig, train: Dataset, rng: np.random.Generator
) -> tuple[np.ndarray | None, int]:
    """Domain labels visible to the domain loss (-1 where hidden) and their count M_d."""
    weights = config.loss_weights()
    if weights.lambda_d == 0:
        return None, 0
    labels = train.d
    if config.data.domain_label_fraction < 1.0:
        labels = mask_domain_labels(labels, config.data.domain_label_fraction, rng)
    labels, M_d = domain_index(labels)
    if M_d > config.model.K:
        raise ConfigurationError(
            f"{M_d} labeled domains need at least as many experts (model.K={config.model.K})",
            key="loss.lambda_d",
        )
    return labels, M_d


@observe(name="run_training")
def run_training(
    config: ExperimentConfig,
    train: Dataset,
    val: Dataset | None = None,
    streams: RngStreams | None = None,
    model: HMOEModel | None = None,
) -> TrainingResult:
    """Train a mixture on ``train`` for ``config.steps`` Adam updates.

    Step ``t`` (0-based) runs with training progress ``t / steps``; records carry the
    1-based step. Batches are drawn uniformly with replacement. Validation runs every
    ``eval_interval`` steps and after the last one.
    """
    train.require_nonempty("training set")
    streams = streams or rng_streams(config.seed)
    variant = VariantConfig.from_experiment(config)
    weights = config.loss_weights()
    domain_labels, M_d = training_domain_labels(config, train, streams.split)

    if model is None:
        arch = config.architecture(train.input_dim, train.output_dim)
        model = HMOEModel.build(arch, streams.init)
    params = model.parameters()
    optimizer = Adam(params, lr=config.lr)
    switch = MixupSwitch(
        enabled=variant.variant == "MU",
        threshold=variant.switch_threshold,
        momentum=variant.ema_momentum,
    )
    metric_name = primary_metric(model)
    result = TrainingResult(model=model)

    add_span_attribute("hmoe.variant", variant.variant)
    add_span_attribute("hmoe.steps", config.steps)
    logger.info(
        f"🚀 Training {variant.variant} on {config.task}: {len(train)} examples, "
        f"{model.parameter_count()} parameters, {config.steps} steps"
    )

    for t in range(config.steps):
        step = t + 1
        sched = ScheduleState.at(t / config.steps)
        mode = switch.mode
        idx = streams.shuffle.integers(0, len(train), size=config.batch_size)
        batch = Batch(
            x=train.x[idx], y=train.y[idx], d=None if domain_labels is None else domain_labels[idx]
        )

        optimizer.zero_grad()
        try:
            with ad.Tape() as tape:
                forward = model(batch.x)
                loss, components = total_loss(
                    model,
                    batch,
                    weights,
                    sched,
                    mode=mode,
                    rng=streams.mixup,
                    alpha=variant.mixup_alpha,
                    forward=forward,
                    M_d=M_d or None,
                )
        except MathDomainError as e:
            snapshot = _snapshot(model, step, mode, None, str(e))
            logger.error(f"Training aborted at step {step}: {e}; snapshot={snapshot}")
            raise TrainingAbortedError(f"numerical failure at step {step}: {e}", snapshot) from e

        if not components.is_finite():
            snapshot = _snapshot(model, step, mode, components, "non-finite loss")
            logger.error(f"Training aborted at step {step}: non-finite loss; snapshot={snapshot}")
            raise TrainingAbortedError(f"non-finite loss at step {step}", snapshot)

        ad.backward(tape, loss, params)
        optimizer.step()

        if switch.update(components.L_en, step):
            logger.info(
                f"🔀 Switched to intra-domain mixup at step {step} (L_en EMA {switch.ema:.4f})"
            )
            add_span_event("mixup_switch", {"step": step})

        val_metric = None
        due = step % config.eval_interval == 0 or step == config.steps
        if due and val is not None and len(val):
            with trace_context("validation", attributes={"step": step}):
                val_metric = evaluate(model, val, "MIX")[metric_name]
            logger.info(
                f"step {step}/{config.steps} total={components.total:.4f} "
                f"L_en={components.L_en:.4f} mode={mode} val_{metric_name}={val_metric:.4f}"
            )
        logger.debug(f"step {step}: {components.to_dict()}")

        result.history.append(StepRecord.from_components(step, components, mode, val_metric))
        result.final_components = components
        result.last_importance = importance(forward.gate)

    result.switch_step = switch.switch_step
    if result.last_importance is not None:
        logger.info(
            f"✅ Training finished; final total={result.final_components.total:.4f}, "
            f"importance ratio={result.last_importance.ratio:.3f}"
        )
    return result

