"""Adam optimizer with bias correction."""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .errors import DimensionError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment accumulators and hyperparameters of one Adam optimizer."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_parameters(cls, params: Sequence[Tensor], **hyper: float) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
            **hyper,
        )


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place and advance ``state.step_count``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionError(
            f"adam_step: {len(params)} params, {len(grads)} grads, "
            f"{len(state.first_moment)} moment slots"
        )

    state.step_count += 1
    bc1 = 1.0 - state.beta1**state.step_count
    bc2 = 1.0 - state.beta2**state.step_count
    step_size = state.lr / bc1

    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"adam_step: gradient {g.shape} does not match {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= step_size * m / (np.sqrt(v / bc2) + state.eps)


class Adam:
    """Stateful wrapper that owns a parameter list and its ``AdamState``."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.state = AdamState.for_parameters(self.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step(self.params, grads, self.state)
