"""Data models for training steps, run summaries and trace spans."""

import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any

LOSS_NAMES = ("L_y", "L_en", "L_kl", "L_ad", "L_d")

METRIC_COLUMNS = ("step", *LOSS_NAMES, "total", "mode", "val_metric")


@dataclass
class LossComponents:
    """Unweighted value of every loss term for one batch, plus the weighted total."""

    L_y: float = 0.0
    L_en: float = 0.0
    L_kl: float = 0.0
    L_ad: float = 0.0
    L_d: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in asdict(self).values())


@dataclass
class StepRecord:
    """One row of metrics.csv."""

    step: int
    L_y: float
    L_en: float
    L_kl: float
    L_ad: float
    L_d: float
    total: float
    mode: str  # erm, mixup
    val_metric: float | None = None  # only on validation steps

    @classmethod
    def from_components(
        cls, step: int, components: LossComponents, mode: str, val_metric: float | None = None
    ) -> "StepRecord":
        return cls(step=step, mode=mode, val_metric=val_metric, **components.to_dict())

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class RunSummary:
    """Contents of summary.json."""

    task: str
    variant: str
    steps: int
    config: dict[str, Any]
    final_losses: dict[str, float] = field(default_factory=dict)
    metrics: dict[str, dict[str, float]] = field(default_factory=dict)  # split -> metric -> value
    clustering: dict[str, Any] = field(default_factory=dict)
    switch_step: int | None = None
    importance_ratio: float | None = None
    min_embedding_distance: float | None = None
    finished_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class TraceSpan:
    """A finished span from the run, as written to trace_spans.jsonl."""

    trace_id: str
    span_id: str
    parent_span_id: str | None = None

    name: str = ""
    kind: str = "internal"

    # Unix seconds
    start_time: float = 0.0
    end_time: float = 0.0
    duration_ms: float = 0.0

    status: str = "success"  # success, error
    error_message: str | None = None

    input: dict[str, Any] | None = None
    output: Any | None = None

    attributes: dict[str, Any] = field(default_factory=dict)
    events: list[dict[str, Any]] = field(default_factory=list)

    service_name: str = "hmoe"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)
